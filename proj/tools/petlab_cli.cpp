// Command-line front end. Everything goes through the C API in petlab.h;
// process exit codes are the petlab_status values (0 = success).

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "petlab.h"

namespace {

struct ConfigHandle {
    petlab_config* ptr = nullptr;
    ~ConfigHandle() { petlab_config_free(ptr); }
};

struct ResultHandle {
    petlab_result* ptr = nullptr;
    ~ResultHandle() { petlab_result_free(ptr); }
};

int fail(petlab_status status) {
    std::fprintf(stderr, "error (%s): %s\n", petlab_status_name(status), petlab_last_error());
    return static_cast<int>(status);
}

int fail_usage(const std::string& message) {
    std::fprintf(stderr, "error (input): %s\n", message.c_str());
    return static_cast<int>(PETLAB_ERR_INPUT);
}

// Loads `path` (or an all-defaults config when empty) and applies key=value
// overrides in order.
int load_config(const std::string& path, const std::vector<std::string>& overrides,
                ConfigHandle& config) {
    const petlab_status loaded = path.empty()
                                     ? petlab_config_parse("{}", &config.ptr)
                                     : petlab_config_load(path.c_str(), &config.ptr);
    if (loaded != PETLAB_OK) return fail(loaded);
    for (const std::string& kv : overrides) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
            return fail_usage("--set expects key=value, got '" + kv + "'");
        const std::string key = kv.substr(0, eq);
        const std::string value = kv.substr(eq + 1);
        const petlab_status s = petlab_config_override(config.ptr, key.c_str(), value.c_str());
        if (s != PETLAB_OK) return fail(s);
    }
    return 0;
}

int print_result(const ResultHandle& result, const std::string& report_path) {
    char* text = nullptr;
    const petlab_status s = petlab_result_json(result.ptr, &text);
    if (s != PETLAB_OK) return fail(s);
    std::printf("%s\n", text);
    petlab_string_free(text);
    if (!report_path.empty()) {
        const petlab_status w = petlab_result_write(result.ptr, report_path.c_str());
        if (w != PETLAB_OK) return fail(w);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual-encoder retrieval fine-tuning workbench"};
    app.require_subcommand(1);
    app.set_version_flag("--version", []() { return std::string(petlab_version()); });

    int rc = 0;

    std::string config_path, report_path, checkpoint_path, out_dir;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;

    // ---- run ----
    auto* run = app.add_subcommand("run", "Train one configuration and report its metrics");
    run->add_option("--config", config_path, "Run configuration (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    run->add_option("--set", overrides, "Override a config key, e.g. --set optimizer.lr=0.001");
    auto* run_seed = run->add_option("--seed", seed, "Override the run seed");
    run->add_option("--out", out_dir, "Override output_dir");
    run->add_option("--checkpoint", checkpoint_path, "Save the selected model here");
    run->add_option("--report", report_path, "Also write the result JSON to this file");
    run->callback([&] {
        ConfigHandle config;
        std::vector<std::string> sets = overrides;
        if (*run_seed) sets.push_back("seed=" + std::to_string(seed));
        if (!out_dir.empty()) sets.push_back("output_dir=" + out_dir);
        if ((rc = load_config(config_path, sets, config)) != 0) return;
        ResultHandle result;
        const petlab_status s = petlab_train(
            config.ptr, checkpoint_path.empty() ? nullptr : checkpoint_path.c_str(), &result.ptr);
        if (s != PETLAB_OK) {
            rc = fail(s);
            return;
        }
        rc = print_result(result, report_path);
    });

    // ---- bench ----
    std::vector<std::string> bench_configs;
    auto* bench = app.add_subcommand("bench", "Run a sweep of configurations with k-fold reseeding");
    bench->add_option("--config", bench_configs, "Configuration file (repeatable)")
        ->required()
        ->check(CLI::ExistingFile);
    bench->add_option("--set", overrides, "Override applied to every configuration");
    bench->add_option("--out", out_dir, "Directory for results.csv / results.json")
        ->default_val("runs");
    bench->add_option("--report", report_path, "Also write the sweep JSON to this file");
    bench->callback([&] {
        std::vector<ConfigHandle> configs(bench_configs.size());
        std::vector<const petlab_config*> raw;
        for (std::size_t i = 0; i < bench_configs.size(); ++i) {
            if ((rc = load_config(bench_configs[i], overrides, configs[i])) != 0) return;
            raw.push_back(configs[i].ptr);
        }
        ResultHandle result;
        const petlab_status s =
            petlab_benchmark(raw.data(), raw.size(), out_dir.c_str(), &result.ptr);
        if (s != PETLAB_OK) {
            rc = fail(s);
            return;
        }
        std::fprintf(stderr, "report written under %s\n", out_dir.c_str());
        rc = print_result(result, report_path);
    });

    // ---- gradcheck ----
    double fd_step = 1e-5;
    double tolerance = 0.0;
    auto* gradcheck =
        app.add_subcommand("gradcheck", "Compare autodiff gradients with finite differences");
    gradcheck->add_option("--config", config_path, "Run configuration (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    gradcheck->add_option("--set", overrides, "Override a config key");
    gradcheck->add_option("--step", fd_step, "Finite-difference step")->default_val(1e-5);
    auto* tol_opt = gradcheck->add_option(
        "--tol", tolerance, "Fail (exit 4) when the max relative error exceeds this");
    gradcheck->callback([&] {
        ConfigHandle config;
        if ((rc = load_config(config_path, overrides, config)) != 0) return;
        double max_rel = 0.0;
        const petlab_status s = petlab_grad_check(config.ptr, fd_step, &max_rel);
        if (s != PETLAB_OK) {
            rc = fail(s);
            return;
        }
        std::printf("max relative error: %.6e\n", max_rel);
        if (*tol_opt && max_rel > tolerance) {
            std::fprintf(stderr, "error (numeric): gradient check exceeded tolerance %.3e\n",
                         tolerance);
            rc = static_cast<int>(PETLAB_ERR_NUMERIC);
        }
    });

    // ---- make-toy-data ----
    int classes = 8, per_class = 25, captions = 5, image_size = 16;
    double noise = 0.05;
    auto* toy = app.add_subcommand("make-toy-data",
                                   "Write a synthetic image-caption dataset to disk");
    toy->add_option("--out", out_dir, "Output directory")->required();
    toy->add_option("--config", config_path, "Start from this configuration")
        ->check(CLI::ExistingFile);
    toy->add_option("--set", overrides, "Override a config key");
    auto* o_classes = toy->add_option("--classes", classes, "Number of image classes");
    auto* o_per = toy->add_option("--per-class", per_class, "Images per class");
    auto* o_caps = toy->add_option("--captions", captions, "Captions per image");
    auto* o_size = toy->add_option("--image-size", image_size, "Square image size in pixels");
    auto* o_noise = toy->add_option("--noise", noise, "Pixel noise level");
    auto* o_seed = toy->add_option("--seed", seed, "Dataset seed");
    toy->callback([&] {
        ConfigHandle config;
        std::vector<std::string> sets;
        if (*o_classes) sets.push_back("dataset.toy.n_classes=" + std::to_string(classes));
        if (*o_per) sets.push_back("dataset.toy.items_per_class=" + std::to_string(per_class));
        if (*o_caps) sets.push_back("dataset.toy.captions_per_image=" + std::to_string(captions));
        if (*o_size) sets.push_back("dataset.toy.image_size=" + std::to_string(image_size));
        if (*o_noise) sets.push_back("dataset.toy.noise_std=" + std::to_string(noise));
        if (*o_seed) sets.push_back("dataset.toy.seed=" + std::to_string(seed));
        for (const std::string& kv : overrides) sets.push_back(kv);
        if ((rc = load_config(config_path, sets, config)) != 0) return;
        const petlab_status s = petlab_make_toy_data(config.ptr, out_dir.c_str());
        if (s != PETLAB_OK) {
            rc = fail(s);
            return;
        }
        std::printf("dataset written to %s\n", out_dir.c_str());
    });

    // ---- export-embeddings ----
    std::string split = "test", tag = "embeddings";
    auto* embed = app.add_subcommand("export-embeddings",
                                     "Encode a dataset split and write the vectors as CSV");
    embed->add_option("--config", config_path, "Run configuration (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    embed->add_option("--checkpoint", checkpoint_path, "Model checkpoint (default: fresh init)")
        ->check(CLI::ExistingFile);
    embed->add_option("--split", split, "train, val or test")->default_val("test");
    embed->add_option("--out", out_dir, "Output directory")->default_val("runs");
    embed->add_option("--tag", tag, "File name prefix")->default_val("embeddings");
    embed->add_option("--set", overrides, "Override a config key");
    embed->callback([&] {
        ConfigHandle config;
        if ((rc = load_config(config_path, overrides, config)) != 0) return;
        const petlab_status s = petlab_export_embeddings(
            config.ptr, checkpoint_path.empty() ? nullptr : checkpoint_path.c_str(),
            split.c_str(), out_dir.c_str(), tag.c_str());
        if (s != PETLAB_OK) {
            rc = fail(s);
            return;
        }
        std::printf("embeddings written to %s/%s_{images,captions}.csv\n", out_dir.c_str(),
                    tag.c_str());
    });

    CLI11_PARSE(app, argc, argv);
    return rc;
}
