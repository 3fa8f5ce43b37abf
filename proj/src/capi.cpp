#include "petlab.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "petlab/checkpoint.hpp"
#include "petlab/data.hpp"
#include "petlab/error.hpp"
#include "petlab/runner.hpp"

struct petlab_config {
    petlab::run::RunConfig cfg;
};

struct petlab_result {
    std::string json_text;
};

namespace {

thread_local std::string g_last_error;

petlab_status map_kind(petlab::ErrorKind kind) {
    switch (kind) {
        case petlab::ErrorKind::Input: return PETLAB_ERR_INPUT;
        case petlab::ErrorKind::Config: return PETLAB_ERR_CONFIG;
        case petlab::ErrorKind::Io: return PETLAB_ERR_IO;
        case petlab::ErrorKind::Numeric: return PETLAB_ERR_NUMERIC;
        case petlab::ErrorKind::Internal: return PETLAB_ERR_INTERNAL;
    }
    return PETLAB_ERR_INTERNAL;
}

template <typename F>
petlab_status guarded(F&& body) noexcept {
    try {
        body();
        g_last_error.clear();
        return PETLAB_OK;
    } catch (const petlab::Error& e) {
        g_last_error = e.what();
        return map_kind(e.kind());
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return PETLAB_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown failure";
        return PETLAB_ERR_INTERNAL;
    }
}

void require_arg(const void* p, const char* what) {
    if (!p) petlab::throw_input(std::string("null argument: ") + what);
}

char* copy_string(const std::string& text) {
    char* out = static_cast<char*>(std::malloc(text.size() + 1));
    if (!out) petlab::throw_internal("out of memory");
    std::memcpy(out, text.c_str(), text.size() + 1);
    return out;
}

const petlab::RetrievalSplit& pick_split(const petlab::data::PreparedDataset& prepared,
                                         const std::string& name) {
    if (name == "train") return prepared.train;
    if (name == "val") return prepared.val;
    if (name == "test") return prepared.test;
    petlab::throw_input("unknown split '" + name + "' (expected train, val or test)");
}

petlab::data::PreparedDataset prepare_from_config(const petlab::run::RunConfig& cfg) {
    // Reuses the training pipeline by running zero epochs worth of work:
    // the prepared dataset is what train() itself would see.
    if (cfg.dataset.source == "toy") {
        const petlab::data::ToyDataset toy = petlab::data::synthesize_toy_dataset(cfg.dataset.toy);
        return petlab::data::prepare_toy(toy, cfg.dataset.ratios, cfg.seed,
                                         cfg.encoder.context_length, cfg.encoder.image_size);
    }
    const petlab::data::DatasetManifest manifest =
        petlab::data::load_manifest(cfg.dataset.manifest_path, true);
    const petlab::data::SplitResult splits =
        petlab::data::split_dataset(manifest, cfg.dataset.ratios, cfg.seed);
    petlab::data::Vocab vocab;
    if (!cfg.dataset.vocab_path.empty()) {
        vocab = petlab::data::Vocab::load(cfg.dataset.vocab_path);
    } else {
        std::vector<std::string> texts;
        for (const petlab::data::ManifestItem& item : splits.train.items)
            for (const std::string& caption : item.captions) texts.push_back(caption);
        vocab = petlab::data::Vocab::build(texts);
    }
    const auto norm = petlab::data::NormalizationConstants::backbone();
    petlab::data::PreparedDataset prepared;
    prepared.train =
        petlab::data::prepare_split(splits.train, petlab::data::disk_loader(), vocab,
                                    cfg.encoder.context_length, cfg.encoder.image_size, norm);
    prepared.val =
        petlab::data::prepare_split(splits.val, petlab::data::disk_loader(), vocab,
                                    cfg.encoder.context_length, cfg.encoder.image_size, norm);
    prepared.test =
        petlab::data::prepare_split(splits.test, petlab::data::disk_loader(), vocab,
                                    cfg.encoder.context_length, cfg.encoder.image_size, norm);
    prepared.vocab = vocab;
    return prepared;
}

} // namespace

extern "C" {

const char* petlab_version(void) { return "0.1.0"; }

const char* petlab_status_name(petlab_status status) {
    switch (status) {
        case PETLAB_OK: return "ok";
        case PETLAB_ERR_INPUT: return "input";
        case PETLAB_ERR_CONFIG: return "config";
        case PETLAB_ERR_IO: return "io";
        case PETLAB_ERR_NUMERIC: return "numeric";
        case PETLAB_ERR_INTERNAL: return "internal";
    }
    return "unknown";
}

const char* petlab_last_error(void) { return g_last_error.c_str(); }

petlab_status petlab_config_parse(const char* json_text, petlab_config** out) {
    return guarded([&] {
        require_arg(json_text, "json_text");
        require_arg(out, "out");
        auto cfg = std::make_unique<petlab_config>();
        cfg->cfg = petlab::run::RunConfig::from_json_text(json_text);
        *out = cfg.release();
    });
}

petlab_status petlab_config_load(const char* path, petlab_config** out) {
    return guarded([&] {
        require_arg(path, "path");
        require_arg(out, "out");
        auto cfg = std::make_unique<petlab_config>();
        cfg->cfg = petlab::run::RunConfig::load(path);
        *out = cfg.release();
    });
}

petlab_status petlab_config_override(petlab_config* cfg, const char* key, const char* value) {
    return guarded([&] {
        require_arg(cfg, "cfg");
        require_arg(key, "key");
        require_arg(value, "value");
        nlohmann::json parsed;
        try {
            parsed = nlohmann::json::parse(value);
        } catch (const nlohmann::json::exception&) {
            parsed = std::string(value); // bare words are string values
        }
        nlohmann::json doc = nlohmann::json::parse(cfg->cfg.to_json_text());
        doc[key] = parsed; // dotted keys are expanded (and win) during re-parse
        cfg->cfg = petlab::run::RunConfig::from_json_text(doc.dump());
    });
}

petlab_status petlab_config_dump(const petlab_config* cfg, char** out_json) {
    return guarded([&] {
        require_arg(cfg, "cfg");
        require_arg(out_json, "out_json");
        *out_json = copy_string(cfg->cfg.to_json_text());
    });
}

void petlab_config_free(petlab_config* cfg) { delete cfg; }

petlab_status petlab_train(const petlab_config* cfg, const char* checkpoint_path,
                           petlab_result** out) {
    return guarded([&] {
        require_arg(cfg, "cfg");
        require_arg(out, "out");
        petlab::DualEncoderModel model;
        const petlab::run::RunResult r = petlab::run::train(cfg->cfg, &model);
        if (checkpoint_path) petlab::ckpt::save_checkpoint(model, checkpoint_path);
        auto result = std::make_unique<petlab_result>();
        result->json_text = petlab::run::result_json_text(r);
        *out = result.release();
    });
}

petlab_status petlab_benchmark(const petlab_config* const* cfgs, size_t count,
                               const char* output_dir, petlab_result** out) {
    return guarded([&] {
        require_arg(cfgs, "cfgs");
        require_arg(out, "out");
        if (count == 0) petlab::throw_input("petlab_benchmark: count is zero");
        std::vector<petlab::run::RunConfig> configs;
        configs.reserve(count);
        for (size_t i = 0; i < count; ++i) {
            require_arg(cfgs[i], "cfgs[i]");
            configs.push_back(cfgs[i]->cfg);
        }
        const auto entries = petlab::run::run_benchmark(configs);
        if (output_dir) petlab::run::emit_report(entries, output_dir);
        auto result = std::make_unique<petlab_result>();
        result->json_text = petlab::run::report_json_text(entries);
        *out = result.release();
    });
}

petlab_status petlab_grad_check(const petlab_config* cfg, double fd_step,
                                double* out_max_rel_error) {
    return guarded([&] {
        require_arg(cfg, "cfg");
        require_arg(out_max_rel_error, "out_max_rel_error");
        const double step = fd_step > 0.0 ? fd_step : 1e-5;
        *out_max_rel_error = petlab::run::grad_check(cfg->cfg, step);
    });
}

petlab_status petlab_make_toy_data(const petlab_config* cfg, const char* dir) {
    return guarded([&] {
        require_arg(cfg, "cfg");
        require_arg(dir, "dir");
        const petlab::data::ToyDataset toy =
            petlab::data::synthesize_toy_dataset(cfg->cfg.dataset.toy);
        petlab::data::export_toy_dataset(toy, dir);
    });
}

petlab_status petlab_export_embeddings(const petlab_config* cfg, const char* checkpoint_path,
                                       const char* split, const char* output_dir,
                                       const char* tag) {
    return guarded([&] {
        require_arg(cfg, "cfg");
        require_arg(split, "split");
        require_arg(output_dir, "output_dir");
        require_arg(tag, "tag");
        const petlab::data::PreparedDataset prepared = prepare_from_config(cfg->cfg);
        petlab::DualEncoderModel model;
        if (checkpoint_path) {
            model = petlab::ckpt::load_checkpoint(checkpoint_path);
        } else {
            petlab::EncoderConfig enc = cfg->cfg.encoder;
            if (enc.vocab_size == 0) enc.vocab_size = prepared.vocab.size();
            enc.validate();
            cfg->cfg.strategy.validate(enc);
            model = petlab::DualEncoderModel::build(enc, petlab::InitSpec{cfg->cfg.seed});
            petlab::petl::attach_strategy(model, cfg->cfg.strategy);
        }
        petlab::run::export_embeddings(model, pick_split(prepared, split), output_dir, tag);
    });
}

petlab_status petlab_result_json(const petlab_result* result, char** out_json) {
    return guarded([&] {
        require_arg(result, "result");
        require_arg(out_json, "out_json");
        *out_json = copy_string(result->json_text);
    });
}

petlab_status petlab_result_write(const petlab_result* result, const char* path) {
    return guarded([&] {
        require_arg(result, "result");
        require_arg(path, "path");
        petlab::run::version_existing_file(path);
        std::ofstream out(path, std::ios::binary);
        if (!out) petlab::throw_io(std::string("cannot open ") + path + " for writing");
        out << result->json_text << "\n";
        if (!out.good()) petlab::throw_io(std::string("failed writing ") + path);
    });
}

void petlab_result_free(petlab_result* result) { delete result; }

void petlab_string_free(char* text) { std::free(text); }

} // extern "C"
