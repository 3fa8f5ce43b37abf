#include "petlab/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json_util.hpp"
#include "petlab/autograd.hpp"
#include "petlab/error.hpp"
#include "petlab/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace petlab::run {

// ---- configuration ----

namespace {

json toy_to_json(const data::ToyDatasetConfig& t) {
    return json{{"n_classes", t.n_classes},
                {"items_per_class", t.items_per_class},
                {"captions_per_image", t.captions_per_image},
                {"image_size", t.image_size},
                {"channels", t.channels},
                {"vocab_size", t.vocab_size},
                {"noise_std", t.noise_std},
                {"seed", t.seed}};
}

data::ToyDatasetConfig toy_from_json(const json& j) {
    jsonutil::expect_keys(j,
                          {"n_classes", "items_per_class", "captions_per_image", "image_size",
                           "channels", "vocab_size", "noise_std", "seed"},
                          "dataset.toy");
    data::ToyDatasetConfig t;
    t.n_classes = jsonutil::get_or(j, "n_classes", t.n_classes);
    t.items_per_class = jsonutil::get_or(j, "items_per_class", t.items_per_class);
    t.captions_per_image = jsonutil::get_or(j, "captions_per_image", t.captions_per_image);
    t.image_size = jsonutil::get_or(j, "image_size", t.image_size);
    t.channels = jsonutil::get_or(j, "channels", t.channels);
    t.vocab_size = jsonutil::get_or(j, "vocab_size", t.vocab_size);
    t.noise_std = jsonutil::get_or(j, "noise_std", t.noise_std);
    t.seed = jsonutil::get_or(j, "seed", t.seed);
    return t;
}

json dataset_to_json(const DatasetSource& d) {
    return json{{"source", d.source},
                {"manifest_path", d.manifest_path},
                {"vocab_path", d.vocab_path},
                {"toy", toy_to_json(d.toy)},
                {"ratios", json{{"train", d.ratios.train}, {"val", d.ratios.val},
                                {"test", d.ratios.test}}}};
}

DatasetSource dataset_from_json(const json& j) {
    jsonutil::expect_keys(j, {"source", "manifest_path", "vocab_path", "toy", "ratios"},
                          "dataset");
    DatasetSource d;
    d.source = jsonutil::get_or<std::string>(j, "source", d.source);
    d.manifest_path = jsonutil::get_or<std::string>(j, "manifest_path", d.manifest_path);
    d.vocab_path = jsonutil::get_or<std::string>(j, "vocab_path", d.vocab_path);
    if (j.contains("toy")) d.toy = toy_from_json(j["toy"]);
    if (j.contains("ratios")) {
        jsonutil::expect_keys(j["ratios"], {"train", "val", "test"}, "dataset.ratios");
        d.ratios.train = jsonutil::get_or(j["ratios"], "train", d.ratios.train);
        d.ratios.val = jsonutil::get_or(j["ratios"], "val", d.ratios.val);
        d.ratios.test = jsonutil::get_or(j["ratios"], "test", d.ratios.test);
    }
    return d;
}

// Dotted keys ("loss.lambda") are folded into the nested object form first;
// they override plain keys parsed earlier.
json expand_dotted_keys(const json& doc) {
    if (!doc.is_object()) throw_config("run config must be a JSON object");
    json out = json::object();
    for (const auto& [key, value] : doc.items())
        if (key.find('.') == std::string::npos) out[key] = value;
    for (const auto& [key, value] : doc.items()) {
        if (key.find('.') == std::string::npos) continue;
        json* cursor = &out;
        std::size_t start = 0;
        while (true) {
            const std::size_t dot = key.find('.', start);
            const std::string part = key.substr(start, dot == std::string::npos
                                                           ? std::string::npos
                                                           : dot - start);
            if (part.empty()) throw_config("bad config key '" + key + "'");
            if (dot == std::string::npos) {
                (*cursor)[part] = value;
                break;
            }
            if (cursor->contains(part) && !(*cursor)[part].is_object())
                throw_config("config key '" + key + "' descends into a non-object");
            cursor = &(*cursor)[part];
            start = dot + 1;
        }
    }
    return out;
}

} // namespace

void RunConfig::validate() const {
    if (batch_size < 2) throw_config("batch_size must be >= 2 (ranking losses need negatives)");
    if (epochs < 1) throw_config("epochs must be >= 1");
    if (k_folds < 1) throw_config("k_folds must be >= 1");
    if (optimizer.kind != "adam") throw_config("unknown optimizer kind '" + optimizer.kind + "'");
    if (!(optimizer.lr > 0.0)) throw_config("optimizer.lr must be positive");
    if (optimizer.beta1 < 0.0 || optimizer.beta1 >= 1.0 || optimizer.beta2 < 0.0 ||
        optimizer.beta2 >= 1.0)
        throw_config("adam betas must lie in [0, 1)");
    if (!(optimizer.eps > 0.0)) throw_config("optimizer.eps must be positive");
    if (schedule.decay_every < 1) throw_config("schedule.decay_every must be >= 1");
    if (!(schedule.decay_factor > 0.0)) throw_config("schedule.decay_factor must be positive");
    loss.validate();
    if (dataset.source == "toy") {
        dataset.toy.validate();
    } else if (dataset.source == "manifest") {
        if (dataset.manifest_path.empty())
            throw_config("dataset.manifest_path required for manifest source");
    } else {
        throw_config("unknown dataset source '" + dataset.source + "'");
    }
    // vocab_size 0 is resolved from the dataset vocabulary at run time; the
    // encoder and strategy can only be fully validated then.
    if (encoder.vocab_size != 0) {
        encoder.validate();
        strategy.validate(encoder);
    }
}

RunConfig RunConfig::from_json_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw_config(std::string("run config parse: ") + e.what());
    }
    const json merged = expand_dotted_keys(doc);
    jsonutil::expect_keys(merged,
                          {"label", "encoder", "strategy", "loss", "optimizer", "schedule",
                           "batch_size", "epochs", "seed", "dataset", "k_folds", "output_dir",
                           "dump_embeddings"},
                          "run config");
    RunConfig cfg;
    cfg.label = jsonutil::get_or<std::string>(merged, "label", cfg.label);
    if (merged.contains("encoder"))
        cfg.encoder = jsonutil::encoder_from_json(merged["encoder"], "encoder");
    if (merged.contains("strategy"))
        cfg.strategy = jsonutil::strategy_from_json(merged["strategy"], "strategy");
    if (merged.contains("loss")) cfg.loss = jsonutil::loss_from_json(merged["loss"], "loss");
    if (merged.contains("optimizer")) {
        const json& j = merged["optimizer"];
        jsonutil::expect_keys(j, {"kind", "lr", "beta1", "beta2", "eps"}, "optimizer");
        cfg.optimizer.kind = jsonutil::get_or<std::string>(j, "kind", cfg.optimizer.kind);
        cfg.optimizer.lr = jsonutil::get_or(j, "lr", cfg.optimizer.lr);
        cfg.optimizer.beta1 = jsonutil::get_or(j, "beta1", cfg.optimizer.beta1);
        cfg.optimizer.beta2 = jsonutil::get_or(j, "beta2", cfg.optimizer.beta2);
        cfg.optimizer.eps = jsonutil::get_or(j, "eps", cfg.optimizer.eps);
    }
    if (merged.contains("schedule")) {
        const json& j = merged["schedule"];
        jsonutil::expect_keys(j, {"decay_factor", "decay_every"}, "schedule");
        cfg.schedule.decay_factor = jsonutil::get_or(j, "decay_factor", cfg.schedule.decay_factor);
        cfg.schedule.decay_every = jsonutil::get_or(j, "decay_every", cfg.schedule.decay_every);
    }
    cfg.batch_size = jsonutil::get_or(merged, "batch_size", cfg.batch_size);
    cfg.epochs = jsonutil::get_or(merged, "epochs", cfg.epochs);
    cfg.seed = jsonutil::get_or(merged, "seed", cfg.seed);
    if (merged.contains("dataset")) cfg.dataset = dataset_from_json(merged["dataset"]);
    cfg.k_folds = jsonutil::get_or(merged, "k_folds", cfg.k_folds);
    cfg.output_dir = jsonutil::get_or<std::string>(merged, "output_dir", cfg.output_dir);
    cfg.dump_embeddings = jsonutil::get_or(merged, "dump_embeddings", cfg.dump_embeddings);
    return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw_io("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json_text(buf.str());
}

std::string RunConfig::to_json_text() const {
    json doc{{"label", label},
             {"encoder", jsonutil::encoder_to_json(encoder)},
             {"strategy", jsonutil::strategy_to_json(strategy)},
             {"loss", jsonutil::loss_to_json(loss)},
             {"optimizer", json{{"kind", optimizer.kind},
                                {"lr", optimizer.lr},
                                {"beta1", optimizer.beta1},
                                {"beta2", optimizer.beta2},
                                {"eps", optimizer.eps}}},
             {"schedule", json{{"decay_factor", schedule.decay_factor},
                               {"decay_every", schedule.decay_every}}},
             {"batch_size", batch_size},
             {"epochs", epochs},
             {"seed", seed},
             {"dataset", dataset_to_json(dataset)},
             {"k_folds", k_folds},
             {"output_dir", output_dir},
             {"dump_embeddings", dump_embeddings}};
    return doc.dump(2);
}

std::uint64_t RunConfig::config_hash() const { return hash_string64(to_json_text()); }

double lr_schedule(int epoch, double base_lr, const ScheduleConfig& cfg) {
    if (epoch < 0) throw_input("lr_schedule: epoch must be >= 0");
    if (cfg.decay_every < 1) throw_config("schedule.decay_every must be >= 1");
    return base_lr * std::pow(cfg.decay_factor, epoch / cfg.decay_every);
}

// ---- optimizer ----

AdamOptimizer::AdamOptimizer(ParamStore& params, const OptimizerConfig& cfg) : cfg_(cfg) {
    if (cfg.kind != "adam") throw_config("unknown optimizer kind '" + cfg.kind + "'");
    for (ParamStore::Entry& e : params.entries())
        if (e.var.requires_grad())
            slots_.push_back(Slot{e.var, ag::Matrix::Zero(e.var.rows(), e.var.cols()),
                                  ag::Matrix::Zero(e.var.rows(), e.var.cols())});
}

void AdamOptimizer::step(double lr) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    for (Slot& s : slots_) {
        const ag::Matrix g =
            s.var.has_grad() ? s.var.grad() : ag::Matrix::Zero(s.var.rows(), s.var.cols());
        s.m = cfg_.beta1 * s.m + (1.0 - cfg_.beta1) * g;
        s.v = cfg_.beta2 * s.v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        s.var.mutable_value().array() -=
            lr * (s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + cfg_.eps);
        s.var.zero_grad();
    }
}

// ---- data and model assembly ----

namespace {

data::PreparedDataset prepare_data(const RunConfig& cfg) {
    if (cfg.dataset.source == "toy") {
        const data::ToyDataset toy = data::synthesize_toy_dataset(cfg.dataset.toy);
        return data::prepare_toy(toy, cfg.dataset.ratios, cfg.seed, cfg.encoder.context_length,
                                 cfg.encoder.image_size);
    }
    const data::DatasetManifest manifest = data::load_manifest(cfg.dataset.manifest_path, true);
    const data::SplitResult splits = data::split_dataset(manifest, cfg.dataset.ratios, cfg.seed);
    data::Vocab vocab;
    if (!cfg.dataset.vocab_path.empty()) {
        vocab = data::Vocab::load(cfg.dataset.vocab_path);
    } else {
        std::vector<std::string> texts;
        for (const data::ManifestItem& item : splits.train.items)
            for (const std::string& caption : item.captions) texts.push_back(caption);
        vocab = data::Vocab::build(texts);
    }
    const data::NormalizationConstants norm = data::NormalizationConstants::backbone();
    data::PreparedDataset prepared;
    prepared.train = data::prepare_split(splits.train, data::disk_loader(), vocab,
                                         cfg.encoder.context_length, cfg.encoder.image_size, norm);
    prepared.val = data::prepare_split(splits.val, data::disk_loader(), vocab,
                                       cfg.encoder.context_length, cfg.encoder.image_size, norm);
    prepared.test = data::prepare_split(splits.test, data::disk_loader(), vocab,
                                        cfg.encoder.context_length, cfg.encoder.image_size, norm);
    prepared.vocab = vocab;
    return prepared;
}

EncoderConfig resolve_encoder(const RunConfig& cfg, const data::PreparedDataset& prepared) {
    EncoderConfig enc = cfg.encoder;
    if (enc.vocab_size == 0) enc.vocab_size = prepared.vocab.size();
    if (enc.vocab_size < prepared.vocab.size())
        throw_config("encoder vocab_size " + std::to_string(enc.vocab_size) +
                     " is smaller than the dataset vocabulary (" +
                     std::to_string(prepared.vocab.size()) + ")");
    enc.validate();
    cfg.strategy.validate(enc);
    return enc;
}

struct BatchVars {
    ag::Var images, texts, images_aug, texts_aug;
    std::vector<long long> image_id;
};

// Augmented encodes consume `aug_rng` in pair order: image then text.
BatchVars encode_batch(const DualEncoderModel& model, const RetrievalSplit& split,
                       std::span<const int> pair_indices, double dropout_p, Rng& aug_rng) {
    AugmentSpec aug{dropout_p, &aug_rng};
    std::vector<ag::Var> v, t, va, ta;
    BatchVars batch;
    for (int pair : pair_indices) {
        const int img = split.caption_to_image[static_cast<std::size_t>(pair)];
        const auto& image = split.images[static_cast<std::size_t>(img)];
        const auto& caption = split.captions[static_cast<std::size_t>(pair)];
        v.push_back(encode_image_var(image, model));
        t.push_back(encode_text_var(caption, model));
        va.push_back(encode_image_var(image, model, &aug));
        ta.push_back(encode_text_var(caption, model, &aug));
        batch.image_id.push_back(img);
    }
    batch.images = ag::vstack(v);
    batch.texts = ag::vstack(t);
    batch.images_aug = ag::vstack(va);
    batch.texts_aug = ag::vstack(ta);
    return batch;
}

std::vector<ag::Matrix> snapshot_trainable(const ParamStore& params) {
    std::vector<ag::Matrix> values;
    for (const ParamStore::Entry& e : params.entries())
        if (e.var.requires_grad()) values.push_back(e.var.value());
    return values;
}

void restore_trainable(ParamStore& params, const std::vector<ag::Matrix>& values) {
    std::size_t k = 0;
    for (ParamStore::Entry& e : params.entries())
        if (e.var.requires_grad()) e.var.mutable_value() = values.at(k++);
    if (k != values.size()) throw_internal("snapshot size mismatch");
}

} // namespace

// ---- training ----

RunResult train(const RunConfig& cfg, const data::PreparedDataset& prepared,
                DualEncoderModel* trained_out) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();

    const EncoderConfig enc = resolve_encoder(cfg, prepared);
    DualEncoderModel model = DualEncoderModel::build(enc, InitSpec{cfg.seed});
    petl::attach_strategy(model, cfg.strategy);

    RunResult result;
    result.label = cfg.label;
    result.seed = cfg.seed;
    result.config_hash = cfg.config_hash();
    result.params = petl::count_parameters(model);

    AdamOptimizer opt(model.params, cfg.optimizer);

    result.initial_val = evaluate_retrieval(model, prepared.val);
    result.best_val = result.initial_val;
    result.best_epoch = -1;
    std::vector<ag::Matrix> best_values = snapshot_trainable(model.params);

    if (opt.trainable_count() > 0) {
        const int n_pairs = static_cast<int>(prepared.train.n_pairs());
        if (n_pairs < 2) throw_input("training split has fewer than 2 image-caption pairs");
        std::vector<int> order(static_cast<std::size_t>(n_pairs));
        std::iota(order.begin(), order.end(), 0);

        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            const double lr = lr_schedule(epoch, cfg.optimizer.lr, cfg.schedule);
            result.lr_curve.push_back(lr);
            Rng shuffle_rng = Rng::derive(cfg.seed, "epoch-shuffle",
                                          static_cast<std::uint64_t>(epoch));
            shuffle_rng.shuffle(order);

            double loss_sum = 0.0;
            int batches = 0;
            for (int start = 0; start < n_pairs; start += cfg.batch_size) {
                const int b = std::min(cfg.batch_size, n_pairs - start);
                if (b < 2) continue; // a size-1 tail has no negatives
                Rng aug_rng = Rng::derive(
                    cfg.seed, "augment",
                    (static_cast<std::uint64_t>(epoch) << 32) |
                        static_cast<std::uint64_t>(start / cfg.batch_size));
                BatchVars batch =
                    encode_batch(model, prepared.train,
                                 std::span<const int>(order).subspan(
                                     static_cast<std::size_t>(start), static_cast<std::size_t>(b)),
                                 cfg.loss.dropout_p, aug_rng);
                ag::Var loss = objectives::hmmc_loss(batch.images, batch.texts, batch.images_aug,
                                                     batch.texts_aug, cfg.loss, batch.image_id);
                const double value = loss.item();
                if (!std::isfinite(value))
                    throw_numeric("non-finite training loss at epoch " + std::to_string(epoch) +
                                  ", batch " + std::to_string(batches) + " (" +
                                  std::to_string(value) + ")");
                ag::backward(loss);
                opt.step(lr);
                loss_sum += value;
                ++batches;
            }
            result.loss_curve.push_back(batches > 0 ? loss_sum / batches : 0.0);

            const MetricsRecord val = evaluate_retrieval(model, prepared.val);
            result.val_mr_curve.push_back(val.mr);
            if (val.mr > result.best_val.mr) {
                result.best_val = val;
                result.best_epoch = epoch;
                best_values = snapshot_trainable(model.params);
            }
        }
        restore_trainable(model.params, best_values);
    }

    result.test = evaluate_retrieval(model, prepared.test);
    result.optimizer_steps = opt.steps_taken();
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (cfg.dump_embeddings)
        export_embeddings(model, prepared.test, cfg.output_dir, cfg.label + "_test");
    if (trained_out) *trained_out = std::move(model);
    return result;
}

RunResult train(const RunConfig& cfg, DualEncoderModel* trained_out) {
    cfg.validate();
    return train(cfg, prepare_data(cfg), trained_out);
}

// ---- gradient checking ----

double grad_check(const RunConfig& cfg, double step) {
    cfg.validate();
    if (!(step > 0.0)) throw_input("grad_check: step must be positive");
    const data::PreparedDataset prepared = prepare_data(cfg);
    const EncoderConfig enc = resolve_encoder(cfg, prepared);
    DualEncoderModel model = DualEncoderModel::build(enc, InitSpec{cfg.seed});
    petl::attach_strategy(model, cfg.strategy);

    // Zero-initialized up-projections would hide most gradient paths; shift
    // every trainable tensor off its starting point first.
    for (ParamStore::Entry& e : model.params.entries()) {
        if (!e.var.requires_grad()) continue;
        Rng rng = Rng::derive(cfg.seed, "gradcheck-jitter", hash_string64(e.name));
        ag::Matrix& m = e.var.mutable_value();
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) += 0.05 * rng.normal();
    }

    const int n_pairs = static_cast<int>(prepared.train.n_pairs());
    const int b = std::min(cfg.batch_size, n_pairs);
    if (b < 2) throw_input("grad_check: need at least 2 training pairs");
    std::vector<int> pairs(static_cast<std::size_t>(b));
    std::iota(pairs.begin(), pairs.end(), 0);

    // The dropout stream restarts at the same point for every evaluation, so
    // the loss is a fixed deterministic function of the parameters.
    const auto loss_value = [&]() {
        Rng aug_rng = Rng::derive(cfg.seed, "gradcheck-aug");
        ag::NoGradGuard guard;
        BatchVars batch = encode_batch(model, prepared.train, pairs, cfg.loss.dropout_p, aug_rng);
        objectives::RetrievalBatch plain;
        plain.images = batch.images.value();
        plain.texts = batch.texts.value();
        plain.images_aug = batch.images_aug.value();
        plain.texts_aug = batch.texts_aug.value();
        plain.image_id = batch.image_id;
        return objectives::hmmc_loss(plain, cfg.loss);
    };

    Rng aug_rng = Rng::derive(cfg.seed, "gradcheck-aug");
    BatchVars batch = encode_batch(model, prepared.train, pairs, cfg.loss.dropout_p, aug_rng);
    ag::Var loss = objectives::hmmc_loss(batch.images, batch.texts, batch.images_aug,
                                         batch.texts_aug, cfg.loss, batch.image_id);
    ag::backward(loss);

    double max_rel = 0.0;
    for (ParamStore::Entry& e : model.params.entries()) {
        if (!e.var.requires_grad()) continue;
        const ag::Matrix analytic = e.var.has_grad()
                                        ? e.var.grad()
                                        : ag::Matrix::Zero(e.var.rows(), e.var.cols());
        ag::Matrix& m = e.var.mutable_value();
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                const double original = m(r, c);
                m(r, c) = original + step;
                const double up = loss_value();
                m(r, c) = original - step;
                const double down = loss_value();
                m(r, c) = original;
                const double numeric = (up - down) / (2.0 * step);
                const double a = analytic(r, c);
                const double rel =
                    std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
                max_rel = std::max(max_rel, rel);
            }
        }
    }
    return max_rel;
}

// ---- benchmarking and reports ----

std::vector<BenchmarkEntry> run_benchmark(const std::vector<RunConfig>& configs) {
    if (configs.empty()) throw_input("run_benchmark: no configs");
    std::vector<BenchmarkEntry> entries;
    for (const RunConfig& cfg : configs) {
        BenchmarkEntry entry;
        entry.label = cfg.label;
        try {
            cfg.validate();
            std::vector<MetricsRecord> fold_metrics;
            for (int fold = 0; fold < cfg.k_folds; ++fold) {
                RunConfig fold_cfg = cfg;
                fold_cfg.seed = cfg.seed + static_cast<std::uint64_t>(fold);
                RunResult r = train(fold_cfg);
                fold_metrics.push_back(r.test);
                entry.folds.push_back(std::move(r));
            }
            entry.metrics = kfold_aggregate(fold_metrics);
        } catch (const std::exception& e) {
            entry.failed = true;
            entry.error = e.what();
        }
        entries.push_back(std::move(entry));
    }
    return entries;
}

bool version_existing_file(const std::string& path) {
    if (!fs::exists(path)) return false;
    for (int n = 1;; ++n) {
        const std::string candidate = path + "." + std::to_string(n);
        if (!fs::exists(candidate)) {
            std::error_code ec;
            fs::rename(path, candidate, ec);
            if (ec) throw_io("cannot version " + path + ": " + ec.message());
            return true;
        }
    }
}

namespace {

void write_or_throw(const std::string& path, const std::string& text) {
    version_existing_file(path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw_io("cannot open " + path + " for writing");
    out << text;
    if (!out.good()) throw_io("failed writing " + path);
}

json metrics_to_json(const MetricsRecord& m) {
    return json{{"tr_r1", m.tr_r1},
                {"tr_r5", m.tr_r5},
                {"tr_r10", m.tr_r10},
                {"ir_r1", m.ir_r1},
                {"ir_r5", m.ir_r5},
                {"ir_r10", m.ir_r10},
                {"mr", m.mr},
                {"params_trainable", m.params.trainable},
                {"params_total", m.params.total}};
}

json result_to_json(const RunResult& r) {
    return json{{"label", r.label},
                {"seed", r.seed},
                {"config_hash", r.config_hash},
                {"best_epoch", r.best_epoch},
                {"optimizer_steps", r.optimizer_steps},
                {"wall_seconds", r.wall_seconds},
                {"initial_val_mr", r.initial_val.mr},
                {"best_val_mr", r.best_val.mr},
                {"test", metrics_to_json(r.test)},
                {"loss_curve", r.loss_curve},
                {"lr_curve", r.lr_curve},
                {"val_mr_curve", r.val_mr_curve}};
}

json report_to_json(const std::vector<BenchmarkEntry>& entries) {
    json report = json::array();
    for (const BenchmarkEntry& entry : entries) {
        json row{{"label", entry.label}, {"failed", entry.failed}};
        if (entry.failed) {
            row["error"] = entry.error;
        } else {
            row["metrics"] = metrics_to_json(entry.metrics);
            json folds = json::array();
            for (const RunResult& fold : entry.folds) folds.push_back(result_to_json(fold));
            row["folds"] = std::move(folds);
        }
        report.push_back(std::move(row));
    }
    return report;
}

} // namespace

std::string result_json_text(const RunResult& result) { return result_to_json(result).dump(2); }

std::string report_json_text(const std::vector<BenchmarkEntry>& entries) {
    return report_to_json(entries).dump(2);
}

void emit_report(const std::vector<BenchmarkEntry>& entries, const std::string& output_dir) {
    if (entries.empty()) throw_input("emit_report: no results");
    std::error_code ec;
    fs::create_directories(output_dir, ec);
    if (ec) throw_io("cannot create " + output_dir + ": " + ec.message());

    std::ostringstream csv;
    csv << "strategy," << MetricsRecord::csv_header() << "\n";
    std::ostringstream scatter;
    scatter << "strategy,params_trainable,mr\n";
    for (const BenchmarkEntry& entry : entries) {
        if (entry.failed) continue;
        csv << entry.label << ',' << entry.metrics.csv_row() << "\n";
        scatter << entry.label << ',' << entry.metrics.params.trainable << ','
                << entry.metrics.mr << "\n";
    }
    write_or_throw((fs::path(output_dir) / "results.csv").string(), csv.str());
    write_or_throw((fs::path(output_dir) / "params_vs_mr.csv").string(), scatter.str());
    write_or_throw((fs::path(output_dir) / "results.json").string(),
                   report_to_json(entries).dump(2) + "\n");
}

void export_embeddings(const DualEncoderModel& model, const RetrievalSplit& split,
                       const std::string& output_dir, const std::string& tag) {
    split.validate();
    std::error_code ec;
    fs::create_directories(output_dir, ec);
    if (ec) throw_io("cannot create " + output_dir + ": " + ec.message());

    const auto matrix_csv = [](const Eigen::MatrixXd& m) {
        std::ostringstream out;
        out.precision(17);
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                if (c) out << ',';
                out << m(r, c);
            }
            out << "\n";
        }
        return out.str();
    };

    Eigen::MatrixXd images(static_cast<Eigen::Index>(split.images.size()), model.config.joint_dim);
    for (std::size_t i = 0; i < split.images.size(); ++i)
        images.row(static_cast<Eigen::Index>(i)) = encode_image(split.images[i], model).vector;
    Eigen::MatrixXd captions(static_cast<Eigen::Index>(split.captions.size()),
                             model.config.joint_dim);
    for (std::size_t j = 0; j < split.captions.size(); ++j)
        captions.row(static_cast<Eigen::Index>(j)) = encode_text(split.captions[j], model).vector;

    write_or_throw((fs::path(output_dir) / (tag + "_images.csv")).string(), matrix_csv(images));
    write_or_throw((fs::path(output_dir) / (tag + "_captions.csv")).string(),
                   matrix_csv(captions));
}

} // namespace petlab::run
