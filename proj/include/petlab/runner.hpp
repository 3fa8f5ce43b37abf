#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "petlab/data.hpp"
#include "petlab/encoder.hpp"
#include "petlab/eval.hpp"
#include "petlab/objectives.hpp"
#include "petlab/petl.hpp"

namespace petlab::run {

struct OptimizerConfig {
    std::string kind = "adam";
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct ScheduleConfig {
    double decay_factor = 0.7;
    int decay_every = 20; // epochs
};

struct DatasetSource {
    std::string source = "toy"; // "toy" or "manifest"
    std::string manifest_path;  // manifest source
    std::string vocab_path;     // optional; empty = build from training captions
    data::ToyDatasetConfig toy; // toy source
    data::SplitRatios ratios;
};

struct RunConfig {
    std::string label = "run";
    EncoderConfig encoder;
    petl::PetlStrategy strategy;
    objectives::LossConfig loss;
    OptimizerConfig optimizer;
    ScheduleConfig schedule;
    int batch_size = 16;
    int epochs = 30;
    std::uint64_t seed = 0;
    DatasetSource dataset;
    int k_folds = 5;
    std::string output_dir = "runs";
    bool dump_embeddings = false;

    void validate() const;

    // Accepts nested objects and/or flat dotted keys ("loss.lambda": 0.3).
    static RunConfig from_json_text(const std::string& text);
    static RunConfig load(const std::string& path);
    std::string to_json_text() const; // canonical: sorted keys, all fields
    std::uint64_t config_hash() const;
};

// base_lr * decay_factor^(epoch / decay_every), integer division.
double lr_schedule(int epoch, double base_lr, const ScheduleConfig& cfg);

// Adam over the trainable entries of a parameter store.
class AdamOptimizer {
public:
    AdamOptimizer(ParamStore& params, const OptimizerConfig& cfg);

    void step(double lr); // applies and clears gradients
    long long steps_taken() const { return steps_; }
    std::size_t trainable_count() const { return slots_.size(); }

private:
    struct Slot {
        ag::Var var;
        ag::Matrix m;
        ag::Matrix v;
    };
    std::vector<Slot> slots_;
    OptimizerConfig cfg_;
    long long steps_ = 0;
};

struct RunResult {
    std::string label;
    std::vector<double> loss_curve;   // per-epoch mean training loss
    std::vector<double> lr_curve;     // per-epoch learning rate
    std::vector<double> val_mr_curve; // per-epoch validation mean recall
    MetricsRecord initial_val;        // validation metrics before any step
    MetricsRecord best_val;
    MetricsRecord test;
    petl::ParamReport params;
    int best_epoch = -1;
    long long optimizer_steps = 0;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
};

// Full pipeline: prepare data, build + attach, train with the HMMC loss,
// keep the best-validation snapshot, evaluate it on the test split. When
// trained_out is given it receives the best-validation model.
RunResult train(const RunConfig& cfg, DualEncoderModel* trained_out = nullptr);
RunResult train(const RunConfig& cfg, const data::PreparedDataset& prepared,
                DualEncoderModel* trained_out = nullptr);

// Central finite differences of the training loss on one batch against the
// autodiff gradients, over every trainable parameter. Returns the maximum
// relative error.
double grad_check(const RunConfig& cfg, double step = 1e-5);

struct BenchmarkEntry {
    std::string label;
    bool failed = false;
    std::string error;
    MetricsRecord metrics; // k-fold mean (valid when !failed)
    std::vector<RunResult> folds;
};

// Each config runs k_folds times with reseeded split/init (seed + fold).
// Failures are recorded and do not abort the sweep.
std::vector<BenchmarkEntry> run_benchmark(const std::vector<RunConfig>& configs);

// JSON text for one run / a whole sweep (the results.json schema).
std::string result_json_text(const RunResult& result);
std::string report_json_text(const std::vector<BenchmarkEntry>& entries);

// Writes results.csv, results.json and params_vs_mr.csv under output_dir.
// Existing files are renamed to <name>.1, <name>.2, ... first.
void emit_report(const std::vector<BenchmarkEntry>& entries, const std::string& output_dir);

// One matrix per modality: <tag>_images.csv and <tag>_captions.csv.
void export_embeddings(const DualEncoderModel& model, const RetrievalSplit& split,
                       const std::string& output_dir, const std::string& tag);

// Renames path to the first free path.N suffix; returns true if moved.
bool version_existing_file(const std::string& path);

} // namespace petlab::run
