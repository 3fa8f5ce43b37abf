#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "petlab/autograd.hpp"
#include "petlab/image.hpp"
#include "petlab/petl.hpp"
#include "petlab/rng.hpp"

namespace petlab {

// Shared architecture knobs for both towers. Defaults describe the
// full-scale backbone; tests typically shrink everything.
struct EncoderConfig {
    int image_size = 224;
    int patch_stride = 32;
    int layers = 12;
    int hidden_dim_vision = 768;
    int hidden_dim_text = 512;
    int heads_vision = 0; // 0 = auto: hidden_dim / 64, at least 1
    int heads_text = 0;
    int joint_dim = 512;
    int context_length = 77;
    int vocab_size = 49408;
    int mlp_ratio = 4;
    double ln_eps = 1e-5;

    int resolved_heads_vision() const;
    int resolved_heads_text() const;
    int patches_per_side() const { return image_size / patch_stride; }
    int vision_tokens() const { return 1 + patches_per_side() * patches_per_side(); }
    void validate() const; // throws config errors
};

enum class Modality { Image, Text };

// Row ranges currently occupied by learnable prompt tokens; deep prompting
// swaps these rows for fresh parameters at every layer input.
struct PromptSlots {
    int begin1 = -1, len1 = 0;
    int begin2 = -1, len2 = 0;
    bool any() const { return len1 > 0 || len2 > 0; }
};

struct TokenSequence {
    ag::Var tokens; // N x D_modality
    Modality modality = Modality::Image;
    int eos_index = -1; // text only: pooling row
    PromptSlots prompts;
};

// A point in the joint space; always unit L2 norm.
struct Embedding {
    Eigen::RowVectorXd vector;
};

// Insertion-ordered named parameter tensors. The trainable flag is the
// autograd requires_grad flag; there is exactly one flag per tensor.
class ParamStore {
public:
    struct Entry {
        std::string name;
        ag::Var var;
    };

    ag::Var add(const std::string& name, ag::Matrix value, bool trainable);
    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    const ag::Var& at(const std::string& name) const;
    ag::Var& at(const std::string& name);
    void set_trainable(const std::string& name, bool flag);
    void set_all_trainable(bool flag);

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }
    std::size_t size() const { return entries_.size(); }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct TensorSpec {
    std::string name;
    long long rows = 0;
    long long cols = 0;
    long long count() const { return rows * cols; }
};

// Shapes and names of every backbone tensor for a config, in creation order.
// Pure function of the config; used for parameter accounting without
// allocating full-scale models.
std::vector<TensorSpec> backbone_tensor_specs(const EncoderConfig& config);

struct InitSpec {
    std::uint64_t seed = 0;
    double stddev = 0.02; // weights; biases and LN betas start at zero
    bool zeros = false;   // everything zero (identity-path testing)
};

struct DualEncoderModel {
    EncoderConfig config;
    InitSpec init; // kept so strategy attachment draws from the same seed
    ParamStore params;
    std::optional<petl::PetlAttachment> petl;

    static DualEncoderModel build(const EncoderConfig& config, const InitSpec& init);
};

// ---- forward ops ----

TokenSequence embed_image_tokens(const ImageTensor& image, const DualEncoderModel& model);
// ids must already carry BOS/EOS; the final id is treated as EOS (pooling row).
TokenSequence embed_text_tokens(std::span<const int> token_ids, const DualEncoderModel& model);
TokenSequence block_forward(const TokenSequence& x, int layer_index, const DualEncoderModel& model);
ag::Var pool_and_project_var(const TokenSequence& x, const DualEncoderModel& model);
Embedding pool_and_project(const TokenSequence& x, const DualEncoderModel& model);

// Dropout-based augmentation: applied to the token matrix right after
// positional addition, before any prompt insertion.
struct AugmentSpec {
    double dropout_p = 0.0;
    Rng* rng = nullptr;
};

ag::Var encode_image_var(const ImageTensor& image, const DualEncoderModel& model,
                         const AugmentSpec* augment = nullptr);
ag::Var encode_text_var(std::span<const int> token_ids, const DualEncoderModel& model,
                        const AugmentSpec* augment = nullptr);
Embedding encode_image(const ImageTensor& image, const DualEncoderModel& model,
                       const AugmentSpec* augment = nullptr);
Embedding encode_text(std::span<const int> token_ids, const DualEncoderModel& model,
                      const AugmentSpec* augment = nullptr);

} // namespace petlab
