#pragma once

#include <optional>
#include <string>
#include <vector>

#include "petlab/autograd.hpp"

namespace petlab {
struct EncoderConfig;
struct DualEncoderModel;
struct TensorSpec;
struct TokenSequence;
} // namespace petlab

namespace petlab::petl {

enum class PetlKind {
    ZeroShot,
    LinearProbe,
    FullFinetune,
    AdapterSequential,
    MrsAdapter,
    MrsNoShare,
    TextPrompt,
    VisualPrompt,
    VlPrompt,
};

const char* petl_kind_name(PetlKind kind);
PetlKind petl_kind_from_string(const std::string& name); // throws config error

enum class PromptDepth { Shallow, Deep };
enum class PromptPosition { End, Mid };

// Which tuning strategy to attach and its hyperparameters. Fields are read
// only by the kinds that need them.
struct PetlStrategy {
    PetlKind kind = PetlKind::ZeroShot;
    int d = 64;                      // adapter bottleneck width
    int r = 64;                      // width of the cross-modal shared up-projection block
    double adapter_scale = 1.0;      // sequential adapter output scale
    bool tie_across_layers = true;   // one adapter instance shared by all layers
    int prompt_length = 16;
    PromptDepth prompt_depth = PromptDepth::Shallow;
    PromptPosition prompt_position = PromptPosition::End;

    void validate(const EncoderConfig& config) const; // throws config errors
};

enum class Branch { Vision, Text };

// Bottleneck adapter with skip connection (inserted sequentially after the
// attention and MLP sublayers).
struct AdapterParams {
    ag::Var w_down; // D_in x d
    ag::Var w_up;   // d x D_in
    double scale = 1.0;
};

// Bottleneck adapter parallel to the FFN without a skip connection. The up
// projection splits into a branch-specific block and a block whose weights
// are shared between the vision and text towers. When shared == false the
// variant keeps two full-width independent up-projections instead.
struct MrsAdapterParams {
    ag::Var down_v; // Dv x d
    ag::Var down_t; // Dt x d
    ag::Var up_v;   // d x (Dv - r), or d x Dv when not shared
    ag::Var up_t;   // d x (Dt - r), or d x Dt when not shared
    ag::Var up_share; // d x r (undefined when not shared)
    int d = 0;
    int r = 0;
    bool shared = true;
};

struct PromptState {
    int length = 0;
    PromptDepth depth = PromptDepth::Shallow;
    PromptPosition position = PromptPosition::End;
    // One tensor per insertion point: a single entry when shallow, one per
    // layer when deep. Empty vector = branch not prompted.
    std::vector<ag::Var> visual;
    std::vector<ag::Var> text;
};

struct ProbeState {
    ag::Var w_v, b_v; // joint_dim x joint_dim, 1 x joint_dim
    ag::Var w_t, b_t;
};

struct PetlAttachment {
    PetlStrategy strategy;
    // Sequential adapters indexed by layer (always untied).
    std::vector<AdapterParams> seq_attn_v, seq_mlp_v, seq_attn_t, seq_mlp_t;
    // One entry when tied across layers, otherwise one per layer.
    std::vector<MrsAdapterParams> mrs;
    std::optional<PromptState> prompt;
    std::optional<ProbeState> probe;

    const MrsAdapterParams& mrs_for_layer(int layer) const {
        return mrs.size() == 1 ? mrs[0] : mrs[static_cast<std::size_t>(layer)];
    }
};

// s_a * ReLU(x W_down) W_up + x
ag::Var adapter_forward(const ag::Var& x, const AdapterParams& a);

// ReLU(x W_down^branch) -> [ . W_up^branch ; . W_up^share ]; returns the
// delta only — the caller adds it into the block output.
ag::Var mrs_adapter_forward(const ag::Var& x, const MrsAdapterParams& m, Branch branch);

// Inserts learnable prompt rows into a token sequence. Image prompts follow
// the CLS row; text prompts sit between BOS and the content words ("end"
// position) or split around the content words ("mid"). No positional
// embedding is added to prompt rows; EOS bookkeeping shifts accordingly.
TokenSequence prompt_prepend(const TokenSequence& x, const PromptState& state,
                             const EncoderConfig& config);

// Deep prompting: swap the occupied prompt rows for the given layer's rows.
TokenSequence prompt_replace(const TokenSequence& x, const PromptState& state, int layer);

struct ParamReport {
    long long trainable = 0;
    long long total = 0;
    double reduction_pct = 0.0; // vs. the same config fully fine-tuned
};

// Creates strategy tensors (prefix "petl."), wires the attachment, and sets
// every trainable flag. A model accepts exactly one attachment.
void attach_strategy(DualEncoderModel& model, const PetlStrategy& strategy);

ParamReport count_parameters(const DualEncoderModel& model);
// Accounting from shapes alone; never allocates tensor storage.
ParamReport count_parameters(const EncoderConfig& config, const PetlStrategy& strategy);

// Tensor names/shapes a strategy adds, in creation order.
std::vector<TensorSpec> strategy_tensor_specs(const EncoderConfig& config,
                                              const PetlStrategy& strategy);

} // namespace petlab::petl
