#include "petlab/petl.hpp"

#include <algorithm>
#include <string>

#include "petlab/encoder.hpp"
#include "petlab/error.hpp"

namespace petlab::petl {

const char* petl_kind_name(PetlKind kind) {
    switch (kind) {
        case PetlKind::ZeroShot: return "zero_shot";
        case PetlKind::LinearProbe: return "linear_probe";
        case PetlKind::FullFinetune: return "full_finetune";
        case PetlKind::AdapterSequential: return "adapter_sequential";
        case PetlKind::MrsAdapter: return "mrs_adapter";
        case PetlKind::MrsNoShare: return "mrs_no_share";
        case PetlKind::TextPrompt: return "text_prompt";
        case PetlKind::VisualPrompt: return "visual_prompt";
        case PetlKind::VlPrompt: return "vl_prompt";
    }
    return "unknown";
}

PetlKind petl_kind_from_string(const std::string& name) {
    for (PetlKind k : {PetlKind::ZeroShot, PetlKind::LinearProbe, PetlKind::FullFinetune,
                       PetlKind::AdapterSequential, PetlKind::MrsAdapter, PetlKind::MrsNoShare,
                       PetlKind::TextPrompt, PetlKind::VisualPrompt, PetlKind::VlPrompt})
        if (name == petl_kind_name(k)) return k;
    throw_config("unknown strategy kind: '" + name + "'");
}

void PetlStrategy::validate(const EncoderConfig& config) const {
    const int min_hidden = std::min(config.hidden_dim_vision, config.hidden_dim_text);
    switch (kind) {
        case PetlKind::AdapterSequential:
            if (d < 1 || d >= min_hidden)
                throw_config("adapter bottleneck d must satisfy 1 <= d < min hidden dim");
            break;
        case PetlKind::MrsAdapter:
            if (d < 1 || d >= min_hidden)
                throw_config("adapter bottleneck d must satisfy 1 <= d < min hidden dim");
            if (r < 1 || r >= config.hidden_dim_vision || r >= config.hidden_dim_text)
                throw_config("shared width r must satisfy 0 < r < both hidden dims");
            break;
        case PetlKind::MrsNoShare:
            if (d < 1 || d >= min_hidden)
                throw_config("adapter bottleneck d must satisfy 1 <= d < min hidden dim");
            break;
        case PetlKind::TextPrompt:
        case PetlKind::VlPrompt:
            if (prompt_length < 0) throw_config("prompt_length must be >= 0");
            if (3 + prompt_length > config.context_length)
                throw_config("prompt_length " + std::to_string(prompt_length) +
                             " cannot fit next to BOS/word/EOS within context_length " +
                             std::to_string(config.context_length));
            break;
        case PetlKind::VisualPrompt:
            if (prompt_length < 0) throw_config("prompt_length must be >= 0");
            break;
        default:
            break;
    }
}

ag::Var adapter_forward(const ag::Var& x, const AdapterParams& a) {
    if (x.cols() != a.w_down.rows())
        throw_config("adapter width mismatch: input " + std::to_string(x.cols()) +
                     ", W_down expects " + std::to_string(a.w_down.rows()));
    ag::Var down = ag::relu(ag::matmul(x, a.w_down));
    ag::Var up = ag::matmul(down, a.w_up);
    return ag::add(ag::scalar_mul(up, a.scale), x);
}

ag::Var mrs_adapter_forward(const ag::Var& x, const MrsAdapterParams& m, Branch branch) {
    const ag::Var& w_down = branch == Branch::Vision ? m.down_v : m.down_t;
    const ag::Var& w_up = branch == Branch::Vision ? m.up_v : m.up_t;
    if (x.cols() != w_down.rows())
        throw_config("adapter width mismatch: input " + std::to_string(x.cols()) +
                     ", W_down expects " + std::to_string(w_down.rows()));
    ag::Var down = ag::relu(ag::matmul(x, w_down));
    ag::Var specific = ag::matmul(down, w_up);
    if (!m.shared) return specific;
    ag::Var shared = ag::matmul(down, m.up_share);
    std::vector<ag::Var> parts = {specific, shared};
    return ag::hstack(parts);
}

// ---- prompt insertion ----

TokenSequence prompt_prepend(const TokenSequence& x, const PromptState& state,
                             const EncoderConfig& config) {
    const auto& bank = x.modality == Modality::Image ? state.visual : state.text;
    if (bank.empty() || state.length == 0) return x;
    const ag::Var& p = bank[0];
    const int m = state.length;
    const Eigen::Index n = x.tokens.rows();

    if (x.modality == Modality::Text && n + m > config.context_length)
        throw_input("prompted text length " + std::to_string(n + m) + " exceeds context_length " +
                    std::to_string(config.context_length));

    TokenSequence out = x;
    if (x.modality == Modality::Image || state.position == PromptPosition::End) {
        // [CLS | BOS], prompts, remaining rows
        std::vector<ag::Var> parts = {ag::slice_rows(x.tokens, 0, 1), p,
                                      ag::slice_rows(x.tokens, 1, n - 1)};
        out.tokens = ag::vstack(parts);
        out.prompts = {1, m, -1, 0};
    } else {
        // BOS, first half, content words, second half, EOS
        const int h = m / 2;
        const Eigen::Index words = n - 2;
        std::vector<ag::Var> parts = {ag::slice_rows(x.tokens, 0, 1),
                                      ag::slice_rows(p, 0, h),
                                      ag::slice_rows(x.tokens, 1, words),
                                      ag::slice_rows(p, h, m - h),
                                      ag::slice_rows(x.tokens, n - 1, 1)};
        out.tokens = ag::vstack(parts);
        out.prompts = {1, h, static_cast<int>(1 + h + words), m - h};
    }
    if (x.modality == Modality::Text) out.eos_index = x.eos_index + m;
    return out;
}

TokenSequence prompt_replace(const TokenSequence& x, const PromptState& state, int layer) {
    const auto& bank = x.modality == Modality::Image ? state.visual : state.text;
    if (bank.empty() || state.length == 0) return x;
    if (!x.prompts.any()) throw_internal("prompt_replace on a sequence without prompt slots");
    const ag::Var& p = bank[static_cast<std::size_t>(layer)];
    const PromptSlots& s = x.prompts;
    const Eigen::Index n = x.tokens.rows();

    std::vector<ag::Var> parts;
    Eigen::Index cursor = 0;
    auto copy_upto = [&](Eigen::Index upto) {
        if (upto > cursor) parts.push_back(ag::slice_rows(x.tokens, cursor, upto - cursor));
        cursor = upto;
    };
    copy_upto(s.begin1);
    parts.push_back(ag::slice_rows(p, 0, s.len1));
    cursor += s.len1;
    if (s.len2 > 0) {
        copy_upto(s.begin2);
        parts.push_back(ag::slice_rows(p, s.len1, s.len2));
        cursor += s.len2;
    }
    copy_upto(n);

    TokenSequence out = x;
    out.tokens = ag::vstack(parts);
    return out;
}

// ---- attachment ----

std::vector<TensorSpec> strategy_tensor_specs(const EncoderConfig& config,
                                              const PetlStrategy& s) {
    std::vector<TensorSpec> specs;
    const long long dv = config.hidden_dim_vision, dt = config.hidden_dim_text;
    switch (s.kind) {
        case PetlKind::ZeroShot:
        case PetlKind::FullFinetune:
            break;
        case PetlKind::LinearProbe:
            for (const char* b : {"visual", "text"}) {
                specs.push_back({std::string("petl.probe.") + b + ".weight",
                                 config.joint_dim, config.joint_dim});
                specs.push_back({std::string("petl.probe.") + b + ".bias", 1, config.joint_dim});
            }
            break;
        case PetlKind::AdapterSequential:
            for (int l = 0; l < config.layers; ++l)
                for (const char* site : {"attn", "mlp"}) {
                    const std::string lv = "petl.adapter.visual." + std::to_string(l) + "." + site;
                    specs.push_back({lv + ".down", dv, s.d});
                    specs.push_back({lv + ".up", s.d, dv});
                    const std::string lt = "petl.adapter.text." + std::to_string(l) + "." + site;
                    specs.push_back({lt + ".down", dt, s.d});
                    specs.push_back({lt + ".up", s.d, dt});
                }
            break;
        case PetlKind::MrsAdapter:
        case PetlKind::MrsNoShare: {
            const bool shared = s.kind == PetlKind::MrsAdapter;
            const int copies = s.tie_across_layers ? 1 : config.layers;
            for (int k = 0; k < copies; ++k) {
                const std::string p =
                    s.tie_across_layers ? "petl.mrs." : "petl.mrs." + std::to_string(k) + ".";
                specs.push_back({p + "down_v", dv, s.d});
                specs.push_back({p + "down_t", dt, s.d});
                specs.push_back({p + "up_v", s.d, shared ? dv - s.r : dv});
                specs.push_back({p + "up_t", s.d, shared ? dt - s.r : dt});
                if (shared) specs.push_back({p + "up_share", s.d, s.r});
            }
            break;
        }
        case PetlKind::TextPrompt:
        case PetlKind::VisualPrompt:
        case PetlKind::VlPrompt: {
            if (s.prompt_length == 0) break;
            const int blocks = s.prompt_depth == PromptDepth::Deep ? config.layers : 1;
            const bool vis = s.kind != PetlKind::TextPrompt;
            const bool txt = s.kind != PetlKind::VisualPrompt;
            for (int k = 0; k < blocks; ++k) {
                if (vis)
                    specs.push_back({"petl.prompt.visual." + std::to_string(k) + ".tokens",
                                     s.prompt_length, dv});
                if (txt)
                    specs.push_back({"petl.prompt.text." + std::to_string(k) + ".tokens",
                                     s.prompt_length, dt});
            }
            break;
        }
    }
    return specs;
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

ag::Matrix strategy_init_value(const TensorSpec& spec, const InitSpec& init) {
    const auto r = static_cast<Eigen::Index>(spec.rows);
    const auto c = static_cast<Eigen::Index>(spec.cols);
    // Up-projections start at zero so a freshly attached adapter is a no-op.
    if (ends_with(spec.name, ".up") || ends_with(spec.name, ".up_v") ||
        ends_with(spec.name, ".up_t") || ends_with(spec.name, ".up_share") ||
        ends_with(spec.name, ".bias"))
        return ag::Matrix::Zero(r, c);
    if (ends_with(spec.name, ".weight")) return ag::Matrix::Identity(r, c);
    const double stddev = ends_with(spec.name, ".tokens") ? 0.02 : 0.01;
    Rng rng = Rng::derive(init.seed, "petl", hash_string64(spec.name));
    ag::Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal(0.0, stddev);
    return m;
}

} // namespace

void attach_strategy(DualEncoderModel& model, const PetlStrategy& s) {
    if (model.petl) throw_config("model already has an attached strategy");
    s.validate(model.config);

    model.params.set_all_trainable(s.kind == PetlKind::FullFinetune);
    for (const auto& spec : strategy_tensor_specs(model.config, s))
        model.params.add(spec.name, strategy_init_value(spec, model.init), true);

    PetlAttachment at;
    at.strategy = s;
    auto& ps = model.params;

    switch (s.kind) {
        case PetlKind::ZeroShot:
        case PetlKind::FullFinetune:
            break;
        case PetlKind::LinearProbe:
            at.probe = ProbeState{ps.at("petl.probe.visual.weight"), ps.at("petl.probe.visual.bias"),
                                  ps.at("petl.probe.text.weight"), ps.at("petl.probe.text.bias")};
            break;
        case PetlKind::AdapterSequential:
            for (int l = 0; l < model.config.layers; ++l) {
                const std::string lv = "petl.adapter.visual." + std::to_string(l) + ".";
                const std::string lt = "petl.adapter.text." + std::to_string(l) + ".";
                at.seq_attn_v.push_back({ps.at(lv + "attn.down"), ps.at(lv + "attn.up"), s.adapter_scale});
                at.seq_mlp_v.push_back({ps.at(lv + "mlp.down"), ps.at(lv + "mlp.up"), s.adapter_scale});
                at.seq_attn_t.push_back({ps.at(lt + "attn.down"), ps.at(lt + "attn.up"), s.adapter_scale});
                at.seq_mlp_t.push_back({ps.at(lt + "mlp.down"), ps.at(lt + "mlp.up"), s.adapter_scale});
            }
            break;
        case PetlKind::MrsAdapter:
        case PetlKind::MrsNoShare: {
            const bool shared = s.kind == PetlKind::MrsAdapter;
            const int copies = s.tie_across_layers ? 1 : model.config.layers;
            for (int k = 0; k < copies; ++k) {
                const std::string p =
                    s.tie_across_layers ? "petl.mrs." : "petl.mrs." + std::to_string(k) + ".";
                MrsAdapterParams m;
                m.down_v = ps.at(p + "down_v");
                m.down_t = ps.at(p + "down_t");
                m.up_v = ps.at(p + "up_v");
                m.up_t = ps.at(p + "up_t");
                if (shared) m.up_share = ps.at(p + "up_share");
                m.d = s.d;
                m.r = shared ? s.r : 0;
                m.shared = shared;
                at.mrs.push_back(std::move(m));
            }
            break;
        }
        case PetlKind::TextPrompt:
        case PetlKind::VisualPrompt:
        case PetlKind::VlPrompt: {
            PromptState st;
            st.length = s.prompt_length;
            st.depth = s.prompt_depth;
            st.position = s.prompt_position;
            if (s.prompt_length > 0) {
                const int blocks = s.prompt_depth == PromptDepth::Deep ? model.config.layers : 1;
                for (int k = 0; k < blocks; ++k) {
                    if (s.kind != PetlKind::TextPrompt)
                        st.visual.push_back(ps.at("petl.prompt.visual." + std::to_string(k) + ".tokens"));
                    if (s.kind != PetlKind::VisualPrompt)
                        st.text.push_back(ps.at("petl.prompt.text." + std::to_string(k) + ".tokens"));
                }
            }
            at.prompt = std::move(st);
            break;
        }
    }
    model.petl = std::move(at);
}

// ---- accounting ----

ParamReport count_parameters(const DualEncoderModel& model) {
    ParamReport report;
    for (const auto& e : model.params.entries()) {
        const long long n = static_cast<long long>(e.var.value().size());
        report.total += n;
        if (e.var.requires_grad()) report.trainable += n;
    }
    long long full = 0;
    for (const auto& spec : backbone_tensor_specs(model.config)) full += spec.count();
    report.reduction_pct =
        100.0 * (1.0 - static_cast<double>(report.trainable) / static_cast<double>(full));
    return report;
}

ParamReport count_parameters(const EncoderConfig& config, const PetlStrategy& strategy) {
    strategy.validate(config);
    long long backbone = 0;
    for (const auto& spec : backbone_tensor_specs(config)) backbone += spec.count();
    long long extra = 0;
    for (const auto& spec : strategy_tensor_specs(config, strategy)) extra += spec.count();

    ParamReport report;
    report.total = backbone + extra;
    report.trainable = (strategy.kind == PetlKind::FullFinetune ? backbone : 0) + extra;
    report.reduction_pct =
        100.0 * (1.0 - static_cast<double>(report.trainable) / static_cast<double>(backbone));
    return report;
}

} // namespace petlab::petl
