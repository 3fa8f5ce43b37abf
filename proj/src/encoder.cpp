#include "petlab/encoder.hpp"

#include <cmath>
#include <string>

#include "petlab/error.hpp"

namespace petlab {

namespace {

int auto_heads(int hidden) { return std::max(1, hidden / 64); }

} // namespace

int EncoderConfig::resolved_heads_vision() const {
    return heads_vision > 0 ? heads_vision : auto_heads(hidden_dim_vision);
}

int EncoderConfig::resolved_heads_text() const {
    return heads_text > 0 ? heads_text : auto_heads(hidden_dim_text);
}

void EncoderConfig::validate() const {
    if (image_size <= 0 || patch_stride <= 0)
        throw_config("image_size and patch_stride must be positive");
    if (image_size % patch_stride != 0)
        throw_config("image_size (" + std::to_string(image_size) +
                     ") must be divisible by patch_stride (" + std::to_string(patch_stride) + ")");
    if (layers < 1) throw_config("layers must be >= 1");
    if (hidden_dim_vision <= 0 || hidden_dim_text <= 0 || joint_dim <= 0)
        throw_config("hidden and joint dimensions must be positive");
    if (hidden_dim_vision % resolved_heads_vision() != 0)
        throw_config("hidden_dim_vision must be divisible by its head count");
    if (hidden_dim_text % resolved_heads_text() != 0)
        throw_config("hidden_dim_text must be divisible by its head count");
    if (context_length < 3)
        throw_config("context_length must be >= 3 (BOS + word + EOS)");
    if (vocab_size < 3) throw_config("vocab_size must cover the special tokens");
    if (mlp_ratio < 1) throw_config("mlp_ratio must be >= 1");
    if (!(ln_eps > 0.0)) throw_config("ln_eps must be positive");
}

// ---- ParamStore ----

ag::Var ParamStore::add(const std::string& name, ag::Matrix value, bool trainable) {
    if (index_.count(name)) throw_internal("duplicate parameter name: " + name);
    ag::Var v = ag::Var::param(std::move(value), trainable);
    index_[name] = entries_.size();
    entries_.push_back({name, v});
    return v;
}

const ag::Var& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw_internal("unknown parameter: " + name);
    return entries_[it->second].var;
}

ag::Var& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw_internal("unknown parameter: " + name);
    return entries_[it->second].var;
}

void ParamStore::set_trainable(const std::string& name, bool flag) {
    at(name).set_requires_grad(flag);
}

void ParamStore::set_all_trainable(bool flag) {
    for (auto& e : entries_) e.var.set_requires_grad(flag);
}

// ---- layout ----

std::vector<TensorSpec> backbone_tensor_specs(const EncoderConfig& c) {
    std::vector<TensorSpec> specs;
    auto block_specs = [&](const std::string& branch, long long dim, long long mlp) {
        for (int l = 0; l < c.layers; ++l) {
            const std::string p = branch + ".blocks." + std::to_string(l) + ".";
            specs.push_back({p + "ln1.gamma", 1, dim});
            specs.push_back({p + "ln1.beta", 1, dim});
            for (const char* w : {"wq", "wk", "wv", "wo"}) {
                specs.push_back({p + "attn." + w, dim, dim});
                specs.push_back({p + "attn.b" + std::string(1, w[1]), 1, dim});
            }
            specs.push_back({p + "ln2.gamma", 1, dim});
            specs.push_back({p + "ln2.beta", 1, dim});
            specs.push_back({p + "mlp.w1", dim, mlp});
            specs.push_back({p + "mlp.b1", 1, mlp});
            specs.push_back({p + "mlp.w2", mlp, dim});
            specs.push_back({p + "mlp.b2", 1, dim});
        }
    };

    const long long dv = c.hidden_dim_vision, dt = c.hidden_dim_text;
    specs.push_back({"visual.patch_proj", 3LL * c.patch_stride * c.patch_stride, dv});
    specs.push_back({"visual.cls", 1, dv});
    specs.push_back({"visual.pos", c.vision_tokens(), dv});
    block_specs("visual", dv, dv * c.mlp_ratio);
    specs.push_back({"visual.proj", dv, c.joint_dim});

    specs.push_back({"text.word_emb", c.vocab_size, dt});
    specs.push_back({"text.pos", c.context_length, dt});
    block_specs("text", dt, dt * c.mlp_ratio);
    specs.push_back({"text.proj", dt, c.joint_dim});
    return specs;
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

ag::Matrix backbone_init_value(const TensorSpec& spec, const InitSpec& init) {
    const auto r = static_cast<Eigen::Index>(spec.rows);
    const auto c = static_cast<Eigen::Index>(spec.cols);
    if (init.zeros) return ag::Matrix::Zero(r, c);
    if (ends_with(spec.name, ".gamma")) return ag::Matrix::Ones(r, c);
    if (ends_with(spec.name, ".beta")) return ag::Matrix::Zero(r, c);
    for (const char* b : {".bq", ".bk", ".bv", ".bo", ".b1", ".b2"})
        if (ends_with(spec.name, b)) return ag::Matrix::Zero(r, c);
    Rng rng = Rng::derive(init.seed, "init", hash_string64(spec.name));
    ag::Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal(0.0, init.stddev);
    return m;
}

} // namespace

DualEncoderModel DualEncoderModel::build(const EncoderConfig& config, const InitSpec& init) {
    config.validate();
    DualEncoderModel model;
    model.config = config;
    model.init = init;
    for (const auto& spec : backbone_tensor_specs(config))
        model.params.add(spec.name, backbone_init_value(spec, init), false);
    return model;
}

// ---- forward ops ----

TokenSequence embed_image_tokens(const ImageTensor& image, const DualEncoderModel& model) {
    const EncoderConfig& c = model.config;
    if (image.height != c.image_size || image.width != c.image_size)
        throw_config("image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     ", config expects " + std::to_string(c.image_size) + " square");
    for (double v : image.data)
        if (!std::isfinite(v)) throw_input("image contains non-finite pixel values");

    const int s = c.patch_stride, n = c.patches_per_side();
    ag::Matrix patches(static_cast<Eigen::Index>(n) * n, 3LL * s * s);
    for (int py = 0; py < n; ++py)
        for (int px = 0; px < n; ++px) {
            const Eigen::Index row = static_cast<Eigen::Index>(py) * n + px;
            for (int dy = 0; dy < s; ++dy)
                for (int dx = 0; dx < s; ++dx)
                    for (int ch = 0; ch < 3; ++ch)
                        patches(row, (static_cast<Eigen::Index>(dy) * s + dx) * 3 + ch) =
                            image.at(py * s + dy, px * s + dx, ch);
        }

    ag::Var patch_tokens = ag::matmul(ag::Var::constant(std::move(patches)),
                                      model.params.at("visual.patch_proj"));
    std::vector<ag::Var> rows = {model.params.at("visual.cls"), patch_tokens};
    ag::Var tokens = ag::add(ag::vstack(rows), model.params.at("visual.pos"));

    TokenSequence seq;
    seq.tokens = std::move(tokens);
    seq.modality = Modality::Image;
    return seq;
}

TokenSequence embed_text_tokens(std::span<const int> token_ids, const DualEncoderModel& model) {
    const EncoderConfig& c = model.config;
    const int n = static_cast<int>(token_ids.size());
    if (n < 2) throw_input("text token sequence must at least carry BOS and EOS");
    if (n > c.context_length)
        throw_input("text token sequence of length " + std::to_string(n) +
                     " exceeds context_length " + std::to_string(c.context_length));
    for (int id : token_ids)
        if (id < 0 || id >= c.vocab_size)
            throw_input("token id " + std::to_string(id) + " outside vocabulary of size " +
                        std::to_string(c.vocab_size));

    ag::Var words = ag::select_rows(model.params.at("text.word_emb"), token_ids);
    ag::Var pos = ag::slice_rows(model.params.at("text.pos"), 0, n);

    TokenSequence seq;
    seq.tokens = ag::add(words, pos);
    seq.modality = Modality::Text;
    seq.eos_index = n - 1;
    return seq;
}

namespace {

ag::Var mha_forward(const ag::Var& x, const std::string& prefix, int heads, const ParamStore& ps) {
    ag::Var q = ag::add_rowvec(ag::matmul(x, ps.at(prefix + "attn.wq")), ps.at(prefix + "attn.bq"));
    ag::Var k = ag::add_rowvec(ag::matmul(x, ps.at(prefix + "attn.wk")), ps.at(prefix + "attn.bk"));
    ag::Var v = ag::add_rowvec(ag::matmul(x, ps.at(prefix + "attn.wv")), ps.at(prefix + "attn.bv"));

    const Eigen::Index dh = x.cols() / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<ag::Var> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        ag::Var qh = ag::slice_cols(q, h * dh, dh);
        ag::Var kh = ag::slice_cols(k, h * dh, dh);
        ag::Var vh = ag::slice_cols(v, h * dh, dh);
        ag::Var attn = ag::softmax_rows(ag::scalar_mul(ag::matmul_nt(qh, kh), scale));
        outs.push_back(ag::matmul(attn, vh));
    }
    ag::Var merged = ag::hstack(outs);
    return ag::add_rowvec(ag::matmul(merged, ps.at(prefix + "attn.wo")), ps.at(prefix + "attn.bo"));
}

ag::Var mlp_forward(const ag::Var& x, const std::string& prefix, const ParamStore& ps) {
    ag::Var h = ag::add_rowvec(ag::matmul(x, ps.at(prefix + "mlp.w1")), ps.at(prefix + "mlp.b1"));
    return ag::add_rowvec(ag::matmul(ag::gelu(h), ps.at(prefix + "mlp.w2")), ps.at(prefix + "mlp.b2"));
}

} // namespace

TokenSequence block_forward(const TokenSequence& x, int layer_index, const DualEncoderModel& model) {
    const EncoderConfig& c = model.config;
    if (layer_index < 0 || layer_index >= c.layers)
        throw_config("layer index " + std::to_string(layer_index) + " out of range [0, " +
                     std::to_string(c.layers) + ")");
    const bool vision = x.modality == Modality::Image;
    const int expected = vision ? c.hidden_dim_vision : c.hidden_dim_text;
    if (x.tokens.cols() != expected)
        throw_config("token width " + std::to_string(x.tokens.cols()) +
                     " does not match branch hidden dim " + std::to_string(expected));

    const std::string prefix = (vision ? std::string("visual.blocks.") : std::string("text.blocks.")) +
                               std::to_string(layer_index) + ".";
    const int heads = vision ? c.resolved_heads_vision() : c.resolved_heads_text();
    const ParamStore& ps = model.params;
    const petl::PetlAttachment* at = model.petl ? &*model.petl : nullptr;

    ag::Var ln1 = ag::layer_norm_rows(x.tokens, ps.at(prefix + "ln1.gamma"),
                                      ps.at(prefix + "ln1.beta"), c.ln_eps);
    ag::Var attn = mha_forward(ln1, prefix, heads, ps);
    if (at && !at->seq_attn_v.empty()) {
        const auto& stack = vision ? at->seq_attn_v : at->seq_attn_t;
        attn = petl::adapter_forward(attn, stack[static_cast<std::size_t>(layer_index)]);
    }
    ag::Var xhat = ag::add(attn, x.tokens);

    ag::Var ln2 = ag::layer_norm_rows(xhat, ps.at(prefix + "ln2.gamma"),
                                      ps.at(prefix + "ln2.beta"), c.ln_eps);
    ag::Var mlp = mlp_forward(ln2, prefix, ps);
    if (at && !at->seq_mlp_v.empty()) {
        const auto& stack = vision ? at->seq_mlp_v : at->seq_mlp_t;
        mlp = petl::adapter_forward(mlp, stack[static_cast<std::size_t>(layer_index)]);
    }
    ag::Var out = ag::add(mlp, xhat);

    if (at && !at->mrs.empty())
        out = ag::add(out, petl::mrs_adapter_forward(xhat, at->mrs_for_layer(layer_index),
                                                     vision ? petl::Branch::Vision
                                                            : petl::Branch::Text));

    TokenSequence result = x;
    result.tokens = std::move(out);
    return result;
}

ag::Var pool_and_project_var(const TokenSequence& x, const DualEncoderModel& model) {
    const bool vision = x.modality == Modality::Image;
    Eigen::Index row = 0;
    if (!vision) {
        if (x.eos_index < 0 || x.eos_index >= x.tokens.rows())
            throw_input("text sequence has no valid EOS position to pool");
        row = x.eos_index;
    }
    ag::Var pooled = ag::slice_rows(x.tokens, row, 1);
    ag::Var projected = ag::matmul(pooled, model.params.at(vision ? "visual.proj" : "text.proj"));
    if (model.petl && model.petl->probe) {
        const auto& pr = *model.petl->probe;
        projected = ag::add(ag::matmul(projected, vision ? pr.w_v : pr.w_t),
                            vision ? pr.b_v : pr.b_t);
    }
    return ag::l2_normalize_rows(projected);
}

Embedding pool_and_project(const TokenSequence& x, const DualEncoderModel& model) {
    ag::NoGradGuard ng;
    return Embedding{pool_and_project_var(x, model).value().row(0)};
}

namespace {

ag::Var encode_sequence(TokenSequence seq, const DualEncoderModel& model,
                        const AugmentSpec* augment) {
    if (augment && augment->dropout_p != 0.0) {
        if (!(augment->dropout_p >= 0.0 && augment->dropout_p < 1.0))
            throw_config("augmentation dropout probability must lie in [0, 1)");
        if (!augment->rng) throw_internal("augmentation requested without an RNG");
        seq.tokens = ag::dropout(seq.tokens, augment->dropout_p, *augment->rng);
    }

    const petl::PromptState* prompt = nullptr;
    if (model.petl && model.petl->prompt) {
        const auto& pr = *model.petl->prompt;
        const auto& bank = seq.modality == Modality::Image ? pr.visual : pr.text;
        if (!bank.empty() && pr.length > 0) prompt = &pr;
    }

    for (int l = 0; l < model.config.layers; ++l) {
        if (prompt) {
            if (l == 0)
                seq = petl::prompt_prepend(seq, *prompt, model.config);
            else if (prompt->depth == petl::PromptDepth::Deep)
                seq = petl::prompt_replace(seq, *prompt, l);
        }
        seq = block_forward(seq, l, model);
    }
    return pool_and_project_var(seq, model);
}

} // namespace

ag::Var encode_image_var(const ImageTensor& image, const DualEncoderModel& model,
                         const AugmentSpec* augment) {
    return encode_sequence(embed_image_tokens(image, model), model, augment);
}

ag::Var encode_text_var(std::span<const int> token_ids, const DualEncoderModel& model,
                        const AugmentSpec* augment) {
    return encode_sequence(embed_text_tokens(token_ids, model), model, augment);
}

Embedding encode_image(const ImageTensor& image, const DualEncoderModel& model,
                       const AugmentSpec* augment) {
    ag::NoGradGuard ng;
    return Embedding{encode_image_var(image, model, augment).value().row(0)};
}

Embedding encode_text(std::span<const int> token_ids, const DualEncoderModel& model,
                      const AugmentSpec* augment) {
    ag::NoGradGuard ng;
    return Embedding{encode_text_var(token_ids, model, augment).value().row(0)};
}

} // namespace petlab
