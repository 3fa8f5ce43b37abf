#pragma once

// JSON (de)serializers for the config structs. Internal to the library so the
// public headers stay dependency-free.

#include <string>
#include <vector>

#include "json.hpp"

#include "petlab/encoder.hpp"
#include "petlab/error.hpp"
#include "petlab/objectives.hpp"
#include "petlab/petl.hpp"

namespace petlab::jsonutil {

using nlohmann::json;

// Rejects keys that no reader claimed; catches config typos early.
inline void expect_keys(const json& obj, const std::vector<std::string>& allowed,
                        const std::string& where) {
    if (!obj.is_object()) throw_config(where + ": expected an object");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw_config(where + ": unknown key '" + key + "'");
    }
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw_config("key '" + key + "': " + e.what());
    }
}

inline json encoder_to_json(const EncoderConfig& c) {
    return json{{"image_size", c.image_size},
                {"patch_stride", c.patch_stride},
                {"layers", c.layers},
                {"hidden_dim_vision", c.hidden_dim_vision},
                {"hidden_dim_text", c.hidden_dim_text},
                {"heads_vision", c.heads_vision},
                {"heads_text", c.heads_text},
                {"joint_dim", c.joint_dim},
                {"context_length", c.context_length},
                {"vocab_size", c.vocab_size},
                {"mlp_ratio", c.mlp_ratio},
                {"ln_eps", c.ln_eps}};
}

inline EncoderConfig encoder_from_json(const json& j, const std::string& where) {
    expect_keys(j,
                {"image_size", "patch_stride", "layers", "hidden_dim_vision", "hidden_dim_text",
                 "heads_vision", "heads_text", "joint_dim", "context_length", "vocab_size",
                 "mlp_ratio", "ln_eps"},
                where);
    EncoderConfig c;
    c.image_size = get_or(j, "image_size", c.image_size);
    c.patch_stride = get_or(j, "patch_stride", c.patch_stride);
    c.layers = get_or(j, "layers", c.layers);
    c.hidden_dim_vision = get_or(j, "hidden_dim_vision", c.hidden_dim_vision);
    c.hidden_dim_text = get_or(j, "hidden_dim_text", c.hidden_dim_text);
    c.heads_vision = get_or(j, "heads_vision", c.heads_vision);
    c.heads_text = get_or(j, "heads_text", c.heads_text);
    c.joint_dim = get_or(j, "joint_dim", c.joint_dim);
    c.context_length = get_or(j, "context_length", c.context_length);
    c.vocab_size = get_or(j, "vocab_size", c.vocab_size);
    c.mlp_ratio = get_or(j, "mlp_ratio", c.mlp_ratio);
    c.ln_eps = get_or(j, "ln_eps", c.ln_eps);
    return c;
}

inline json strategy_to_json(const petl::PetlStrategy& s) {
    return json{{"kind", petl::petl_kind_name(s.kind)},
                {"d", s.d},
                {"r", s.r},
                {"adapter_scale", s.adapter_scale},
                {"tie_across_layers", s.tie_across_layers},
                {"prompt_length", s.prompt_length},
                {"prompt_depth", s.prompt_depth == petl::PromptDepth::Deep ? "deep" : "shallow"},
                {"prompt_position", s.prompt_position == petl::PromptPosition::Mid ? "mid" : "end"}};
}

inline petl::PetlStrategy strategy_from_json(const json& j, const std::string& where) {
    expect_keys(j,
                {"kind", "d", "r", "adapter_scale", "tie_across_layers", "prompt_length",
                 "prompt_depth", "prompt_position"},
                where);
    petl::PetlStrategy s;
    s.kind = petl::petl_kind_from_string(get_or<std::string>(j, "kind", "zero_shot"));
    s.d = get_or(j, "d", s.d);
    s.r = get_or(j, "r", s.r);
    s.adapter_scale = get_or(j, "adapter_scale", s.adapter_scale);
    s.tie_across_layers = get_or(j, "tie_across_layers", s.tie_across_layers);
    s.prompt_length = get_or(j, "prompt_length", s.prompt_length);
    const std::string depth = get_or<std::string>(j, "prompt_depth", "shallow");
    if (depth == "deep")
        s.prompt_depth = petl::PromptDepth::Deep;
    else if (depth == "shallow")
        s.prompt_depth = petl::PromptDepth::Shallow;
    else
        throw_config(where + ": unknown prompt_depth '" + depth + "'");
    const std::string position = get_or<std::string>(j, "prompt_position", "end");
    if (position == "mid")
        s.prompt_position = petl::PromptPosition::Mid;
    else if (position == "end")
        s.prompt_position = petl::PromptPosition::End;
    else
        throw_config(where + ": unknown prompt_position '" + position + "'");
    return s;
}

// Loss keys use the short margin symbol names (lambda, alpha_v, alpha_t).
inline json loss_to_json(const objectives::LossConfig& c) {
    return json{{"lambda", c.margin_cross},
                {"alpha_v", c.margin_image},
                {"alpha_t", c.margin_text},
                {"dropout_p", c.dropout_p},
                {"negative_mode", objectives::negative_mode_name(c.negative_mode)}};
}

inline objectives::LossConfig loss_from_json(const json& j, const std::string& where) {
    expect_keys(j, {"lambda", "alpha_v", "alpha_t", "dropout_p", "negative_mode"}, where);
    objectives::LossConfig c;
    c.margin_cross = get_or(j, "lambda", c.margin_cross);
    c.margin_image = get_or(j, "alpha_v", c.margin_image);
    c.margin_text = get_or(j, "alpha_t", c.margin_text);
    c.dropout_p = get_or(j, "dropout_p", c.dropout_p);
    c.negative_mode = objectives::negative_mode_from_string(
        get_or<std::string>(j, "negative_mode", objectives::negative_mode_name(c.negative_mode)));
    return c;
}

} // namespace petlab::jsonutil
