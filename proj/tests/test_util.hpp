#pragma once

#include <cstdint>
#include <vector>

#include "petlab/encoder.hpp"
#include "petlab/image.hpp"
#include "petlab/rng.hpp"

namespace testutil {

// Small but structurally complete config: 2 layers, multi-head, both towers.
inline petlab::EncoderConfig tiny_config() {
    petlab::EncoderConfig c;
    c.image_size = 16;
    c.patch_stride = 8;
    c.layers = 2;
    c.hidden_dim_vision = 16;
    c.hidden_dim_text = 12;
    c.heads_vision = 2;
    c.heads_text = 2;
    c.joint_dim = 8;
    c.context_length = 12;
    c.vocab_size = 32;
    c.mlp_ratio = 2;
    return c;
}

inline petlab::ImageTensor random_image(int size, std::uint64_t seed) {
    petlab::Rng rng(seed);
    petlab::ImageTensor img = petlab::ImageTensor::zeros(size, size);
    for (auto& v : img.data) v = rng.uniform();
    return img;
}

inline std::vector<int> sample_ids() { return {1, 5, 9, 4, 2}; } // BOS w w w EOS

} // namespace testutil
