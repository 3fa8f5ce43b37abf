#pragma once

#include <span>
#include <string>
#include <vector>

#include "petlab/autograd.hpp"
#include "petlab/rng.hpp"

namespace petlab::objectives {

enum class NegativeMode { Hardest, Sum };

const char* negative_mode_name(NegativeMode mode);
NegativeMode negative_mode_from_string(const std::string& name); // throws config error

struct LossConfig {
    double margin_cross = 0.2; // lambda
    double margin_image = 0.2; // alpha_v
    double margin_text = 0.2;  // alpha_t
    double dropout_p = 0.2;
    NegativeMode negative_mode = NegativeMode::Hardest;

    void validate() const;
};

// One training batch in embedding space. Row i of all four matrices comes
// from the same image-caption pair; image_id marks pairs sharing a source
// image (their captions are not usable as negatives for each other). An
// empty image_id treats all rows as distinct images.
struct RetrievalBatch {
    ag::Matrix images;     // V,  B x D unit rows
    ag::Matrix texts;      // T
    ag::Matrix images_aug; // V+ (dropout-augmented forward pass)
    ag::Matrix texts_aug;  // T+
    std::vector<long long> image_id;
};

// Entrywise inverted dropout: zero with probability p, survivors scaled by
// 1/(1-p). The mask depends only on the rng state.
ag::Matrix dropout_augment(const ag::Matrix& x, double p, Rng& rng);

// Bidirectional triplet loss within one modality. Positives are the
// augmented twins; negatives for pair i are (a) the augmented embeddings of
// other pairs against anchor i and (b) the original embeddings of other
// pairs against original anchor i. Hardest mode takes the max over
// admissible negatives per direction, sum mode adds them all.
ag::Var intra_modal_loss(const ag::Var& anchors, const ag::Var& positives, double margin,
                         NegativeMode mode, std::span<const long long> image_id = {});

// Bidirectional cross-modal triplet loss over S = V T^T.
ag::Var cross_modal_loss(const ag::Var& images, const ag::Var& texts, double margin,
                         NegativeMode mode, std::span<const long long> image_id = {});

// cross(V,T,lambda) + intra(V,V+,alpha_v) + intra(T,T+,alpha_t)
ag::Var hmmc_loss(const ag::Var& images, const ag::Var& texts, const ag::Var& images_aug,
                  const ag::Var& texts_aug, const LossConfig& cfg,
                  std::span<const long long> image_id = {});

// Plain-value wrappers.
double intra_modal_loss(const ag::Matrix& anchors, const ag::Matrix& positives, double margin,
                        NegativeMode mode, std::span<const long long> image_id = {});
double cross_modal_loss(const ag::Matrix& images, const ag::Matrix& texts, double margin,
                        NegativeMode mode, std::span<const long long> image_id = {});
double hmmc_loss(const RetrievalBatch& batch, const LossConfig& cfg);

} // namespace petlab::objectives
