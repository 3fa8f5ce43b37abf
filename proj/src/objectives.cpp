#include "petlab/objectives.hpp"

#include <string>

#include "petlab/error.hpp"

namespace petlab::objectives {

using ag::Matrix;
using ag::Var;

const char* negative_mode_name(NegativeMode mode) {
    return mode == NegativeMode::Hardest ? "hardest" : "sum";
}

NegativeMode negative_mode_from_string(const std::string& name) {
    if (name == "hardest") return NegativeMode::Hardest;
    if (name == "sum") return NegativeMode::Sum;
    throw_config("unknown negative_mode: '" + name + "' (expected hardest|sum)");
}

void LossConfig::validate() const {
    if (margin_cross < 0.0 || margin_image < 0.0 || margin_text < 0.0)
        throw_config("loss margins must be >= 0");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0))
        throw_config("loss.dropout_p must lie in [0, 1)");
}

Matrix dropout_augment(const Matrix& x, double p, Rng& rng) {
    if (p == 0.0) return x;
    return x.cwiseProduct(ag::make_dropout_mask(x.rows(), x.cols(), p, rng));
}

namespace {

// mask(i,j) = 1 when pair j may serve as a negative for pair i.
Matrix admissible_mask(Eigen::Index b, std::span<const long long> ids) {
    Matrix mask = Matrix::Ones(b, b);
    mask.diagonal().setZero();
    if (!ids.empty()) {
        if (static_cast<Eigen::Index>(ids.size()) != b)
            throw_input("image_id size does not match batch size");
        for (Eigen::Index i = 0; i < b; ++i)
            for (Eigen::Index j = 0; j < b; ++j)
                if (i != j && ids[static_cast<std::size_t>(i)] == ids[static_cast<std::size_t>(j)])
                    mask(i, j) = 0.0;
    }
    return mask;
}

// Sum over i of hinge terms for one direction: negatives live in row i of
// N, the positive similarity in d(i). Rows without admissible negatives
// contribute zero.
Var directional_loss(const Var& negatives, const Var& positive_diag, double margin,
                     NegativeMode mode, const Matrix& mask) {
    if (mode == NegativeMode::Sum) {
        Var hinge = ag::relu(ag::add_scalar(ag::sub_colvec(negatives, positive_diag), margin));
        return ag::sum_masked(hinge, mask);
    }
    Eigen::VectorXd valid;
    Var hardest = ag::rowmax_masked(negatives, mask, valid);
    Var hinge = ag::relu(ag::add_scalar(ag::sub(hardest, positive_diag), margin));
    return ag::sum_all(ag::mul_colvec_const(hinge, valid));
}

void check_batch(const Var& a, const Var& b, std::span<const long long> ids) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw_input("embedding matrices must share shape");
    if (a.rows() < 2) throw_input("triplet losses need a batch of at least 2 pairs");
    if (!ids.empty() && static_cast<Eigen::Index>(ids.size()) != a.rows())
        throw_input("image_id size does not match batch size");
}

} // namespace

Var intra_modal_loss(const Var& anchors, const Var& positives, double margin, NegativeMode mode,
                     std::span<const long long> image_id) {
    check_batch(anchors, positives, image_id);
    const Matrix mask = admissible_mask(anchors.rows(), image_id);

    Var pos_sims = ag::matmul_nt(anchors, positives); // P(i,j) = <v_i, v+_j>
    Var d = ag::diag(pos_sims);
    Var orig_sims = ag::matmul_nt(anchors, anchors); // O(i,j) = <v_i, v_j>

    // Direction 1: augmented embeddings of other pairs as negatives.
    // Direction 2: original embeddings of other pairs as negatives.
    return ag::add(directional_loss(pos_sims, d, margin, mode, mask),
                   directional_loss(orig_sims, d, margin, mode, mask));
}

Var cross_modal_loss(const Var& images, const Var& texts, double margin, NegativeMode mode,
                     std::span<const long long> image_id) {
    check_batch(images, texts, image_id);
    const Matrix mask = admissible_mask(images.rows(), image_id);

    Var s = ag::matmul_nt(images, texts); // S(i,j) = <v_i, t_j>
    Var d = ag::diag(s);

    // Direction 1: other captions against image i (row i of S).
    // Direction 2: other images against caption i (column i of S).
    return ag::add(directional_loss(s, d, margin, mode, mask),
                   directional_loss(ag::transpose(s), d, margin, mode, mask.transpose()));
}

Var hmmc_loss(const Var& images, const Var& texts, const Var& images_aug, const Var& texts_aug,
              const LossConfig& cfg, std::span<const long long> image_id) {
    cfg.validate();
    Var cross = cross_modal_loss(images, texts, cfg.margin_cross, cfg.negative_mode, image_id);
    Var intra_v =
        intra_modal_loss(images, images_aug, cfg.margin_image, cfg.negative_mode, image_id);
    Var intra_t = intra_modal_loss(texts, texts_aug, cfg.margin_text, cfg.negative_mode, image_id);
    return ag::add(cross, ag::add(intra_v, intra_t));
}

double intra_modal_loss(const Matrix& anchors, const Matrix& positives, double margin,
                        NegativeMode mode, std::span<const long long> image_id) {
    ag::NoGradGuard ng;
    return intra_modal_loss(Var::constant(anchors), Var::constant(positives), margin, mode,
                            image_id)
        .item();
}

double cross_modal_loss(const Matrix& images, const Matrix& texts, double margin,
                        NegativeMode mode, std::span<const long long> image_id) {
    ag::NoGradGuard ng;
    return cross_modal_loss(Var::constant(images), Var::constant(texts), margin, mode, image_id)
        .item();
}

double hmmc_loss(const RetrievalBatch& batch, const LossConfig& cfg) {
    ag::NoGradGuard ng;
    return hmmc_loss(Var::constant(batch.images), Var::constant(batch.texts),
                     Var::constant(batch.images_aug), Var::constant(batch.texts_aug), cfg,
                     batch.image_id)
        .item();
}

} // namespace petlab::objectives
