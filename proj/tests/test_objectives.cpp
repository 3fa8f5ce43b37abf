#include <doctest.h>

#include <cmath>
#include <vector>

#include "fd_check.hpp"
#include "oracles.hpp"
#include "petlab/error.hpp"
#include "petlab/objectives.hpp"

using namespace petlab;
using ag::Matrix;
using ag::Var;
namespace obj = petlab::objectives;
using obj::NegativeMode;

namespace {

Matrix unit_rows(Eigen::Index b, Eigen::Index d, Rng& rng) {
    Matrix m = fdcheck::random_matrix(b, d, rng);
    for (Eigen::Index i = 0; i < b; ++i) m.row(i).normalize();
    return m;
}

// Embeddings realizing the worked similarity numbers. The loss only reads
// dot products, so plain (non-unit) rows with the right inner products pin
// the formula exactly.
struct IntraExample {
    Matrix v{2, 4}, vp{2, 4};
    IntraExample() {
        v << 1.0, 0.0, 0.0, 0.0,
             0.3, 1.0, 0.0, 0.0;
        vp << 0.9, -0.07, 1.0, 0.0,
              0.95, 0.515, 0.0, 1.0;
        // <v1,v1+> = 0.9, <v1,v2+> = 0.95, <v2,v1+> = 0.2, <v2,v2+> = 0.8, <v1,v2> = 0.3
        REQUIRE(v.row(0).dot(vp.row(0)) == doctest::Approx(0.9).epsilon(1e-12));
        REQUIRE(v.row(0).dot(vp.row(1)) == doctest::Approx(0.95).epsilon(1e-12));
        REQUIRE(v.row(1).dot(vp.row(0)) == doctest::Approx(0.2).epsilon(1e-12));
        REQUIRE(v.row(1).dot(vp.row(1)) == doctest::Approx(0.8).epsilon(1e-12));
        REQUIRE(v.row(0).dot(v.row(1)) == doctest::Approx(0.3).epsilon(1e-12));
    }
};

struct CrossExample {
    Matrix v{2, 2}, t{2, 2};
    CrossExample() {
        v << 1.0, 0.0,
             0.0, 1.0;
        t << 0.6, 0.1,
             0.7, 0.5;
        // S = V T^T = [[0.6, 0.7], [0.1, 0.5]]
    }
};

} // namespace

TEST_CASE("intra_modal_loss: worked two-pair example evaluates to 0.25") {
    IntraExample ex;
    CHECK(obj::intra_modal_loss(ex.v, ex.vp, 0.2, NegativeMode::Hardest) ==
          doctest::Approx(0.25).epsilon(1e-12));
    // With B=2 each direction has a single negative, so sum == hardest.
    CHECK(obj::intra_modal_loss(ex.v, ex.vp, 0.2, NegativeMode::Sum) ==
          doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("intra_modal_loss: perfect positives with orthogonal negatives give 0") {
    Matrix v = Matrix::Identity(3, 3);
    CHECK(obj::intra_modal_loss(v, v, 0.2, NegativeMode::Hardest) == 0.0);
    CHECK(obj::intra_modal_loss(v, v, 0.2, NegativeMode::Sum) == 0.0);
}

TEST_CASE("intra_modal_loss: margin 0 with ordered cosines gives 0") {
    IntraExample ex;
    // alpha=0: hinges become [cos_neg - cos_pos]+, the worked numbers still
    // leave 0.95 > 0.9 so one term fires; shrink that negative first.
    Matrix vp = ex.vp;
    vp.row(1) *= 0.5; // <v1,v2+> = 0.475 < 0.9, <v2,v2+> = 0.4 > negatives 0.2/0.3
    CHECK(obj::intra_modal_loss(ex.v, vp, 0.0, NegativeMode::Hardest) == 0.0);
}

TEST_CASE("cross_modal_loss: worked example at two margins") {
    CrossExample ex;
    CHECK(obj::cross_modal_loss(ex.v, ex.t, 0.2, NegativeMode::Hardest) ==
          doctest::Approx(0.7).epsilon(1e-12));
    CHECK(obj::cross_modal_loss(ex.v, ex.t, 0.4, NegativeMode::Hardest) ==
          doctest::Approx(1.1).epsilon(1e-12));

    Matrix eye = Matrix::Identity(2, 2);
    CHECK(obj::cross_modal_loss(eye, eye, 0.2, NegativeMode::Hardest) == 0.0);
}

TEST_CASE("losses: oracle equivalence over 200 random batches, both modes") {
    Rng rng(1234);
    for (int trial = 0; trial < 200; ++trial) {
        const Eigen::Index b = 2 + static_cast<Eigen::Index>(rng.uniform_index(15));
        const Eigen::Index d = 4 + static_cast<Eigen::Index>(rng.uniform_index(61));
        Matrix v = unit_rows(b, d, rng);
        Matrix t = unit_rows(b, d, rng);
        Matrix vp = unit_rows(b, d, rng);
        Matrix tp = unit_rows(b, d, rng);

        std::vector<long long> ids;
        if (rng.uniform() < 0.5) {
            // Group pairs so some share a source image.
            for (Eigen::Index i = 0; i < b; ++i)
                ids.push_back(static_cast<long long>(rng.uniform_index(static_cast<std::uint64_t>(b) / 2 + 1)));
        }
        const double margin = rng.uniform(0.0, 0.6);

        for (bool hardest : {true, false}) {
            const NegativeMode mode = hardest ? NegativeMode::Hardest : NegativeMode::Sum;
            const double got_i = obj::intra_modal_loss(v, vp, margin, mode, ids);
            const double want_i = oracle::intra_loss_ref(v, vp, margin, hardest, ids);
            CHECK(std::abs(got_i - want_i) < 1e-10);
            CHECK(got_i >= 0.0);

            const double got_c = obj::cross_modal_loss(v, t, margin, mode, ids);
            const double want_c = oracle::cross_loss_ref(v, t, margin, hardest, ids);
            CHECK(std::abs(got_c - want_c) < 1e-10);

            obj::LossConfig cfg;
            cfg.margin_cross = margin;
            cfg.margin_image = margin * 0.7;
            cfg.margin_text = margin * 1.3;
            cfg.negative_mode = mode;
            obj::RetrievalBatch batch{v, t, vp, tp, ids};
            const double got_h = obj::hmmc_loss(batch, cfg);
            const double want_h = oracle::hmmc_loss_ref(v, t, vp, tp, cfg.margin_cross,
                                                        cfg.margin_image, cfg.margin_text,
                                                        hardest, ids);
            CHECK(std::abs(got_h - want_h) < 1e-10);
        }
    }
}

TEST_CASE("hmmc_loss: exact additivity of the three components") {
    Rng rng(55);
    Matrix v = unit_rows(6, 8, rng), t = unit_rows(6, 8, rng);
    Matrix vp = unit_rows(6, 8, rng), tp = unit_rows(6, 8, rng);
    obj::LossConfig cfg;
    obj::RetrievalBatch batch{v, t, vp, tp, {}};
    const double whole = obj::hmmc_loss(batch, cfg);
    const double parts = obj::cross_modal_loss(v, t, cfg.margin_cross, cfg.negative_mode) +
                         obj::intra_modal_loss(v, vp, cfg.margin_image, cfg.negative_mode) +
                         obj::intra_modal_loss(t, tp, cfg.margin_text, cfg.negative_mode);
    CHECK(std::abs(whole - parts) < 1e-12);
}

TEST_CASE("losses: nondecreasing in the margin") {
    Rng rng(66);
    Matrix v = unit_rows(8, 16, rng), t = unit_rows(8, 16, rng);
    for (NegativeMode mode : {NegativeMode::Hardest, NegativeMode::Sum}) {
        double prev = -1.0;
        for (double margin : {0.0, 0.1, 0.2, 0.4, 0.8}) {
            const double cur = obj::cross_modal_loss(v, t, margin, mode);
            CHECK(cur >= prev);
            prev = cur;
        }
    }
}

TEST_CASE("losses: same-image negatives are excluded") {
    CrossExample ex;
    // Both pairs drawn from one image: no admissible negatives remain.
    std::vector<long long> same = {7, 7};
    CHECK(obj::cross_modal_loss(ex.v, ex.t, 0.2, NegativeMode::Hardest, same) == 0.0);
    CHECK(obj::cross_modal_loss(ex.v, ex.t, 0.2, NegativeMode::Sum, same) == 0.0);

    IntraExample in;
    CHECK(obj::intra_modal_loss(in.v, in.vp, 0.2, NegativeMode::Hardest, same) == 0.0);

    // Distinct ids reproduce the unlabeled result.
    std::vector<long long> distinct = {7, 8};
    CHECK(obj::cross_modal_loss(ex.v, ex.t, 0.2, NegativeMode::Hardest, distinct) ==
          doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("losses: input validation") {
    Matrix one = Matrix::Ones(1, 4);
    CHECK_THROWS_AS(obj::intra_modal_loss(one, one, 0.2, NegativeMode::Hardest), Error);

    Matrix a = Matrix::Ones(3, 4), b = Matrix::Ones(3, 5);
    CHECK_THROWS_AS(obj::cross_modal_loss(a, b, 0.2, NegativeMode::Hardest), Error);

    std::vector<long long> short_ids = {1};
    Matrix c = Matrix::Identity(3, 3);
    CHECK_THROWS_AS(obj::cross_modal_loss(c, c, 0.2, NegativeMode::Hardest, short_ids), Error);

    obj::LossConfig bad;
    bad.margin_cross = -0.1;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = obj::LossConfig{};
    bad.dropout_p = 1.0;
    CHECK_THROWS_AS(bad.validate(), Error);

    CHECK_THROWS_AS(obj::negative_mode_from_string("middling"), Error);
    CHECK(obj::negative_mode_from_string("hardest") == NegativeMode::Hardest);
    CHECK(obj::negative_mode_from_string("sum") == NegativeMode::Sum);
}

TEST_CASE("dropout_augment: identity at p=0, unbiased mean, deterministic") {
    Rng rng(77);
    Matrix x = Matrix::Constant(250, 400, 1.0);
    Matrix same = obj::dropout_augment(x, 0.0, rng);
    CHECK(same == x);

    Rng r1(5), r2(5);
    Matrix a = obj::dropout_augment(x, 0.2, r1);
    Matrix b = obj::dropout_augment(x, 0.2, r2);
    CHECK(a == b);
    CHECK(a.mean() == doctest::Approx(1.0).epsilon(0.01)); // 1e5 draws of E=1

    CHECK_THROWS_AS(obj::dropout_augment(x, 1.0, rng), Error);
    CHECK_THROWS_AS(obj::dropout_augment(x, -0.1, rng), Error);
}

TEST_CASE("gradients: hmmc loss matches finite differences in both modes") {
    Rng rng(88);
    const Eigen::Index b = 6, d = 10;
    std::vector<Var> params = {Var::param(unit_rows(b, d, rng)), Var::param(unit_rows(b, d, rng)),
                               Var::param(unit_rows(b, d, rng)), Var::param(unit_rows(b, d, rng))};
    std::vector<long long> ids = {0, 0, 1, 2, 3, 3};

    for (NegativeMode mode : {NegativeMode::Hardest, NegativeMode::Sum}) {
        obj::LossConfig cfg;
        cfg.negative_mode = mode;
        auto loss = [&] {
            return obj::hmmc_loss(params[0], params[1], params[2], params[3], cfg, ids);
        };
        CHECK(fdcheck::max_grad_rel_err(params, loss, 1e-5) < 1e-6);
    }
}
