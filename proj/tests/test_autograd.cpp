#include <doctest.h>

#include <cmath>
#include <vector>

#include "fd_check.hpp"
#include "petlab/autograd.hpp"
#include "petlab/error.hpp"
#include "petlab/rng.hpp"

using namespace petlab;
using ag::Matrix;
using ag::Var;
using fdcheck::max_grad_rel_err;
using fdcheck::random_matrix;
using fdcheck::random_matrix_off_kink;

namespace {

// Scalarize a matrix output with a fixed random projection so every entry
// contributes a distinct weight to the loss.
Var weighted_sum(const Var& out, const Matrix& weights) {
    return ag::sum_all(ag::mul_const(out, weights));
}

constexpr double kTol = 1e-6;

} // namespace

TEST_CASE("gradients: elementwise ops") {
    Rng rng(11);
    Matrix w = random_matrix(4, 5, rng);
    std::vector<Var> ps = {Var::param(random_matrix(4, 5, rng)),
                           Var::param(random_matrix(4, 5, rng))};

    CHECK(max_grad_rel_err(ps, [&] { return weighted_sum(ag::add(ps[0], ps[1]), w); }) < kTol);
    CHECK(max_grad_rel_err(ps, [&] { return weighted_sum(ag::sub(ps[0], ps[1]), w); }) < kTol);
    CHECK(max_grad_rel_err(ps, [&] { return weighted_sum(ag::mul(ps[0], ps[1]), w); }) < kTol);
    CHECK(max_grad_rel_err(ps, [&] { return weighted_sum(ag::scalar_mul(ps[0], -1.7), w); }) < kTol);
    CHECK(max_grad_rel_err(ps, [&] { return weighted_sum(ag::add_scalar(ps[0], 0.3), w); }) < kTol);

    Matrix mask = random_matrix(4, 5, rng);
    CHECK(max_grad_rel_err(ps, [&] { return weighted_sum(ag::mul_const(ps[0], mask), w); }) < kTol);
}

TEST_CASE("gradients: relu and gelu") {
    Rng rng(12);
    Matrix w = random_matrix(6, 3, rng);
    std::vector<Var> ps = {Var::param(random_matrix_off_kink(6, 3, rng))};
    CHECK(max_grad_rel_err(ps, [&] { return weighted_sum(ag::relu(ps[0]), w); }) < kTol);
    CHECK(max_grad_rel_err(ps, [&] { return weighted_sum(ag::gelu(ps[0]), w); }) < kTol);
}

TEST_CASE("gradients: matmul family") {
    Rng rng(13);
    Matrix w = random_matrix(3, 6, rng);
    std::vector<Var> ps = {Var::param(random_matrix(3, 4, rng)),
                           Var::param(random_matrix(4, 6, rng)),
                           Var::param(random_matrix(6, 4, rng))};
    CHECK(max_grad_rel_err(ps, [&] { return weighted_sum(ag::matmul(ps[0], ps[1]), w); }) < kTol);
    CHECK(max_grad_rel_err(ps, [&] { return weighted_sum(ag::matmul_nt(ps[0], ps[2]), w); }) < kTol);

    Matrix wt = random_matrix(4, 3, rng);
    CHECK(max_grad_rel_err(ps, [&] { return weighted_sum(ag::transpose(ps[0]), wt); }) < kTol);
}

TEST_CASE("gradients: broadcast ops") {
    Rng rng(14);
    Matrix w = random_matrix(5, 5, rng);
    std::vector<Var> ps = {Var::param(random_matrix(5, 5, rng)),
                           Var::param(random_matrix(1, 5, rng)),
                           Var::param(random_matrix(5, 1, rng))};
    CHECK(max_grad_rel_err(ps, [&] { return weighted_sum(ag::add_rowvec(ps[0], ps[1]), w); }) < kTol);
    CHECK(max_grad_rel_err(ps, [&] { return weighted_sum(ag::sub_colvec(ps[0], ps[2]), w); }) < kTol);
    CHECK(max_grad_rel_err(ps, [&] { return weighted_sum(ag::sub_rowvec(ps[0], ps[2]), w); }) < kTol);

    Eigen::VectorXd scale(5);
    for (int i = 0; i < 5; ++i) scale(i) = 0.5 + i;
    CHECK(max_grad_rel_err(ps, [&] {
              return weighted_sum(ag::mul_colvec_const(ps[0], scale), w);
          }) < kTol);
}

TEST_CASE("gradients: shape ops") {
    Rng rng(15);
    std::vector<Var> ps = {Var::param(random_matrix(6, 4, rng)),
                           Var::param(random_matrix(2, 4, rng)),
                           Var::param(random_matrix(6, 3, rng))};

    Matrix w1 = random_matrix(3, 4, rng);
    CHECK(max_grad_rel_err(ps, [&] { return weighted_sum(ag::slice_rows(ps[0], 2, 3), w1); }) < kTol);

    Matrix w2 = random_matrix(6, 2, rng);
    CHECK(max_grad_rel_err(ps, [&] { return weighted_sum(ag::slice_cols(ps[0], 1, 2), w2); }) < kTol);

    Matrix w3 = random_matrix(8, 4, rng);
    CHECK(max_grad_rel_err(ps, [&] {
              std::vector<Var> parts = {ps[0], ps[1]};
              return weighted_sum(ag::vstack(parts), w3);
          }) < kTol);

    Matrix w4 = random_matrix(6, 7, rng);
    CHECK(max_grad_rel_err(ps, [&] {
              std::vector<Var> parts = {ps[0], ps[2]};
              return weighted_sum(ag::hstack(parts), w4);
          }) < kTol);

    std::vector<Var> sq = {Var::param(random_matrix(5, 5, rng))};
    Matrix w5 = random_matrix(5, 1, rng);
    CHECK(max_grad_rel_err(sq, [&] { return weighted_sum(ag::diag(sq[0]), w5); }) < kTol);

    // gather with a repeated index must accumulate into the shared source row
    std::vector<int> idx = {2, 0, 2, 5};
    Matrix w6 = random_matrix(4, 4, rng);
    CHECK(max_grad_rel_err(ps, [&] {
              return weighted_sum(ag::select_rows(ps[0], idx), w6);
          }) < kTol);
}

TEST_CASE("gradients: layer norm, softmax, l2 normalize") {
    Rng rng(16);
    Matrix w = random_matrix(4, 6, rng);
    std::vector<Var> ps = {Var::param(random_matrix(4, 6, rng)),
                           Var::param(random_matrix(1, 6, rng)),
                           Var::param(random_matrix(1, 6, rng))};
    CHECK(max_grad_rel_err(ps, [&] {
              return weighted_sum(ag::layer_norm_rows(ps[0], ps[1], ps[2], 1e-5), w);
          }) < kTol);
    CHECK(max_grad_rel_err(ps, [&] { return weighted_sum(ag::softmax_rows(ps[0]), w); }) < kTol);
    CHECK(max_grad_rel_err(ps, [&] { return weighted_sum(ag::l2_normalize_rows(ps[0]), w); }) < kTol);
}

TEST_CASE("gradients: reductions") {
    Rng rng(17);
    std::vector<Var> ps = {Var::param(random_matrix_off_kink(5, 5, rng))};
    CHECK(max_grad_rel_err(ps, [&] { return ag::sum_all(ps[0]); }) < kTol);

    Matrix mask = Matrix::Ones(5, 5);
    mask.diagonal().setZero();
    CHECK(max_grad_rel_err(ps, [&] { return ag::sum_masked(ps[0], mask); }) < kTol);

    Matrix w = random_matrix(5, 1, rng);
    CHECK(max_grad_rel_err(ps, [&] {
              Eigen::VectorXd valid;
              return weighted_sum(ag::rowmax_masked(ps[0], mask, valid), w);
          }) < kTol);
}

TEST_CASE("values: softmax rows sum to one and are max-shifted stable") {
    Rng rng(18);
    Var x = Var::constant(1e4 * random_matrix(3, 7, rng));
    Var y = ag::softmax_rows(x);
    for (int i = 0; i < 3; ++i) {
        CHECK(y.value().row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(y.value().row(i).minCoeff() >= 0.0);
    }
}

TEST_CASE("values: layer norm standardizes rows") {
    Rng rng(19);
    Var x = Var::constant(random_matrix(4, 16, rng, 3.0));
    Var gamma = Var::constant(Matrix::Ones(1, 16));
    Var beta = Var::constant(Matrix::Zero(1, 16));
    Var y = ag::layer_norm_rows(x, gamma, beta, 1e-5);
    for (int i = 0; i < 4; ++i) {
        const double mean = y.value().row(i).mean();
        const double var = y.value().row(i).array().square().mean() - mean * mean;
        CHECK(std::abs(mean) < 1e-12);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("values: rowmax ties resolve to the lowest column index") {
    Matrix a(2, 4);
    a << 1.0, 3.0, 3.0, 2.0,
         -1.0, -1.0, -5.0, -1.0;
    Matrix mask = Matrix::Ones(2, 4);
    mask(0, 1) = 0.0; // exclude the first of the tied maxima in row 0
    Eigen::VectorXd valid;
    Var x = Var::param(a);
    Var m = ag::rowmax_masked(x, mask, valid);
    CHECK(m.value()(0, 0) == 3.0);
    CHECK(m.value()(1, 0) == -1.0);

    ag::backward(ag::sum_all(m));
    CHECK(x.grad()(0, 2) == 1.0); // masked column 1 skipped, tie at column 2 wins
    CHECK(x.grad()(0, 1) == 0.0);
    CHECK(x.grad()(1, 0) == 1.0); // tie across columns 0,1,3 -> lowest index
    CHECK(x.grad()(1, 1) == 0.0);
    CHECK(x.grad()(1, 3) == 0.0);
}

TEST_CASE("values: rowmax with an all-masked row reports invalid and emits zero") {
    Matrix a = Matrix::Constant(2, 3, 9.0);
    Matrix mask = Matrix::Ones(2, 3);
    mask.row(1).setZero();
    Eigen::VectorXd valid;
    Var m = ag::rowmax_masked(Var::constant(a), mask, valid);
    CHECK(valid(0) == 1.0);
    CHECK(valid(1) == 0.0);
    CHECK(m.value()(1, 0) == 0.0);
}

TEST_CASE("values: dropout mask mean is close to one and p=0 is identity") {
    Rng rng(20);
    const double p = 0.2;
    Matrix mask = ag::make_dropout_mask(400, 250, p, rng);
    const double mean = mask.mean();
    CHECK(mean == doctest::Approx(1.0).epsilon(0.01));
    const double scale = 1.0 / (1.0 - p);
    for (int i = 0; i < 20; ++i) {
        const double v = mask(i, i);
        CHECK((v == 0.0 || v == doctest::Approx(scale).epsilon(1e-12)));
    }

    Rng rng2(21);
    Matrix ones = ag::make_dropout_mask(3, 3, 0.0, rng2);
    CHECK(ones.isOnes());
    Rng rng3(21);
    CHECK(rng2.next_u64() == rng3.next_u64()); // p=0 consumed no randomness

    CHECK_THROWS_AS(ag::make_dropout_mask(2, 2, 1.0, rng), Error);
}

TEST_CASE("values: accumulation when a parameter feeds two branches") {
    Matrix v(1, 1);
    v << 3.0;
    Var x = Var::param(v);
    Var y = ag::add(ag::mul(x, x), ag::scalar_mul(x, 4.0)); // x^2 + 4x -> d/dx = 2x + 4
    ag::backward(ag::sum_all(y));
    CHECK(x.grad()(0, 0) == doctest::Approx(10.0));
}

TEST_CASE("values: NoGradGuard suppresses the tape") {
    Var x = Var::param(Matrix::Ones(2, 2));
    ag::NoGradGuard ng;
    Var y = ag::mul(x, x);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->parents.empty());
}

TEST_CASE("values: frozen inputs do not collect gradients") {
    Var a = Var::param(Matrix::Ones(2, 2), false);
    Var b = Var::param(Matrix::Ones(2, 2), true);
    Var y = ag::mul(a, b);
    ag::backward(ag::sum_all(y));
    CHECK_FALSE(a.has_grad());
    CHECK(b.has_grad());
}

TEST_CASE("values: l2 normalize rejects zero rows") {
    Matrix z = Matrix::Zero(2, 3);
    z.row(0) << 1.0, 2.0, 2.0;
    CHECK_THROWS_AS(ag::l2_normalize_rows(Var::constant(z)), Error);
}

TEST_CASE("rng: derived streams differ and shuffles are reproducible") {
    Rng a = Rng::derive(7, "init");
    Rng b = Rng::derive(7, "shuffle");
    CHECK(a.next_u64() != b.next_u64());

    std::vector<int> v1 = {0, 1, 2, 3, 4, 5, 6, 7};
    std::vector<int> v2 = v1;
    Rng s1 = Rng::derive(7, "shuffle", 3);
    Rng s2 = Rng::derive(7, "shuffle", 3);
    s1.shuffle(v1);
    s2.shuffle(v2);
    CHECK(v1 == v2);

    // Normal draws have roughly the right first two moments.
    Rng n(123);
    double sum = 0.0, sq = 0.0;
    const int k = 200000;
    for (int i = 0; i < k; ++i) {
        const double x = n.normal();
        sum += x;
        sq += x * x;
    }
    CHECK(std::abs(sum / k) < 0.01);
    CHECK(sq / k == doctest::Approx(1.0).epsilon(0.01));
}
