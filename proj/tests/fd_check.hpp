#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "petlab/autograd.hpp"

namespace fdcheck {

using petlab::ag::Matrix;
using petlab::ag::Var;

// Max relative error between analytic gradients and central finite
// differences for a scalar-valued function of the given parameters. The
// function is re-evaluated from scratch at every probe, so it must be a
// deterministic function of the parameter values.
inline double max_grad_rel_err(std::vector<Var>& params,
                               const std::function<Var()>& make_loss,
                               double step = 1e-5) {
    for (auto& p : params) p.zero_grad();
    Var loss = make_loss();
    petlab::ag::backward(loss);
    std::vector<Matrix> analytic;
    for (auto& p : params)
        analytic.push_back(p.has_grad() ? p.grad() : Matrix::Zero(p.rows(), p.cols()));

    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Matrix& v = params[k].mutable_value();
        for (Eigen::Index i = 0; i < v.rows(); ++i) {
            for (Eigen::Index j = 0; j < v.cols(); ++j) {
                const double saved = v(i, j);
                double fp = 0.0, fm = 0.0;
                {
                    petlab::ag::NoGradGuard ng;
                    v(i, j) = saved + step;
                    fp = make_loss().item();
                    v(i, j) = saved - step;
                    fm = make_loss().item();
                }
                v(i, j) = saved;
                const double numeric = (fp - fm) / (2.0 * step);
                const double a = analytic[k](i, j);
                const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
                worst = std::max(worst, std::abs(a - numeric) / denom);
            }
        }
    }
    return worst;
}

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, petlab::Rng& rng,
                            double scale = 1.0) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
    return m;
}

// Random values pushed away from zero so kinked ops (relu, max) see a locally
// smooth neighborhood under finite-difference probing.
inline Matrix random_matrix_off_kink(Eigen::Index r, Eigen::Index c, petlab::Rng& rng,
                                     double min_abs = 0.05) {
    Matrix m = random_matrix(r, c, rng);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j)
            if (std::abs(m(i, j)) < min_abs)
                m(i, j) += m(i, j) >= 0.0 ? 2.0 * min_abs : -2.0 * min_abs;
    return m;
}

} // namespace fdcheck
