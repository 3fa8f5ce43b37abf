#include "petlab/autograd.hpp"

#include <cmath>
#include <string>
#include <unordered_set>
#include <utility>

#include "petlab/error.hpp"

namespace petlab::ag {

namespace {

thread_local bool g_grad_enabled = true;

void check(bool cond, const std::string& what) {
    if (!cond) throw_internal("autograd: " + what);
}

using Parents = std::vector<std::shared_ptr<Node>>;

// Attach tape metadata only when some parent is differentiable and grad
// recording is on; otherwise the node is a plain value and the graph above
// it is dropped immediately.
Var make_node(Matrix value, Parents parents, std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (g_grad_enabled) {
        bool req = false;
        for (const auto& p : parents)
            if (p && p->requires_grad) { req = true; break; }
        if (req) {
            n->requires_grad = true;
            n->parents = std::move(parents);
            n->backward_fn = std::move(backward_fn);
        }
    }
    return Var(std::move(n));
}

} // namespace

void Node::accumulate(const Matrix& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
    check(g.rows() == grad.rows() && g.cols() == grad.cols(), "gradient shape mismatch");
    grad += g;
}

Var Var::constant(Matrix value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Var(std::move(n));
}

Var Var::param(Matrix value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
}

Var Var::scalar(double value) {
    Matrix m(1, 1);
    m(0, 0) = value;
    return constant(std::move(m));
}

double Var::item() const {
    check(node_ && node_->value.size() == 1, "item() on non-scalar");
    return node_->value(0, 0);
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& loss) {
    check(loss.defined(), "backward on empty Var");
    check(loss.rows() == 1 && loss.cols() == 1, "backward needs a 1x1 loss");
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS; parents of a node appear before it, so the
    // reversed order visits consumers before producers.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx++].get();
            if (p && p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    loss.node()->accumulate(Matrix::Ones(1, 1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
    }
}

// ---- elementwise / scalar ----

Var add(const Var& a, const Var& b) {
    check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
    auto pa = a.node(), pb = b.node();
    return make_node(a.value() + b.value(), {pa, pb}, [pa, pb](Node& n) {
        pa->accumulate(n.grad);
        pb->accumulate(n.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
    auto pa = a.node(), pb = b.node();
    return make_node(a.value() - b.value(), {pa, pb}, [pa, pb](Node& n) {
        pa->accumulate(n.grad);
        pb->accumulate(-n.grad);
    });
}

Var mul(const Var& a, const Var& b) {
    check(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
    auto pa = a.node(), pb = b.node();
    return make_node(a.value().cwiseProduct(b.value()), {pa, pb}, [pa, pb](Node& n) {
        pa->accumulate(n.grad.cwiseProduct(pb->value));
        pb->accumulate(n.grad.cwiseProduct(pa->value));
    });
}

Var scalar_mul(const Var& a, double c) {
    auto pa = a.node();
    return make_node(a.value() * c, {pa}, [pa, c](Node& n) { pa->accumulate(n.grad * c); });
}

Var add_scalar(const Var& a, double c) {
    auto pa = a.node();
    return make_node(a.value().array() + c, {pa}, [pa](Node& n) { pa->accumulate(n.grad); });
}

Var mul_const(const Var& a, const Matrix& m) {
    check(a.rows() == m.rows() && a.cols() == m.cols(), "mul_const: shape mismatch");
    auto pa = a.node();
    return make_node(a.value().cwiseProduct(m), {pa},
                     [pa, m](Node& n) { pa->accumulate(n.grad.cwiseProduct(m)); });
}

Var relu(const Var& a) {
    auto pa = a.node();
    return make_node(a.value().cwiseMax(0.0), {pa}, [pa](Node& n) {
        const Matrix mask = (pa->value.array() > 0.0).cast<double>();
        pa->accumulate(n.grad.cwiseProduct(mask));
    });
}

Var gelu(const Var& a) {
    auto pa = a.node();
    Matrix out = a.value().unaryExpr(
        [](double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); });
    return make_node(std::move(out), {pa}, [pa](Node& n) {
        const Matrix d = pa->value.unaryExpr([](double x) {
            const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
            const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
            return cdf + x * pdf;
        });
        pa->accumulate(n.grad.cwiseProduct(d));
    });
}

// ---- linear algebra ----

Var matmul(const Var& a, const Var& b) {
    check(a.cols() == b.rows(), "matmul: inner dims differ");
    auto pa = a.node(), pb = b.node();
    return make_node(a.value() * b.value(), {pa, pb}, [pa, pb](Node& n) {
        pa->accumulate(n.grad * pb->value.transpose());
        pb->accumulate(pa->value.transpose() * n.grad);
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    check(a.cols() == b.cols(), "matmul_nt: inner dims differ");
    auto pa = a.node(), pb = b.node();
    return make_node(a.value() * b.value().transpose(), {pa, pb}, [pa, pb](Node& n) {
        pa->accumulate(n.grad * pb->value);
        pb->accumulate(n.grad.transpose() * pa->value);
    });
}

Var transpose(const Var& a) {
    auto pa = a.node();
    return make_node(a.value().transpose(), {pa},
                     [pa](Node& n) { pa->accumulate(n.grad.transpose()); });
}

// ---- broadcasting ----

Var add_rowvec(const Var& a, const Var& v) {
    check(v.rows() == 1 && v.cols() == a.cols(), "add_rowvec: v must be 1 x cols(a)");
    auto pa = a.node(), pv = v.node();
    Matrix out = a.value().rowwise() + v.value().row(0);
    return make_node(std::move(out), {pa, pv}, [pa, pv](Node& n) {
        pa->accumulate(n.grad);
        pv->accumulate(n.grad.colwise().sum());
    });
}

Var sub_colvec(const Var& a, const Var& v) {
    check(v.cols() == 1 && v.rows() == a.rows(), "sub_colvec: v must be rows(a) x 1");
    auto pa = a.node(), pv = v.node();
    Matrix out = a.value().colwise() - v.value().col(0);
    return make_node(std::move(out), {pa, pv}, [pa, pv](Node& n) {
        pa->accumulate(n.grad);
        pv->accumulate(-n.grad.rowwise().sum());
    });
}

Var sub_rowvec(const Var& a, const Var& v) {
    check(v.cols() == 1 && v.rows() == a.cols(), "sub_rowvec: v must be cols(a) x 1");
    auto pa = a.node(), pv = v.node();
    Matrix out = a.value().rowwise() - v.value().col(0).transpose();
    return make_node(std::move(out), {pa, pv}, [pa, pv](Node& n) {
        pa->accumulate(n.grad);
        pv->accumulate(-n.grad.colwise().sum().transpose());
    });
}

Var mul_colvec_const(const Var& a, const Eigen::VectorXd& v) {
    check(v.size() == a.rows(), "mul_colvec_const: v must have rows(a) entries");
    auto pa = a.node();
    Matrix out = v.asDiagonal() * a.value();
    return make_node(std::move(out), {pa},
                     [pa, v](Node& n) { pa->accumulate(v.asDiagonal() * n.grad); });
}

// ---- shape ----

Var select_rows(const Var& a, std::span<const int> indices) {
    auto pa = a.node();
    Matrix out(static_cast<Eigen::Index>(indices.size()), a.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        check(indices[i] >= 0 && indices[i] < a.rows(), "select_rows: index out of range");
        out.row(static_cast<Eigen::Index>(i)) = a.value().row(indices[i]);
    }
    std::vector<int> idx(indices.begin(), indices.end());
    return make_node(std::move(out), {pa}, [pa, idx = std::move(idx)](Node& n) {
        Matrix g = Matrix::Zero(pa->value.rows(), pa->value.cols());
        for (std::size_t i = 0; i < idx.size(); ++i)
            g.row(idx[i]) += n.grad.row(static_cast<Eigen::Index>(i));
        pa->accumulate(g);
    });
}

Var slice_rows(const Var& a, Eigen::Index r0, Eigen::Index n) {
    check(r0 >= 0 && n >= 0 && r0 + n <= a.rows(), "slice_rows: out of range");
    auto pa = a.node();
    Matrix out = a.value().middleRows(r0, n);
    return make_node(std::move(out), {pa}, [pa, r0, n](Node& nd) {
        Matrix g = Matrix::Zero(pa->value.rows(), pa->value.cols());
        g.middleRows(r0, n) = nd.grad;
        pa->accumulate(g);
    });
}

Var slice_cols(const Var& a, Eigen::Index c0, Eigen::Index n) {
    check(c0 >= 0 && n >= 0 && c0 + n <= a.cols(), "slice_cols: out of range");
    auto pa = a.node();
    Matrix out = a.value().middleCols(c0, n);
    return make_node(std::move(out), {pa}, [pa, c0, n](Node& nd) {
        Matrix g = Matrix::Zero(pa->value.rows(), pa->value.cols());
        g.middleCols(c0, n) = nd.grad;
        pa->accumulate(g);
    });
}

Var vstack(std::span<const Var> parts) {
    check(!parts.empty(), "vstack: no parts");
    Eigen::Index rows = 0;
    const Eigen::Index cols = parts[0].cols();
    Parents parents;
    for (const auto& p : parts) {
        check(p.cols() == cols, "vstack: column mismatch");
        rows += p.rows();
        parents.push_back(p.node());
    }
    Matrix out(rows, cols);
    Eigen::Index r = 0;
    for (const auto& p : parts) {
        out.middleRows(r, p.rows()) = p.value();
        r += p.rows();
    }
    return make_node(std::move(out), std::move(parents), [](Node& n) {
        Eigen::Index r = 0;
        for (auto& p : n.parents) {
            p->accumulate(n.grad.middleRows(r, p->value.rows()));
            r += p->value.rows();
        }
    });
}

Var hstack(std::span<const Var> parts) {
    check(!parts.empty(), "hstack: no parts");
    Eigen::Index cols = 0;
    const Eigen::Index rows = parts[0].rows();
    Parents parents;
    for (const auto& p : parts) {
        check(p.rows() == rows, "hstack: row mismatch");
        cols += p.cols();
        parents.push_back(p.node());
    }
    Matrix out(rows, cols);
    Eigen::Index c = 0;
    for (const auto& p : parts) {
        out.middleCols(c, p.cols()) = p.value();
        c += p.cols();
    }
    return make_node(std::move(out), std::move(parents), [](Node& n) {
        Eigen::Index c = 0;
        for (auto& p : n.parents) {
            p->accumulate(n.grad.middleCols(c, p->value.cols()));
            c += p->value.cols();
        }
    });
}

Var diag(const Var& a) {
    check(a.rows() == a.cols(), "diag: matrix must be square");
    auto pa = a.node();
    Matrix out = a.value().diagonal();
    return make_node(std::move(out), {pa}, [pa](Node& n) {
        Matrix g = Matrix::Zero(pa->value.rows(), pa->value.cols());
        g.diagonal() = n.grad.col(0);
        pa->accumulate(g);
    });
}

// ---- normalization ----

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Eigen::Index d = x.cols();
    check(gamma.rows() == 1 && gamma.cols() == d, "layer_norm_rows: gamma must be 1 x cols");
    check(beta.rows() == 1 && beta.cols() == d, "layer_norm_rows: beta must be 1 x cols");
    auto px = x.node(), pg = gamma.node(), pb = beta.node();

    const Matrix& xv = x.value();
    Eigen::VectorXd mean = xv.rowwise().mean();
    Matrix centered = xv.colwise() - mean;
    Eigen::VectorXd inv_std =
        ((centered.array().square().rowwise().mean() + eps).sqrt()).inverse();
    Matrix xhat = inv_std.asDiagonal() * centered;
    Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
    out.rowwise() += beta.value().row(0);

    return make_node(std::move(out), {px, pg, pb},
                     [px, pg, pb, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
        const double d = static_cast<double>(xhat.cols());
        pb->accumulate(n.grad.colwise().sum());
        pg->accumulate(n.grad.cwiseProduct(xhat).colwise().sum());
        // dL/dx = inv_std/d * (d*gg - sum(gg) - xhat * sum(gg .* xhat)) per row,
        // with gg = grad .* gamma.
        Matrix gg = (n.grad.array().rowwise() * pg->value.row(0).array()).matrix();
        Eigen::VectorXd s1 = gg.rowwise().sum();
        Eigen::VectorXd s2 = gg.cwiseProduct(xhat).rowwise().sum();
        Matrix dx = d * gg;
        dx.colwise() -= s1;
        dx -= (s2.asDiagonal() * xhat);
        dx = (inv_std / d).asDiagonal() * dx;
        px->accumulate(dx);
    });
}

Var softmax_rows(const Var& a) {
    auto pa = a.node();
    const Matrix& av = a.value();
    Matrix out(av.rows(), av.cols());
    for (Eigen::Index i = 0; i < av.rows(); ++i) {
        const auto row = av.row(i).array();
        const Eigen::ArrayXd e = (row - row.maxCoeff()).exp();
        out.row(i) = (e / e.sum()).matrix();
    }
    return make_node(std::move(out), {pa}, [pa](Node& n) {
        const Matrix& y = n.value;
        Eigen::VectorXd dot = n.grad.cwiseProduct(y).rowwise().sum();
        Matrix g = n.grad;
        g.colwise() -= dot;
        pa->accumulate(g.cwiseProduct(y));
    });
}

Var l2_normalize_rows(const Var& a) {
    auto pa = a.node();
    const Matrix& av = a.value();
    Eigen::VectorXd norms = av.rowwise().norm();
    for (Eigen::Index i = 0; i < norms.size(); ++i)
        if (!(norms(i) > 1e-30))
            throw_numeric("cannot normalize a zero-length embedding (row " +
                          std::to_string(i) + ")");
    Matrix out = norms.cwiseInverse().asDiagonal() * av;
    return make_node(std::move(out), {pa}, [pa, norms = std::move(norms)](Node& n) {
        const Matrix& y = n.value;
        Eigen::VectorXd dot = n.grad.cwiseProduct(y).rowwise().sum();
        Matrix g = n.grad - dot.asDiagonal() * y;
        pa->accumulate(norms.cwiseInverse().asDiagonal() * g);
    });
}

// ---- reductions ----

Var sum_all(const Var& a) {
    auto pa = a.node();
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return make_node(std::move(out), {pa}, [pa](Node& n) {
        pa->accumulate(Matrix::Constant(pa->value.rows(), pa->value.cols(), n.grad(0, 0)));
    });
}

Var sum_masked(const Var& a, const Matrix& mask) {
    check(a.rows() == mask.rows() && a.cols() == mask.cols(), "sum_masked: shape mismatch");
    auto pa = a.node();
    Matrix out(1, 1);
    out(0, 0) = a.value().cwiseProduct(mask).sum();
    return make_node(std::move(out), {pa},
                     [pa, mask](Node& n) { pa->accumulate(n.grad(0, 0) * mask); });
}

Var rowmax_masked(const Var& a, const Matrix& mask, Eigen::VectorXd& row_valid) {
    check(a.rows() == mask.rows() && a.cols() == mask.cols(), "rowmax_masked: shape mismatch");
    auto pa = a.node();
    const Matrix& av = a.value();
    const Eigen::Index r = av.rows(), c = av.cols();
    row_valid.resize(r);
    std::vector<Eigen::Index> arg(static_cast<std::size_t>(r), -1);
    Matrix out = Matrix::Zero(r, 1);
    for (Eigen::Index i = 0; i < r; ++i) {
        double best = 0.0;
        Eigen::Index best_j = -1;
        for (Eigen::Index j = 0; j < c; ++j) {
            if (mask(i, j) == 0.0) continue;
            if (best_j < 0 || av(i, j) > best) {
                best = av(i, j);
                best_j = j; // strict '>' keeps the lowest index on ties
            }
        }
        arg[static_cast<std::size_t>(i)] = best_j;
        row_valid(i) = best_j >= 0 ? 1.0 : 0.0;
        out(i, 0) = best_j >= 0 ? best : 0.0;
    }
    return make_node(std::move(out), {pa}, [pa, arg = std::move(arg)](Node& n) {
        Matrix g = Matrix::Zero(pa->value.rows(), pa->value.cols());
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
            const Eigen::Index j = arg[static_cast<std::size_t>(i)];
            if (j >= 0) g(i, j) += n.grad(i, 0);
        }
        pa->accumulate(g);
    });
}

// ---- regularization ----

Matrix make_dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0))
        throw_config("dropout probability must lie in [0, 1), got " + std::to_string(p));
    if (p == 0.0) return Matrix::Ones(rows, cols);
    const double scale = 1.0 / (1.0 - p);
    Matrix mask(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            mask(i, j) = rng.uniform() >= p ? scale : 0.0;
    return mask;
}

Var dropout(const Var& a, double p, Rng& rng) {
    if (p == 0.0) return a;
    return mul_const(a, make_dropout_mask(a.rows(), a.cols(), p, rng));
}

} // namespace petlab::ag
