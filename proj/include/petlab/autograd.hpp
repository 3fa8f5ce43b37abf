#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "petlab/rng.hpp"

namespace petlab::ag {

using Matrix = Eigen::MatrixXd;

// One value in the computation tape. Gradients are dense matrices of the
// same shape as the value, allocated lazily on first accumulation.
struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void accumulate(const Matrix& g);
    bool has_grad() const { return grad.size() > 0; }
};

// Handle to a tape node. Copying a Var copies the handle, not the value.
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Var constant(Matrix value);
    static Var param(Matrix value, bool requires_grad = true);
    static Var scalar(double value); // 1x1 constant

    bool defined() const { return node_ != nullptr; }
    const Matrix& value() const { return node_->value; }
    Matrix& mutable_value() { return node_->value; }
    const Matrix& grad() const { return node_->grad; }
    bool has_grad() const { return node_->has_grad(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }
    void zero_grad() { node_->grad.resize(0, 0); }

    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    double item() const; // value of a 1x1 node

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Reverse pass from a 1x1 loss node. Accumulates into .grad of every
// reachable node with requires_grad set.
void backward(const Var& loss);

// While alive, newly created ops record no tape (pure value computation).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

bool grad_enabled();

// ---- elementwise / scalar ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);              // Hadamard
Var scalar_mul(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var mul_const(const Var& a, const Matrix& m);     // elementwise by a constant mask
Var relu(const Var& a);
Var gelu(const Var& a);                           // exact erf form

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);           // a @ b
Var matmul_nt(const Var& a, const Var& b);        // a @ b^T
Var transpose(const Var& a);

// ---- broadcasting ----
Var add_rowvec(const Var& a, const Var& v);       // v is 1xC, added to every row
Var sub_colvec(const Var& a, const Var& v);       // v is Rx1, a(i,j) - v(i)
Var sub_rowvec(const Var& a, const Var& v);       // v is Rx1, a(i,j) - v(j) (square a)
Var mul_colvec_const(const Var& a, const Eigen::VectorXd& v); // scale row i by v(i)

// ---- shape ----
Var select_rows(const Var& a, std::span<const int> indices); // gather rows
Var slice_rows(const Var& a, Eigen::Index r0, Eigen::Index n);
Var slice_cols(const Var& a, Eigen::Index c0, Eigen::Index n);
Var vstack(std::span<const Var> parts);
Var hstack(std::span<const Var> parts);
Var diag(const Var& a);                           // square -> Rx1

// ---- normalization ----
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps);
Var softmax_rows(const Var& a);
Var l2_normalize_rows(const Var& a);              // each row scaled to unit norm

// ---- reductions ----
Var sum_all(const Var& a);                        // -> 1x1
Var sum_masked(const Var& a, const Matrix& mask); // sum of a .* mask -> 1x1
// Per-row maximum over positions where mask != 0; ties resolve to the lowest
// column index. Rows whose mask is all-zero produce 0 and are reported in
// row_valid (sized on return).
Var rowmax_masked(const Var& a, const Matrix& mask, Eigen::VectorXd& row_valid);

// ---- regularization ----
Matrix make_dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng);
Var dropout(const Var& a, double p, Rng& rng);    // inverted dropout, scales by 1/(1-p)

} // namespace petlab::ag
