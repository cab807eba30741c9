#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mhr/common.hpp"

namespace mhr::ad {

/// Reverse-mode tape over dense matrices. Every operation creates a fresh
/// node holding its value and a closure that scatters the incoming gradient
/// to its parents; backward() sweeps reachable nodes in reverse creation
/// order. Graphs are built per forward pass and dropped afterwards.
struct Node {
  MatX value;
  MatX grad;
  bool requires_grad = false;
  long id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // adds into parents' grads
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  bool defined() const { return n_ != nullptr; }
  const MatX& value() const { return n_->value; }
  const MatX& grad() const { return n_->grad; }
  bool requires_grad() const { return n_->requires_grad; }
  std::shared_ptr<Node> node() const { return n_; }

  long rows() const { return n_->value.rows(); }
  long cols() const { return n_->value.cols(); }

 private:
  std::shared_ptr<Node> n_;
};

/// Leaf without gradient tracking.
Var constant(MatX v);
/// Leaf that accumulates gradient.
Var param(MatX v);

/// Backpropagate from a 1x1 loss node. Resets gradients of every reachable
/// node first, so one graph supports one backward sweep at a time.
void backward(const Var& loss);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);            // elementwise
Var scale(const Var& a, double k);
Var add_scalar(const Var& a, double k);
Var matmul(const Var& a, const Var& b);         // a * b
Var matmul_nt(const Var& a, const Var& b);      // a * b^T
Var add_rowvec(const Var& a, const Var& row);   // a + replicate(row)
Var mul_rowvec(const Var& a, const Var& row);   // a .* replicate(row)
Var slice_rows(const Var& a, long r0, long n);
Var slice_cols(const Var& a, long c0, long n);
Var concat_cols(const std::vector<Var>& parts);
Var softmax_rows(const Var& a);
Var layernorm_rows(const Var& a, double eps = 1e-5);  // no affine
Var gelu(const Var& a);      // exact erf form
Var sigmoid(const Var& a);
Var abs(const Var& a);
Var sum(const Var& a);       // all entries, 1x1
Var row_sums(const Var& a);  // R x C -> R x 1
Var row_norms(const Var& a); // R x C -> R x 1 Euclidean norms

/// Rows rescaled to unit Euclidean length. Throws NumericError when a row
/// has zero norm (a zero raw quaternion must never be silently normalized).
Var normalize_rows(const Var& a);

/// Row-wise Hamilton product of (w, x, y, z) quaternion rows; both T x 4.
Var quat_mul_rows(const Var& a, const Var& b);

/// Row-wise conjugate of quaternion rows (fixed sign flip of x, y, z).
Var quat_conj_rows(const Var& a);

/// Rotate T x 3 rows by unit quaternion rows: q v q^-1 through the Hamilton
/// product graph, so the gradient needs no dedicated rotation backward.
Var quat_rotate_rows(const Var& q, const Var& v);

/// Max over the rows assigned to each group, per column; N x D -> K x D.
/// Empty groups produce zero rows. Gradient routes to the first argmax row.
Var group_maxpool(const Var& a, const std::vector<int>& group, int k);

}  // namespace mhr::ad
