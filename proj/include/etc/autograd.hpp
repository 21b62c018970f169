// SPDX-License-Identifier: Apache-2.0
#pragma once

// Small reverse-mode autodiff over row-major matrices. Each op allocates a
// node that remembers its parents and a closure that pushes the node's
// gradient back to them. With gradients disabled (NoGradGuard) no graph is
// recorded and intermediates are released as soon as their Vars die.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "etc/tensor.hpp"

namespace etc::ag {

bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard() noexcept;
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
struct Node {
  Matrix<T> value;
  Matrix<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Matrix<T>& grad_buffer() {
    if (!grad.same_shape(value)) grad = Matrix<T>(value.rows(), value.cols());
    return grad;
  }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(Matrix<T> value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Matrix<T>& value() const { return node_->value; }
  Matrix<T>& mutable_value() { return node_->value; }
  // Zero-filled when no gradient reached this node.
  Matrix<T> grad() const;
  bool has_grad() const { return node_->grad.same_shape(node_->value); }
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad = Matrix<T>(); }

  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  T scalar() const { return node_->value(0, 0); }

  const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Seeds d(root)/d(root) = 1 and runs every recorded closure in reverse
// topological order. `root` must be 1 x 1.
template <class T>
void backward(const Var<T>& root);

template <class T>
Var<T> constant(Matrix<T> value) {
  return Var<T>(std::move(value), false);
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);
// a * b^T
template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);
// a + bias broadcast over rows; bias is 1 x cols.
template <class T>
Var<T> add_row(const Var<T>& a, const Var<T>& bias);
template <class T>
Var<T> scale(const Var<T>& a, T factor);
// a + c for a constant matrix c (mask penalties).
template <class T>
Var<T> add_constant(const Var<T>& a, const Matrix<T>& c);
template <class T>
Var<T> gelu(const Var<T>& a);
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps);
// Row softmax with the fully-masked guard: rows whose max <= guard are zero.
template <class T>
Var<T> softmax(const Var<T>& scores, T guard);

template <class T>
Var<T> concat_cols(std::span<const Var<T>> parts);
template <class T>
Var<T> concat_rows(std::span<const Var<T>> parts);
template <class T>
Var<T> slice_cols(const Var<T>& a, std::size_t begin, std::size_t count);
template <class T>
Var<T> slice_rows(const Var<T>& a, std::size_t begin, std::size_t count);
// out row i = table row ids[i]
template <class T>
Var<T> gather_rows(const Var<T>& table, std::span<const std::int32_t> ids);

// out(i, c) = q_i . keys[labels(i, c)], or 0 where labels(i, c) < 0.
// Dots against every vocabulary vector are formed first (n x V) and then
// gathered, so per-pair key vectors are never materialized.
template <class T>
Var<T> relative_bias(const Var<T>& q, const Var<T>& keys, const Grid<std::int32_t>& labels);

// Blocked local attention pieces (see kernels.hpp for the slot layout).
template <class T>
Var<T> band_scores(const Var<T>& q, const Var<T>& k, std::size_t radius);
template <class T>
Var<T> band_apply(const Var<T>& weights, const Var<T>& values, std::size_t radius);

// Mean over rows of -log softmax(logits)[row, targets[row]].
template <class T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::int32_t> targets);

}  // namespace etc::ag
