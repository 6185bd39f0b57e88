// SPDX-License-Identifier: Apache-2.0
//
// Dynamic reverse-mode differentiation.
//
// Every op builds a Node holding its value, its parents and a closure that
// pushes the node's gradient into the parents. The graph is rebuilt on each
// forward pass and released when the last Var referencing it goes away.
// When no input requires a gradient the op records nothing, so forward-only
// evaluation pays only for the values.
//
// Broadcasting is limited to scalar-with-tensor and equal shapes. Row-vector
// bias additions go through the explicit add_row_vector op.

#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "xmf/tensor.hpp"

namespace xmf {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  /// Gradient buffer, zero-initialised on first use.
  Tensor& grad_buffer();
  void accumulate(const Tensor& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var leaf(Tensor value, bool requires_grad = true);
  static Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value() const { return node_->value; }
  /// Accumulated gradient; a zero tensor of the value's shape if none arrived.
  Tensor grad() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  const std::shared_ptr<Node>& node() const { return node_; }
  bool defined() const noexcept { return static_cast<bool>(node_); }
  void zero_grad();

 private:
  std::shared_ptr<Node> node_;
};

/// Builds a result node. `backward` is dropped when no parent requires grad.
Var make_var(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

/// Reverse pass from a scalar output; leaves accumulate into their grads.
void backward(const Var& output);

// --- core ops ---------------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var exp(const Var& a);
Var log(const Var& a);
Var softplus(const Var& a);
Var sigmoid(const Var& a);
Var silu(const Var& a);
Var square(const Var& a);

enum class ElementwiseOp { add, sub, mul, exp, softplus, silu, scale };

/// Dispatcher over the pointwise family. Binary ops take two inputs, unary
/// ops one; `factor` is only read by `scale`.
Var elementwise(ElementwiseOp op, std::span<const Var> inputs, double factor = 1.0);

Var sum(const Var& a);
Var mean(const Var& a);

// --- row-structured ops ------------------------------------------------------

/// x[L x d] + b[d] applied to every row.
Var add_row_vector(const Var& x, const Var& b);
/// x[L x d] * g[d] applied to every row.
Var mul_row_vector(const Var& x, const Var& g);
/// [L x d] -> [1 x d] column means.
Var mean_rows(const Var& x);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
/// Output row i is input row idx[i]; gradient scatter-adds back.
Var gather_rows(const Var& x, std::span<const std::size_t> idx);
/// [1 x d] or [d] repeated into [n x d].
Var repeat_row(const Var& row, std::size_t n);
Var slice_rows(const Var& x, std::size_t start, std::size_t count);

}  // namespace xmf
