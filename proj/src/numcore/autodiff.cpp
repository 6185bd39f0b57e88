// SPDX-License-Identifier: Apache-2.0

#include "xmf/autodiff.hpp"

#include <cmath>
#include <unordered_set>

#include "xmf/errors.hpp"
#include "xmf/fault.hpp"

namespace xmf {

Tensor& Node::grad_buffer() {
  if (grad.size() != value.size()) grad = Tensor(value.shape());
  return grad;
}

void Node::accumulate(const Tensor& g) {
  Tensor& buf = grad_buffer();
  auto dst = buf.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Var Var::leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Var(std::move(n));
}

Tensor Var::grad() const {
  if (node_->grad.size() == node_->value.size()) return node_->grad;
  return Tensor(node_->value.shape());
}

void Var::zero_grad() { node_->grad = Tensor(); }

Var make_var(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const Var& p : parents) n->requires_grad = n->requires_grad || p.requires_grad();
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (const Var& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward);
  }
  return Var(std::move(n));
}

void backward(const Var& output) {
  if (!output.defined() || output.value().size() != 1) {
    throw DimensionError("backward() requires a scalar output");
  }
  if (!output.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{output.node().get(), 0}};
  seen.insert(output.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  output.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
  }
}

namespace {

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
}

// Elementwise unary op; dfdx(x, y) is the pointwise derivative.
template <class F, class D>
Var unary(const Var& a, F f, D dfdx) {
  Tensor out(a.shape());
  const auto x = a.value().data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return make_var(std::move(out), {a}, [dfdx](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    const auto x = p.value.data();
    const auto y = self.value.data();
    const auto gy = self.grad.data();
    for (std::size_t i = 0; i < x.size(); ++i) g[i] += gy[i] * dfdx(x[i], y[i]);
  });
}

enum class Bin { add, sub, mul };

Var binary(const Var& a, const Var& b, Bin op, const char* name) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool a_scalar = av.is_scalar() && !bv.is_scalar();
  const bool b_scalar = bv.is_scalar() && !av.is_scalar();
  if (!a_scalar && !b_scalar && !(av.is_scalar() && bv.is_scalar())) {
    require_same_shape(av, bv, name);
  }

  const Tensor& big = a_scalar ? bv : av;
  Tensor out(big.shape());
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double x1 = a_scalar ? av[0] : av[i];
    const double x2 = b_scalar ? bv[0] : bv[i];
    switch (op) {
      case Bin::add: y[i] = x1 + x2; break;
      case Bin::sub: y[i] = x1 - x2; break;
      case Bin::mul: y[i] = x1 * x2; break;
    }
  }
  return make_var(std::move(out), {a, b}, [op, a_scalar, b_scalar](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    const auto gy = self.grad.data();
    const std::size_t n = gy.size();
    auto av = [&](std::size_t i) { return a_scalar ? pa.value[0] : pa.value[i]; };
    auto bv = [&](std::size_t i) { return b_scalar ? pb.value[0] : pb.value[i]; };
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        const double d = op == Bin::mul ? gy[i] * bv(i) : gy[i];
        g[a_scalar ? 0 : i] += d;
      }
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        double d = gy[i];
        if (op == Bin::sub) d = -d;
        if (op == Bin::mul) d *= av(i);
        g[b_scalar ? 0 : i] += d;
      }
    }
  });
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

Tensor as_row_shape(const Tensor& t, std::size_t d, const char* op) {
  if (t.size() != d) {
    throw DimensionError(std::string(op) + ": row vector " + shape_str(t.shape()) +
                         " does not match width " + std::to_string(d));
  }
  return t;
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tensor out = matmul(a.value(), b.value());
  return make_var(std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    const double f = fault::gradient_factor(fault::Site::matmul);
    const std::size_t m = pa.value.rows(), k = pa.value.cols(), n = pb.value.cols();
    const double* gy = self.grad.data().data();
    if (pa.requires_grad) {
      // dA = dY * B^T
      double* ga = pa.grad_buffer().data().data();
      const double* bv = pb.value.data().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += gy[i * n + j] * bv[p * n + j];
          ga[i * k + p] += f * s;
        }
    }
    if (pb.requires_grad) {
      // dB = A^T * dY
      double* gb = pb.grad_buffer().data().data();
      const double* av = pa.value.data().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double a_ip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += a_ip * gy[i * n + j];
        }
    }
  });
}

Var transpose(const Var& a) {
  return make_var(transpose(a.value()), {a}, [](Node& self) {
    Node& p = parent(self, 0);
    if (p.requires_grad) p.accumulate(transpose(self.grad));
  });
}

Var add(const Var& a, const Var& b) { return binary(a, b, Bin::add, "add"); }
Var sub(const Var& a, const Var& b) { return binary(a, b, Bin::sub, "sub"); }
Var mul(const Var& a, const Var& b) { return binary(a, b, Bin::mul, "mul"); }

Var scale(const Var& a, double factor) {
  return unary(a, [factor](double x) { return factor * x; },
               [factor](double, double) { return factor; });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var softplus(const Var& a) {
  return unary(a, softplus_scalar, [](double x, double) { return sigmoid_scalar(x); });
}

Var sigmoid(const Var& a) {
  return unary(a, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Var silu(const Var& a) {
  return unary(a, [](double x) { return x * sigmoid_scalar(x); },
               [](double x, double) {
                 const double s = sigmoid_scalar(x);
                 return s * (1.0 + x * (1.0 - s));
               });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var elementwise(ElementwiseOp op, std::span<const Var> inputs, double factor) {
  const bool is_binary =
      op == ElementwiseOp::add || op == ElementwiseOp::sub || op == ElementwiseOp::mul;
  const std::size_t want = is_binary ? 2 : 1;
  if (inputs.size() != want) {
    throw DimensionError("elementwise: expected " + std::to_string(want) + " inputs, got " +
                         std::to_string(inputs.size()));
  }
  switch (op) {
    case ElementwiseOp::add: return add(inputs[0], inputs[1]);
    case ElementwiseOp::sub: return sub(inputs[0], inputs[1]);
    case ElementwiseOp::mul: return mul(inputs[0], inputs[1]);
    case ElementwiseOp::exp: return exp(inputs[0]);
    case ElementwiseOp::softplus: return softplus(inputs[0]);
    case ElementwiseOp::silu: return silu(inputs[0]);
    case ElementwiseOp::scale: return scale(inputs[0], factor);
  }
  throw ParameterError("elementwise: unknown op");
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return make_var(Tensor::scalar(s), {a}, [](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    const double g = self.grad[0];
    for (double& v : p.grad_buffer().data()) v += g;
  });
}

Var mean(const Var& a) {
  if (a.value().empty()) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var add_row_vector(const Var& x, const Var& b) {
  const std::size_t L = x.rows(), d = x.cols();
  const Tensor bv = as_row_shape(b.value(), d, "add_row_vector");
  Tensor out = x.value();
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < d; ++j) out(i, j) += bv[j];
  return make_var(std::move(out), {x, b}, [L, d](Node& self) {
    Node& px = parent(self, 0);
    Node& pb = parent(self, 1);
    if (px.requires_grad) px.accumulate(self.grad);
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < d; ++j) g[j] += self.grad(i, j);
    }
  });
}

Var mul_row_vector(const Var& x, const Var& g) {
  const std::size_t L = x.rows(), d = x.cols();
  const Tensor gv = as_row_shape(g.value(), d, "mul_row_vector");
  Tensor out = x.value();
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < d; ++j) out(i, j) *= gv[j];
  return make_var(std::move(out), {x, g}, [L, d](Node& self) {
    Node& px = parent(self, 0);
    Node& pg = parent(self, 1);
    if (px.requires_grad) {
      auto& gx = px.grad_buffer();
      for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < d; ++j) gx(i, j) += self.grad(i, j) * pg.value[j];
    }
    if (pg.requires_grad) {
      auto& gg = pg.grad_buffer();
      for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < d; ++j) gg[j] += self.grad(i, j) * px.value(i, j);
    }
  });
}

Var mean_rows(const Var& x) {
  const std::size_t L = x.rows(), d = x.cols();
  if (L == 0) throw DimensionError("mean_rows of empty tensor");
  Tensor out({1, d});
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += x.value()(i, j);
  const double inv = 1.0 / static_cast<double>(L);
  for (double& v : out.data()) v *= inv;
  return make_var(std::move(out), {x}, [L, d, inv](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < d; ++j) g(i, j) += inv * self.grad[j];
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t d = parts[0].cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.cols() != d) {
      throw DimensionError("concat_rows: width mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    total += p.rows();
  }
  std::vector<double> data;
  data.reserve(total * d);
  for (const Var& p : parts) data.insert(data.end(), p.value().vec().begin(), p.value().vec().end());
  std::vector<Var> parents(parts.begin(), parts.end());
  return make_var(Tensor({total, d}, std::move(data)), std::move(parents), [](Node& self) {
    std::size_t offset = 0;
    for (auto& pp : self.parents) {
      const std::size_t n = pp->value.size();
      if (pp->requires_grad) {
        auto& g = pp->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
      }
      offset += n;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t L = parts[0].rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.rows() != L) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    total += p.cols();
  }
  Tensor out({L, total});
  std::size_t c0 = 0;
  for (const Var& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < w; ++j) out(i, c0 + j) = p.value()(i, j);
    c0 += w;
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return make_var(std::move(out), std::move(parents), [L](Node& self) {
    std::size_t c0 = 0;
    for (auto& pp : self.parents) {
      const std::size_t w = pp->value.cols();
      if (pp->requires_grad) {
        auto& g = pp->grad_buffer();
        for (std::size_t i = 0; i < L; ++i)
          for (std::size_t j = 0; j < w; ++j) g(i, j) += self.grad(i, c0 + j);
      }
      c0 += w;
    }
  });
}

Var gather_rows(const Var& x, std::span<const std::size_t> idx) {
  const std::size_t L = x.rows(), d = x.cols();
  Tensor out({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= L) {
      throw DimensionError("gather_rows: index " + std::to_string(idx[i]) + " out of range for " +
                           shape_str(x.shape()));
    }
    for (std::size_t j = 0; j < d; ++j) out(i, j) = x.value()(idx[i], j);
  }
  std::vector<std::size_t> keep(idx.begin(), idx.end());
  return make_var(std::move(out), {x}, [keep = std::move(keep), d](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < keep.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) g(keep[i], j) += self.grad(i, j);
  });
}

Var repeat_row(const Var& row, std::size_t n) {
  const std::size_t d = row.value().size();
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out(i, j) = row.value()[j];
  return make_var(std::move(out), {row}, [n, d](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) g[j] += self.grad(i, j);
  });
}

Var slice_rows(const Var& x, std::size_t start, std::size_t count) {
  if (start + count > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of range for " +
                         shape_str(x.shape()));
  }
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = start + i;
  return gather_rows(x, idx);
}

}  // namespace xmf
