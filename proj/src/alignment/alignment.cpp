// SPDX-License-Identifier: Apache-2.0

#include "xmf/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "xmf/errors.hpp"
#include "xmf/fault.hpp"

namespace xmf::align {

TransportPlan::TransportPlan(std::vector<std::size_t> selected, std::size_t anchor_count)
    : selected_(std::move(selected)), anchor_count_(anchor_count) {
  if (selected_.empty() || anchor_count_ == 0) {
    throw DimensionError("transport plan needs at least one source row and one anchor column");
  }
  for (std::size_t i = 0; i < selected_.size(); ++i) {
    if (selected_[i] >= anchor_count_) {
      throw DimensionError("transport plan row " + std::to_string(i) + " selects column " +
                           std::to_string(selected_[i]) + " of " + std::to_string(anchor_count_));
    }
  }
}

TransportPlan TransportPlan::identity(std::size_t n) {
  std::vector<std::size_t> sel(n);
  for (std::size_t i = 0; i < n; ++i) sel[i] = i;
  return TransportPlan(std::move(sel), n);
}

Tensor TransportPlan::dense() const {
  Tensor m({source_count(), anchor_count_});
  for (std::size_t i = 0; i < selected_.size(); ++i) m(i, selected_[i]) = mass();
  return m;
}

std::vector<double> TransportPlan::column_mass() const {
  std::vector<double> cm(anchor_count_, 0.0);
  for (std::size_t j : selected_) cm[j] += mass();
  return cm;
}

double TransportPlan::cost(const CostMatrix& c) const {
  if (c.source_count() != source_count() || c.anchor_count() != anchor_count_) {
    throw DimensionError("plan " + std::to_string(source_count()) + "x" +
                         std::to_string(anchor_count_) + " vs cost " +
                         shape_str(c.values.shape()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < selected_.size(); ++i) total += mass() * c.values(i, selected_[i]);
  return total;
}

const char* to_string(PlanMode mode) {
  return mode == PlanMode::literal ? "literal" : "mass_normalized";
}

std::optional<PlanMode> parse_plan_mode(std::string_view s) {
  if (s == "literal") return PlanMode::literal;
  if (s == "mass_normalized") return PlanMode::mass_normalized;
  return std::nullopt;
}

KernelConfig KernelConfig::fixed(double s) {
  if (!(s > 0.0) || !std::isfinite(s)) {
    throw ParameterError("kernel bandwidth must be positive, got " + std::to_string(s));
  }
  return KernelConfig{s};
}

double KernelConfig::resolve(const Tensor& x, const Tensor& y) const {
  if (sigma) {
    if (!(*sigma > 0.0)) throw ParameterError("kernel bandwidth must be positive");
    return *sigma;
  }
  return median_bandwidth(x, y);
}

namespace {

constexpr double kMinNorm = 1e-12;

std::vector<double> row_norms(const Tensor& t, const char* which) {
  std::vector<double> n(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double s = 0.0;
    for (double v : t.row(i)) s += v * v;
    n[i] = std::sqrt(s);
    if (!(n[i] >= kMinNorm)) {
      throw DegenerateInputError(std::string("cosine_cost: ") + which + " row " +
                                 std::to_string(i) + " has zero norm");
    }
  }
  return n;
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

void check_same_width(const Tensor& x, const Tensor& y, const char* op) {
  if (x.rank() != 2 || y.rank() != 2 || x.cols() != y.cols()) {
    throw DimensionError(std::string(op) + ": feature width mismatch " + shape_str(x.shape()) +
                         " vs " + shape_str(y.shape()));
  }
}

}  // namespace

CostMatrix cosine_cost(const Tensor& src, const Tensor& anchor) {
  check_same_width(src, anchor, "cosine_cost");
  if (src.rows() == 0 || anchor.rows() == 0) throw DimensionError("cosine_cost: empty input");
  const auto ns = row_norms(src, "source");
  const auto na = row_norms(anchor, "anchor");
  Tensor c({src.rows(), anchor.rows()});
  for (std::size_t i = 0; i < src.rows(); ++i) {
    const auto si = src.row(i);
    for (std::size_t j = 0; j < anchor.rows(); ++j) {
      const auto aj = anchor.row(j);
      double dot = 0.0;
      for (std::size_t k = 0; k < si.size(); ++k) dot += si[k] * aj[k];
      c(i, j) = std::clamp(1.0 - dot / (ns[i] * na[j]), 0.0, 2.0);
    }
  }
  return CostMatrix{std::move(c)};
}

TransportPlan relaxed_ot_plan(const CostMatrix& cost) {
  const std::size_t n = cost.values.rows(), m = cost.values.cols();
  if (cost.values.rank() != 2 || n == 0 || m == 0) {
    throw DimensionError("relaxed_ot_plan: empty cost matrix " + shape_str(cost.values.shape()));
  }
  if (!cost.values.all_finite()) throw NumericError("relaxed_ot_plan: non-finite cost");
  std::vector<std::size_t> sel(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = cost.values.row(i);
    // min_element returns the first minimum, giving smallest-index ties.
    sel[i] = static_cast<std::size_t>(std::min_element(r.begin(), r.end()) - r.begin());
  }
  return TransportPlan(std::move(sel), m);
}

namespace {

void check_plan_source(const TransportPlan& plan, const Tensor& src) {
  if (src.rank() != 2 || src.rows() != plan.source_count()) {
    throw DimensionError("apply_plan: plan has " + std::to_string(plan.source_count()) +
                         " source rows, features are " + shape_str(src.shape()));
  }
}

// Per-output-row weight applied to each source row that maps there.
std::vector<double> row_weights(const TransportPlan& plan, PlanMode mode) {
  std::vector<double> w(plan.anchor_count(), plan.mass());
  if (mode == PlanMode::mass_normalized) {
    const auto cm = plan.column_mass();
    for (std::size_t j = 0; j < w.size(); ++j) w[j] = cm[j] > 0.0 ? plan.mass() / cm[j] : 0.0;
  }
  return w;
}

}  // namespace

Tensor apply_plan(const TransportPlan& plan, const Tensor& src, PlanMode mode) {
  return apply_plan(plan, Var::constant(src), mode).value();
}

Var apply_plan(const TransportPlan& plan, const Var& src, PlanMode mode) {
  check_plan_source(plan, src.value());
  const std::size_t d = src.cols();
  const auto w = row_weights(plan, mode);
  const auto& sel = plan.selected();
  Tensor out({plan.anchor_count(), d});
  for (std::size_t i = 0; i < sel.size(); ++i) {
    const auto xi = src.value().row(i);
    auto oj = out.row(sel[i]);
    for (std::size_t k = 0; k < d; ++k) oj[k] += w[sel[i]] * xi[k];
  }
  return make_var(std::move(out), {src}, [sel, w, d](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < sel.size(); ++i)
      for (std::size_t k = 0; k < d; ++k) g(i, k) += w[sel[i]] * self.grad(sel[i], k);
  });
}

Var truncate_or_pad(const Var& src, std::size_t length) {
  const std::size_t keep = std::min(length, src.rows());
  Var head = slice_rows(src, 0, keep);
  if (keep == length) return head;
  const Var pad = Var::constant(Tensor({length - keep, src.cols()}));
  const Var parts[] = {head, pad};
  return concat_rows(parts);
}

Tensor gaussian_kernel_matrix(const Tensor& x, const Tensor& y, double sigma) {
  if (!(sigma > 0.0)) {
    throw ParameterError("gaussian kernel bandwidth must be positive, got " +
                         std::to_string(sigma));
  }
  check_same_width(x, y, "gaussian_kernel_matrix");
  const double inv = 1.0 / (2.0 * sigma * sigma);
  Tensor k({x.rows(), y.rows()});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < y.rows(); ++j) k(i, j) = std::exp(-sq_dist(x.row(i), y.row(j)) * inv);
  return k;
}

double median_bandwidth(const Tensor& x, const Tensor& y) {
  if (x.rows() + y.rows() < 2) {
    throw ParameterError("median_bandwidth needs at least 2 pooled rows");
  }
  check_same_width(x, y, "median_bandwidth");
  std::vector<std::span<const double>> pooled;
  for (std::size_t i = 0; i < x.rows(); ++i) pooled.push_back(x.row(i));
  for (std::size_t i = 0; i < y.rows(); ++i) pooled.push_back(y.row(i));
  std::vector<double> d2;
  d2.reserve(pooled.size() * (pooled.size() - 1) / 2);
  for (std::size_t i = 0; i < pooled.size(); ++i)
    for (std::size_t j = i + 1; j < pooled.size(); ++j) d2.push_back(sq_dist(pooled[i], pooled[j]));
  const std::size_t mid = d2.size() / 2;
  std::nth_element(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(mid), d2.end());
  double median = d2[mid];
  if (d2.size() % 2 == 0) {
    const double lower = *std::max_element(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (median + lower);
  }
  if (!(median > 0.0)) return 1.0;
  return std::sqrt(median / 2.0);
}

Var mmd_sq(const Var& x, const Var& y, const KernelConfig& kernel) {
  const Tensor& xv = x.value();
  const Tensor& yv = y.value();
  if (xv.rank() != 2 || yv.rank() != 2 || xv.rows() == 0 || yv.rows() == 0) {
    throw ParameterError("mmd_sq: both inputs need at least one row");
  }
  check_same_width(xv, yv, "mmd_sq");
  const double sigma = kernel.resolve(xv, yv);
  const Tensor kxx = gaussian_kernel_matrix(xv, xv, sigma);
  const Tensor kyy = gaussian_kernel_matrix(yv, yv, sigma);
  const Tensor kxy = gaussian_kernel_matrix(xv, yv, sigma);
  const double n = static_cast<double>(xv.rows());
  const double m = static_cast<double>(yv.rows());
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (double v : kxx.data()) sxx += v;
  for (double v : kyy.data()) syy += v;
  for (double v : kxy.data()) sxy += v;
  const double value = sxx / (n * n) + syy / (m * m) - 2.0 * sxy / (n * m);

  return make_var(Tensor::scalar(value), {x, y}, [kxx, kyy, kxy, sigma, n, m](Node& self) {
    Node& px = *self.parents[0];
    Node& py = *self.parents[1];
    const double g = self.grad[0] * fault::gradient_factor(fault::Site::mmd);
    const double inv_s2 = 1.0 / (sigma * sigma);
    const std::size_t d = px.value.cols();
    // d k(a, b) / d a = -k(a, b) (a - b) / sigma^2
    if (px.requires_grad) {
      auto& gx = px.grad_buffer();
      for (std::size_t i = 0; i < px.value.rows(); ++i) {
        const auto xi = px.value.row(i);
        for (std::size_t i2 = 0; i2 < px.value.rows(); ++i2) {
          const double c = -2.0 / (n * n) * kxx(i, i2) * inv_s2 * g;
          const auto xj = px.value.row(i2);
          for (std::size_t k = 0; k < d; ++k) gx(i, k) += c * (xi[k] - xj[k]);
        }
        for (std::size_t j = 0; j < py.value.rows(); ++j) {
          const double c = 2.0 / (n * m) * kxy(i, j) * inv_s2 * g;
          const auto yj = py.value.row(j);
          for (std::size_t k = 0; k < d; ++k) gx(i, k) += c * (xi[k] - yj[k]);
        }
      }
    }
    if (py.requires_grad) {
      auto& gy = py.grad_buffer();
      for (std::size_t j = 0; j < py.value.rows(); ++j) {
        const auto yj = py.value.row(j);
        for (std::size_t j2 = 0; j2 < py.value.rows(); ++j2) {
          const double c = -2.0 / (m * m) * kyy(j, j2) * inv_s2 * g;
          const auto yk = py.value.row(j2);
          for (std::size_t k = 0; k < d; ++k) gy(j, k) += c * (yj[k] - yk[k]);
        }
        for (std::size_t i = 0; i < px.value.rows(); ++i) {
          const double c = 2.0 / (n * m) * kxy(i, j) * inv_s2 * g;
          const auto xi = px.value.row(i);
          for (std::size_t k = 0; k < d; ++k) gy(j, k) += c * (yj[k] - xi[k]);
        }
      }
    }
  });
}

double mmd_sq(const Tensor& x, const Tensor& y, const KernelConfig& kernel) {
  return mmd_sq(Var::constant(x), Var::constant(y), kernel).value()[0];
}

Var align_loss(const Var& audio_aligned, const Var& video_aligned, const Var& language,
               const KernelConfig& kernel) {
  const std::size_t T = language.rows();
  if (audio_aligned.rows() != T || video_aligned.rows() != T) {
    throw DimensionError("align_loss: aligned lengths (audio " +
                         std::to_string(audio_aligned.rows()) + ", video " +
                         std::to_string(video_aligned.rows()) + ") must equal language length " +
                         std::to_string(T));
  }
  return add(mmd_sq(video_aligned, language, kernel), mmd_sq(audio_aligned, language, kernel));
}

}  // namespace xmf::align
