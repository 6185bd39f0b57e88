// SPDX-License-Identifier: Apache-2.0
//
// Cross-modal alignment.
//
// Local (token-level): a cosine cost between source and anchor tokens, the
// row-relaxed transport problem (only outgoing mass is constrained, each
// source row carries 1/T_src) and its closed-form solution, where every row
// sends all its mass to its cheapest anchor column. The aligned sequence is
// M^T * X_src, which lives on the anchor timeline.
//
// Global (distribution-level): squared MMD under a Gaussian kernel, using
// the biased V-statistic with self-pairs included.

#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "xmf/autodiff.hpp"
#include "xmf/tensor.hpp"

namespace xmf::align {

/// values(i, j) = 1 - cos(src_i, anchor_j), in [0, 2].
struct CostMatrix {
  Tensor values;

  std::size_t source_count() const { return values.rows(); }
  std::size_t anchor_count() const { return values.cols(); }
};

/// Row-relaxed transport plan. Stored sparsely: row i holds 1/T_src at
/// column selected()[i] and zero elsewhere.
class TransportPlan {
 public:
  TransportPlan(std::vector<std::size_t> selected, std::size_t anchor_count);

  /// Row i -> column i on a square n x n grid.
  static TransportPlan identity(std::size_t n);

  std::size_t source_count() const noexcept { return selected_.size(); }
  std::size_t anchor_count() const noexcept { return anchor_count_; }
  double mass() const noexcept { return 1.0 / static_cast<double>(selected_.size()); }
  const std::vector<std::size_t>& selected() const noexcept { return selected_; }

  double operator()(std::size_t i, std::size_t j) const {
    return selected_[i] == j ? mass() : 0.0;
  }
  Tensor dense() const;
  /// Mass received by each anchor column; sums to 1.
  std::vector<double> column_mass() const;
  /// Sum_i M(i, j) C(i, j).
  double cost(const CostMatrix& c) const;

  bool operator==(const TransportPlan&) const = default;

 private:
  std::vector<std::size_t> selected_;
  std::size_t anchor_count_;
};

enum class PlanMode {
  /// Exactly M^T * X_src: rows carry 1/T_src per assigned token, and anchor
  /// positions nobody maps to stay zero.
  literal,
  /// Each output row divided by its column mass, i.e. the mean of the source
  /// tokens assigned there. Unassigned rows stay zero.
  mass_normalized,
};

const char* to_string(PlanMode mode);
std::optional<PlanMode> parse_plan_mode(std::string_view s);

/// Gaussian bandwidth: fixed sigma, or the median heuristic when unset.
struct KernelConfig {
  std::optional<double> sigma;

  static KernelConfig fixed(double s);
  static KernelConfig median() { return {}; }
  bool is_median() const noexcept { return !sigma.has_value(); }
  /// The bandwidth used for this pair of inputs.
  double resolve(const Tensor& x, const Tensor& y) const;
};

/// Throws DegenerateInputError naming the input and row when a row has norm
/// below 1e-12, DimensionError when feature widths differ.
CostMatrix cosine_cost(const Tensor& src, const Tensor& anchor);

/// Closed-form plan: argmin per row, ties to the smallest column index.
TransportPlan relaxed_ot_plan(const CostMatrix& cost);

Tensor apply_plan(const TransportPlan& plan, const Tensor& src,
                  PlanMode mode = PlanMode::literal);
/// Differentiable in src; the plan itself is a constant.
Var apply_plan(const TransportPlan& plan, const Var& src, PlanMode mode = PlanMode::literal);

/// Identity stand-in for the aligner: keep the first `length` rows, pad with
/// zero rows when the source is shorter.
Var truncate_or_pad(const Var& src, std::size_t length);

/// k(x_i, y_j) = exp(-|x_i - y_j|^2 / (2 sigma^2)).
Tensor gaussian_kernel_matrix(const Tensor& x, const Tensor& y, double sigma);

/// sigma = sqrt(median pairwise squared distance over the pooled rows / 2),
/// falling back to 1 when the median is zero.
double median_bandwidth(const Tensor& x, const Tensor& y);

/// Biased (V-statistic) squared MMD with weights 1/n^2, 1/m^2, 2/(nm).
/// The bandwidth is resolved from the input values and held constant in
/// the backward pass.
Var mmd_sq(const Var& x, const Var& y, const KernelConfig& kernel);
double mmd_sq(const Tensor& x, const Tensor& y, const KernelConfig& kernel);

/// MMD^2(video, language) + MMD^2(audio, language), all on the anchor grid.
Var align_loss(const Var& audio_aligned, const Var& video_aligned, const Var& language,
               const KernelConfig& kernel);

}  // namespace xmf::align
