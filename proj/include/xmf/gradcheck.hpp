// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference oracle for the reverse-mode gradients.

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xmf/autodiff.hpp"

namespace xmf {

/// A scalar-valued function of the given leaves.
using ScalarFn = std::function<Var(std::span<const Var>)>;

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-5;
  /// Relative error is |a - n| / max(|a|, |n|, denom_floor); the floor keeps
  /// near-zero gradients from amplifying finite-difference round-off.
  double denom_floor = 1e-3;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_leaf = 0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t coordinates = 0;
  bool passed = true;

  std::string summary() const;
};

/// Compares backward() against (f(x+eps) - f(x-eps)) / (2 eps) for every
/// coordinate of every leaf. Throws NumericError if f is non-finite at any
/// evaluation point and ParameterError if eps <= 0.
GradCheckReport grad_check(const ScalarFn& f, std::span<const Tensor> leaves,
                           const GradCheckOptions& options = {});

GradCheckReport grad_check(const ScalarFn& f, std::span<const Tensor> leaves, double eps,
                           double tol);

}  // namespace xmf
