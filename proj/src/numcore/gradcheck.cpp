// SPDX-License-Identifier: Apache-2.0

#include "xmf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "xmf/errors.hpp"

namespace xmf {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "ok" : "FAIL") << " max_rel_err=" << max_rel_error << " (leaf " << worst_leaf
     << " idx " << worst_index << ": analytic " << analytic_at_worst << " vs numeric "
     << numeric_at_worst << ", " << coordinates << " coords)";
  return os.str();
}

namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor>& values) {
  std::vector<Var> leaves;
  leaves.reserve(values.size());
  for (const Tensor& t : values) leaves.push_back(Var::constant(t));
  const Var out = f(leaves);
  if (out.value().size() != 1) throw DimensionError("grad_check: f must return a scalar");
  return out.value()[0];
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, std::span<const Tensor> leaves,
                           const GradCheckOptions& options) {
  if (!(options.eps > 0.0)) throw ParameterError("grad_check: eps must be positive");

  std::vector<Var> vars;
  vars.reserve(leaves.size());
  for (const Tensor& t : leaves) vars.push_back(Var::leaf(t, true));
  const Var out = f(vars);
  if (!std::isfinite(out.value().item())) {
    throw NumericError("grad_check: f is not finite at the evaluation point");
  }
  backward(out);

  std::vector<Tensor> point(leaves.begin(), leaves.end());
  GradCheckReport report;
  for (std::size_t l = 0; l < point.size(); ++l) {
    const Tensor analytic = vars[l].grad();
    for (std::size_t i = 0; i < point[l].size(); ++i) {
      const double x0 = point[l][i];
      point[l][i] = x0 + options.eps;
      const double fp = evaluate(f, point);
      point[l][i] = x0 - options.eps;
      const double fm = evaluate(f, point);
      point[l][i] = x0;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw NumericError("grad_check: f not finite at perturbed point (leaf " +
                           std::to_string(l) + ", index " + std::to_string(i) + ")");
      }
      const double numeric = (fp - fm) / (2.0 * options.eps);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.denom_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.coordinates;
      if (rel > report.max_rel_error || report.coordinates == 1) {
        report.max_rel_error = rel;
        report.worst_leaf = l;
        report.worst_index = i;
        report.analytic_at_worst = a;
        report.numeric_at_worst = numeric;
      }
    }
  }
  report.passed = report.max_rel_error <= options.tol;
  return report;
}

GradCheckReport grad_check(const ScalarFn& f, std::span<const Tensor> leaves, double eps,
                           double tol) {
  GradCheckOptions o;
  o.eps = eps;
  o.tol = tol;
  return grad_check(f, leaves, o);
}

}  // namespace xmf
