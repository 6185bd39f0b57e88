// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "xmf/alignment.hpp"
#include "xmf/errors.hpp"
#include "xmf/gradcheck.hpp"
#include "xmf/rng.hpp"

namespace xmf::align {
namespace {

TEST(CosineCost, HandValues) {
  EXPECT_NEAR(cosine_cost(Tensor::from_rows({{1, 0}}), Tensor::from_rows({{1, 0}})).values(0, 0),
              0.0, 1e-15);
  EXPECT_NEAR(cosine_cost(Tensor::from_rows({{1, 0}}), Tensor::from_rows({{0, 1}})).values(0, 0),
              1.0, 1e-15);
  EXPECT_NEAR(cosine_cost(Tensor::from_rows({{1, 1}}), Tensor::from_rows({{1, 0}})).values(0, 0),
              1.0 - 1.0 / std::sqrt(2.0), 1e-12);
}

TEST(CosineCost, ZeroRowNamesInputAndRow) {
  try {
    cosine_cost(Tensor::from_rows({{1, 0}, {0, 0}}), Tensor::from_rows({{1, 0}}));
    FAIL();
  } catch (const DegenerateInputError& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(cosine_cost(Tensor::matrix(2, 3, 1.0), Tensor::matrix(2, 2, 1.0)), DimensionError);
}

TEST(CosineCost, RangeAndScaleInvariance) {
  Rng rng(4);
  for (int k = 0; k < 50; ++k) {
    const Tensor x = rng.normal_tensor({5, 3});
    const Tensor y = rng.normal_tensor({4, 3});
    const CostMatrix c = cosine_cost(x, y);
    for (double v : c.values.data()) {
      EXPECT_GE(v, -1e-12);
      EXPECT_LE(v, 2.0 + 1e-12);
    }
    Tensor xs = x;
    for (std::size_t i = 0; i < xs.rows(); ++i) {
      const double s = rng.uniform(0.1, 10.0);
      for (double& v : xs.row(i)) v *= s;
    }
    EXPECT_LE(max_abs_diff(cosine_cost(xs, y).values, c.values), 1e-12);
  }
}

TEST(RelaxedOt, HandExample) {
  const CostMatrix c{Tensor::from_rows({{0.2, 0.5}, {0.9, 0.1}, {0.4, 0.6}})};
  const TransportPlan p = relaxed_ot_plan(c);
  const double t = 1.0 / 3.0;
  EXPECT_EQ(p.dense(), Tensor::from_rows({{t, 0}, {0, t}, {t, 0}}));
}

TEST(RelaxedOt, TieGoesToFirstColumn) {
  const TransportPlan p = relaxed_ot_plan(CostMatrix{Tensor::from_rows({{0.5, 0.5}})});
  EXPECT_EQ(p.selected()[0], 0u);
}

TEST(RelaxedOt, EmptyMatrixThrows) {
  EXPECT_THROW(relaxed_ot_plan(CostMatrix{Tensor({0, 0})}), DimensionError);
}

TEST(RelaxedOt, MarginalsExact) {
  Rng rng(8);
  for (int k = 0; k < 50; ++k) {
    const std::size_t n = 1 + rng.index(8), m = 1 + rng.index(8);
    const TransportPlan p = relaxed_ot_plan(CostMatrix{rng.uniform_tensor({n, m}, 0.0, 2.0)});
    const Tensor d = p.dense();
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = d.row(i);
      EXPECT_EQ(std::count_if(row.begin(), row.end(), [](double v) { return v != 0.0; }), 1);
      EXPECT_EQ(std::accumulate(row.begin(), row.end(), 0.0), 1.0 / double(n));
    }
    const auto cm = p.column_mass();
    EXPECT_NEAR(std::accumulate(cm.begin(), cm.end(), 0.0), 1.0, 1e-12);
  }
}

// Exhaustive search over all per-row assignments, first minimum kept.
std::vector<std::size_t> brute_force_assignment(const Tensor& c) {
  const std::size_t n = c.rows(), m = c.cols();
  std::vector<std::size_t> cur(n, 0), best;
  double best_cost = INFINITY;
  for (;;) {
    double cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) cost += c(i, cur[i]) / double(n);
    if (cost < best_cost) {
      best_cost = cost;
      best = cur;
    }
    std::size_t i = n;
    while (i > 0 && ++cur[i - 1] == m) cur[--i] = 0;
    if (i == 0) break;
  }
  return best;
}

TEST(RelaxedOt, MatchesExhaustiveOracle) {
  for (int seed = 0; seed < 200; ++seed) {
    Rng rng(derive_seed(seed, "ot/oracle"));
    const std::size_t n = 1 + rng.index(8), m = 1 + rng.index(8);
    const Tensor c = rng.uniform_tensor({n, m}, 0.0, 2.0);
    EXPECT_EQ(relaxed_ot_plan(CostMatrix{c}).selected(), brute_force_assignment(c)) << seed;
  }
}

TEST(RelaxedOt, BelowEveryPermutationPlan) {
  for (int seed = 0; seed < 50; ++seed) {
    Rng rng(derive_seed(seed, "ot/perm"));
    const std::size_t T = 1 + rng.index(5);
    const CostMatrix c{rng.uniform_tensor({T, T}, 0.0, 2.0)};
    const double relaxed = relaxed_ot_plan(c).cost(c);
    std::vector<std::size_t> perm(T);
    std::iota(perm.begin(), perm.end(), 0);
    do {
      EXPECT_LE(relaxed, TransportPlan(perm, T).cost(c) + 1e-15);
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
}

TEST(ApplyPlan, LiteralAndMassNormalized) {
  const TransportPlan p({0, 1, 0}, 2);
  const Tensor x = Tensor::from_rows({{1, 0}, {0, 2}, {3, 0}});
  EXPECT_LE(max_abs_diff(apply_plan(p, x), Tensor::from_rows({{4.0 / 3, 0}, {0, 2.0 / 3}})), 1e-15);
  EXPECT_LE(max_abs_diff(apply_plan(p, x, PlanMode::mass_normalized),
                         Tensor::from_rows({{2, 0}, {0, 2}})),
            1e-15);
  EXPECT_THROW(apply_plan(p, Tensor::matrix(2, 2)), DimensionError);
}

TEST(ApplyPlan, IdentityPlanMassNormalizedIsIdentity) {
  Rng rng(2);
  const Tensor x = rng.normal_tensor({5, 3});
  EXPECT_LE(max_abs_diff(apply_plan(TransportPlan::identity(5), x, PlanMode::mass_normalized), x),
            1e-15);
}

TEST(ApplyPlan, MatchesNaiveLoop) {
  Rng rng(12);
  for (int k = 0; k < 50; ++k) {
    const std::size_t n = 1 + rng.index(8), m = 1 + rng.index(8), d = 1 + rng.index(4);
    const Tensor x = rng.normal_tensor({n, d});
    const TransportPlan p = relaxed_ot_plan(CostMatrix{rng.uniform_tensor({n, m}, 0.0, 2.0)});
    Tensor expect({m, d}, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < d; ++c) expect(p.selected()[i], c) += x(i, c) / double(n);
    }
    EXPECT_LE(max_abs_diff(apply_plan(p, x), expect), 1e-14);
    const Var v = apply_plan(p, Var::constant(x));
    EXPECT_EQ(v.value(), apply_plan(p, x));
  }
}

TEST(Kernel, HandValues) {
  const Tensor x = Tensor::from_rows({{0.0}}), y = Tensor::from_rows({{2.0}});
  EXPECT_NEAR(gaussian_kernel_matrix(x, y, 1.0)(0, 0), std::exp(-2.0), 1e-15);
  EXPECT_EQ(gaussian_kernel_matrix(y, y, 0.3)(0, 0), 1.0);
  EXPECT_THROW(gaussian_kernel_matrix(x, y, 0.0), ParameterError);
  Rng rng(1);
  const Tensor k = gaussian_kernel_matrix(rng.normal_tensor({6, 2}), rng.normal_tensor({5, 2}), 0.7);
  for (double v : k.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Mmd, TwoPointHandValue) {
  const double v = mmd_sq(Tensor::from_rows({{0.0}}), Tensor::from_rows({{2.0}}),
                          KernelConfig::fixed(1.0));
  EXPECT_NEAR(v, 2.0 - 2.0 * std::exp(-2.0), 1e-9);
  EXPECT_NEAR(v, 1.72933, 1e-5);
}

TEST(Mmd, Axioms) {
  Rng rng(21);
  for (int k = 0; k < 50; ++k) {
    const Tensor x = rng.normal_tensor({1 + rng.index(6), 3});
    const Tensor y = rng.normal_tensor({1 + rng.index(6), 3}, 0.5, 1.0);
    for (const KernelConfig kc : {KernelConfig::median(), KernelConfig::fixed(1.3)}) {
      EXPECT_LE(std::abs(mmd_sq(x, x, kc)), 1e-9);
      EXPECT_LE(std::abs(mmd_sq(x, y, kc) - mmd_sq(y, x, kc)), 1e-12);
      EXPECT_GE(mmd_sq(x, y, kc), -1e-9);
    }
  }
  EXPECT_THROW(mmd_sq(Tensor::matrix(2, 3), Tensor::matrix(2, 2), KernelConfig::median()),
               DimensionError);
  EXPECT_THROW(mmd_sq(Tensor::matrix(0, 3), Tensor::matrix(2, 3), KernelConfig::median()),
               ParameterError);
  EXPECT_THROW(KernelConfig::fixed(-1.0), ParameterError);
}

TEST(Mmd, PositiveOnDistinctDistributions) {
  double total = 0.0;
  for (int s = 0; s < 20; ++s) {
    Rng rng(derive_seed(s, "mmd/distinct"));
    total += mmd_sq(rng.normal_tensor({20, 2}), rng.normal_tensor({20, 2}, 1.0, 1.0),
                    KernelConfig::median());
  }
  EXPECT_GT(total / 20.0, 0.05);
}

TEST(Mmd, MatchesDefinition) {
  Rng rng(5);
  const Tensor x = rng.normal_tensor({4, 3}), y = rng.normal_tensor({3, 3});
  const double s = 0.9;
  const auto mean_k = [&](const Tensor& a, const Tensor& b) {
    double t = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
      for (std::size_t j = 0; j < b.rows(); ++j) {
        double d2 = 0.0;
        for (std::size_t c = 0; c < 3; ++c) d2 += (a(i, c) - b(j, c)) * (a(i, c) - b(j, c));
        t += std::exp(-d2 / (2 * s * s));
      }
    }
    return t / double(a.rows() * b.rows());
  };
  EXPECT_NEAR(mmd_sq(x, y, KernelConfig::fixed(s)), mean_k(x, x) + mean_k(y, y) - 2 * mean_k(x, y),
              1e-12);
}

TEST(Mmd, GradientAtRandomPoints) {
  Rng rng(31);
  const Tensor leaves[] = {rng.normal_tensor({4, 3}), rng.normal_tensor({4, 3})};
  const auto f = [](std::span<const Var> v) {
    return mmd_sq(v[0], v[1], KernelConfig::fixed(1.1));
  };
  const GradCheckReport r = grad_check(f, leaves, 1e-5, 1e-6);
  EXPECT_TRUE(r.passed) << r.summary();
}

TEST(MedianBandwidth, Examples) {
  EXPECT_NEAR(median_bandwidth(Tensor::from_rows({{0.0}}), Tensor::from_rows({{2.0}})),
              std::sqrt(2.0), 1e-15);
  EXPECT_EQ(median_bandwidth(Tensor::matrix(3, 2, 1.5), Tensor::matrix(2, 2, 1.5)), 1.0);
  EXPECT_THROW(median_bandwidth(Tensor::matrix(1, 2), Tensor::matrix(0, 2)), ParameterError);
}

TEST(MedianBandwidth, Homogeneous) {
  Rng rng(6);
  const Tensor x = rng.normal_tensor({5, 2}), y = rng.normal_tensor({4, 2});
  for (const double c : {0.5, 3.0, -2.0}) {
    Tensor xs = x, ys = y;
    for (double& v : xs.data()) v *= c;
    for (double& v : ys.data()) v *= c;
    EXPECT_NEAR(median_bandwidth(xs, ys), std::abs(c) * median_bandwidth(x, y), 1e-12);
  }
}

TEST(AlignLoss, DefinitionAndZeroCase) {
  Rng rng(9);
  const Tensor a = rng.normal_tensor({4, 3}), v = rng.normal_tensor({4, 3}),
               l = rng.normal_tensor({4, 3});
  const KernelConfig k = KernelConfig::median();
  const double got = align_loss(Var::constant(a), Var::constant(v), Var::constant(l), k)
                         .value()
                         .item();
  EXPECT_NEAR(got, mmd_sq(v, l, k) + mmd_sq(a, l, k), 1e-12);
  EXPECT_LE(std::abs(align_loss(Var::constant(l), Var::constant(l), Var::constant(l), k)
                         .value()
                         .item()),
            1e-9);
  EXPECT_THROW(align_loss(Var::constant(rng.normal_tensor({3, 3})), Var::constant(v),
                          Var::constant(l), k),
               DimensionError);
}

TEST(AlignLoss, GradientWrtVideo) {
  Rng rng(10);
  const Tensor a = rng.normal_tensor({4, 3}), l = rng.normal_tensor({4, 3});
  const Tensor v = rng.normal_tensor({4, 3});
  const auto f = [&](std::span<const Var> x) {
    return align_loss(Var::constant(a), x[0], Var::constant(l), KernelConfig::fixed(1.0));
  };
  const GradCheckReport r = grad_check(f, std::span<const Tensor>(&v, 1), 1e-5, 1e-6);
  EXPECT_TRUE(r.passed) << r.summary();
}

}  // namespace
}  // namespace xmf::align
