// SPDX-License-Identifier: Apache-2.0
//
// Seeded finite-difference suites over the differentiable pipeline pieces:
// mmd_sq, align_loss, selective_scan, mamba_block and composite_loss.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace xmf::fusion {

struct SuiteReport {
  std::string name;
  std::size_t configs = 0;
  std::size_t failures = 0;
  double max_rel_error = 0.0;
  /// summary() of the worst configuration.
  std::string worst;
  bool passed() const { return configs > 0 && failures == 0; }
};

struct SuiteOptions {
  std::size_t configs = 50;
  double tol = 1e-4;
  double eps = 1e-5;
};

/// Configuration k of suite s draws its shapes and values from
/// derive_seed(seed, "gradcheck/<s>/<k>").
std::vector<SuiteReport> run_gradient_suites(std::uint64_t seed, const SuiteOptions& options = {});

}  // namespace xmf::fusion
