// SPDX-License-Identifier: Apache-2.0
//
// Run configuration and the command-line front end.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "xmf/bench.hpp"
#include "xmf/data.hpp"
#include "xmf/fusion.hpp"

namespace xmf::cli {

inline constexpr const char* kVersion = "0.3.0";

/// Exit codes shared by every command.
enum ExitCode : int { kOk = 0, kCheckFailed = 1, kUsage = 2, kNumeric = 3 };

/// Malformed, mistyped or unknown configuration entries.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a command may need. Component seeds left unset in the JSON
/// are derived from the root seed: derive_seed(seed, "data"),
/// derive_seed(seed, "train"), derive_seed(seed, "eval") and
/// derive_seed(seed, "bench").
struct RunConfig {
  std::uint64_t seed = 1;
  data::SynthConfig data;
  double test_fraction = 0.2;
  fusion::FusionConfig model;
  fusion::TrainConfig train;
  std::vector<double> missing_rates{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  std::uint64_t eval_seed = 0;
  bench::SweepConfig bench;

  /// Defaults with every component seed derived from `root`.
  static RunConfig defaults(std::uint64_t root = 1);
};

/// Which component seeds a JSON document set explicitly.
struct SeedOverrides {
  bool data = false, train = false, eval = false, bench = false;
};

/// Builds a config from JSON on top of the defaults. Unknown keys, wrong
/// types and invalid values throw ConfigError naming the key path.
RunConfig parse_run_config(const nlohmann::json& j, SeedOverrides* explicit_seeds = nullptr);
/// Reads and parses a JSON file; syntax errors report line and column.
RunConfig load_run_config(const std::filesystem::path& path,
                          SeedOverrides* explicit_seeds = nullptr);
/// Fully resolved form; parse_run_config(to_json(c)) reproduces c.
nlohmann::json to_json(const RunConfig& c);

/// Sets the root seed and re-derives the component seeds not in
/// `explicit_seeds`.
void apply_root_seed(RunConfig& c, std::uint64_t root, const SeedOverrides& explicit_seeds);

/// Entry point of the `xmf` binary; returns the process exit code.
int run(int argc, char** argv);

}  // namespace xmf::cli
