// SPDX-License-Identifier: Apache-2.0
//
// Seeded pseudo-random source.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard, so draws are identical on every conforming platform. The
// distributions are implemented here rather than taken from <random>
// because the standard leaves those implementation-defined:
//   uniform()   = (next() >> 11) * 2^-53, in [0, 1)
//   normal()    = Box-Muller on two uniforms, spare value cached
//   index(n)    = floor(uniform() * n)
//
// Component seeds are split from a root seed with
//   derive_seed(root, tag) = splitmix64(root ^ fnv1a64(tag)).

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string_view>

#include "xmf/tensor.hpp"

namespace xmf {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view s);
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  std::size_t index(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }

  Tensor uniform_tensor(const Shape& shape, double lo, double hi);
  Tensor normal_tensor(const Shape& shape, double mean = 0.0, double stddev = 1.0);

  /// Fisher-Yates shuffle of [0, n).
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::optional<double> spare_normal_;
};

}  // namespace xmf
