// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale efficiency comparison of scan fusion against single-stream and
// multi-stream attention: closed-form FLOP and memory models, forward-only
// reference implementations and a timed length sweep.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xmf/fusion.hpp"
#include "xmf/tensor.hpp"

namespace xmf::bench {

enum class Method { scan, single_stream, multi_stream };

std::string to_string(Method m);
/// Accepts "scan", "single_stream", "multi_stream"; ParameterError otherwise.
Method parse_method(const std::string& s);
inline constexpr Method kAllMethods[] = {Method::scan, Method::single_stream, Method::multi_stream};

// --- cost models --------------------------------------------------------------
//
// Counts are multiply-adds. With L the total fused length:
//   attention(Lq, Lk) = (2 Lq + 2 Lk) d^2 + 2 Lq Lk d
//       Q and output projections over Lq rows, K and V over Lk rows, then
//       the score product and the value mix.
//   scan           = L (3 d^2 + 6 d N + 2 d)
//       delta, gate and output projections (3 d^2), B and C (2 d N), the
//       recurrence (4 d N: discretisation, two state terms, readout), gate
//       and skip products (2 d).
//   single_stream  = attention(L, L)
//   multi_stream   = sum over the six ordered pairs m <- n of
//                    attention(T_m, T_n), plus attention(2 T_m, 2 T_m) over
//                    each target's concatenated pair outputs.
// The three modality lengths are split_lengths(L).

std::array<std::size_t, 3> split_lengths(std::size_t L);

std::uint64_t attention_flops(std::size_t lq, std::size_t lk, std::size_t d);
/// Throws ParameterError when any dimension is zero.
std::uint64_t flops_count(Method method, std::size_t L, std::size_t d, std::size_t N);

/// Peak bytes of live buffers in the reference implementations below
/// (activations only; weights are counted once).
std::uint64_t memory_model(Method method, std::size_t L, std::size_t d, std::size_t N);

// --- reference implementations -------------------------------------------------

struct AttentionWeights {
  Tensor wq, wk, wv, wo;  // each d x d
  static AttentionWeights random(std::size_t d, std::uint64_t seed);
};

struct AttentionOptions {
  /// Upper bound on the activation bytes one attention call may hold.
  std::uint64_t byte_budget = std::uint64_t{2} << 30;
};

/// Cross-attention softmax(Q K^T / sqrt(d)) V followed by the output
/// projection, with Q from `queries` and K, V from `keys`. Throws
/// BudgetError before allocating when the call would exceed the budget.
Tensor attention(const Tensor& queries, const Tensor& keys, const AttentionWeights& w,
                 const AttentionOptions& options = {});

/// Self-attention over x (already the concatenated multimodal sequence).
Tensor attention_single_stream(const Tensor& x, const AttentionWeights& w,
                               const AttentionOptions& options = {});

/// Six ordered cross-modal attentions; for each target modality the two
/// outputs are stacked and passed through one self-attention layer; the
/// three results are stacked in audio, video, language order. Output is
/// [2 (T_a + T_v + T_l) x d].
Tensor attention_multi_stream(const Tensor& xa, const Tensor& xv, const Tensor& xl,
                              const AttentionWeights& w, const AttentionOptions& options = {});

/// One pre-norm Mamba block over x, forward only: the operation timed as
/// "scan" in the sweep.
Tensor scan_fusion(const Tensor& x, const fusion::MambaLayerParams& layer);

/// Row-wise softmax of the scaled score matrix; exposed for tests.
Tensor attention_weights(const Tensor& queries, const Tensor& keys, const AttentionWeights& w);

// --- allocation tracking -------------------------------------------------------

/// Global operator new is instrumented whenever this library is linked.
/// A scope records the peak of live heap bytes above the level at which it
/// was opened. Scopes do not nest.
class AllocationScope {
 public:
  AllocationScope();
  ~AllocationScope();
  AllocationScope(const AllocationScope&) = delete;
  AllocationScope& operator=(const AllocationScope&) = delete;
  std::uint64_t peak_bytes() const;

 private:
  std::uint64_t baseline_;
};

// --- sweep ---------------------------------------------------------------------

struct BenchResult {
  Method method = Method::scan;
  std::size_t length = 0;
  double median_ms = 0.0;
  int repeats = 0;
  std::uint64_t flops = 0;
  std::uint64_t estimated_bytes = 0;
  std::uint64_t measured_bytes = 0;
  bool oom = false;  // budget exceeded; not timed and left out of the fit
};

struct SweepConfig {
  std::vector<std::size_t> lengths{512, 1024, 2048, 4096, 8192};
  int repeats = 5;
  int warmup = 2;
  std::size_t d = 64;
  std::size_t N = 16;
  std::uint64_t seed = 1;
  std::uint64_t byte_budget = std::uint64_t{2} << 30;
  std::vector<Method> methods{Method::scan, Method::single_stream, Method::multi_stream};
};

struct SweepResult {
  std::vector<BenchResult> results;
  /// Least-squares slope of log(median_ms) against log(L); NaN with fewer
  /// than two timed lengths.
  std::map<Method, double> slopes;
};

/// Times every (method, length) pair sequentially on the calling thread.
/// Throws ParameterError for fewer than 3 lengths or fewer than 5 repeats,
/// and if another sweep is already running in this process.
SweepResult run_scaling_sweep(const SweepConfig& config);

/// True while run_scaling_sweep is executing anywhere in the process.
bool sweep_running();
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

/// Columns method,length,median_ms,flops,estimated_bytes; OOM rows carry
/// "oom" in median_ms. Footer lines "# slope,<method>,<value>".
void write_sweep_csv(const SweepResult& result, const std::filesystem::path& path);

}  // namespace xmf::bench
