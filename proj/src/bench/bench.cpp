// SPDX-License-Identifier: Apache-2.0

#include "xmf/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "xmf/errors.hpp"
#include "xmf/rng.hpp"

namespace xmf::bench {

std::string to_string(Method m) {
  switch (m) {
    case Method::scan: return "scan";
    case Method::single_stream: return "single_stream";
    case Method::multi_stream: return "multi_stream";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  for (Method m : kAllMethods) {
    if (to_string(m) == s) return m;
  }
  throw ParameterError("unknown bench method \"" + s +
                       "\" (expected scan, single_stream or multi_stream)");
}

// --- cost models ----------------------------------------------------------------

std::array<std::size_t, 3> split_lengths(std::size_t L) {
  const std::size_t t = L / 3;
  return {t, t, L - 2 * t};
}

std::uint64_t attention_flops(std::size_t lq, std::size_t lk, std::size_t d) {
  const std::uint64_t q = lq, k = lk, dd = d;
  return (2 * q + 2 * k) * dd * dd + 2 * q * k * dd;
}

namespace {

void check_dims(std::size_t L, std::size_t d, std::size_t N) {
  if (L == 0 || d == 0 || N == 0) {
    throw ParameterError("bench dimensions must be positive (L=" + std::to_string(L) +
                         ", d=" + std::to_string(d) + ", N=" + std::to_string(N) + ")");
  }
}

// Peak activation doubles inside attention(): Q, K, V, K^T and the score
// matrix are live together while the scores are formed.
std::uint64_t attention_peak(std::size_t lq, std::size_t lk, std::size_t d) {
  const std::uint64_t q = lq, k = lk, dd = d;
  return q * k + q * dd + 3 * k * dd;
}

}  // namespace

std::uint64_t flops_count(Method method, std::size_t L, std::size_t d, std::size_t N) {
  check_dims(L, d, N);
  const std::uint64_t l = L, dd = d, n = N;
  switch (method) {
    case Method::scan:
      return l * (3 * dd * dd + 6 * dd * n + 2 * dd);
    case Method::single_stream:
      return attention_flops(L, L, d);
    case Method::multi_stream: {
      const auto T = split_lengths(L);
      std::uint64_t total = 0;
      for (std::size_t m = 0; m < 3; ++m) {
        for (std::size_t s = 0; s < 3; ++s) {
          if (s != m) total += attention_flops(T[m], T[s], d);
        }
        total += attention_flops(2 * T[m], 2 * T[m], d);
      }
      return total;
    }
  }
  return 0;
}

std::uint64_t memory_model(Method method, std::size_t L, std::size_t d, std::size_t N) {
  check_dims(L, d, N);
  const std::uint64_t l = L, dd = d, n = N;
  std::uint64_t doubles = 0;
  switch (method) {
    case Method::scan:
      // normalised input, gate, delta, scan output, two transients; B and C;
      // the discretised A and the running state.
      doubles = 6 * l * dd + 2 * l * n + 2 * dd * n;
      break;
    case Method::single_stream:
      doubles = attention_peak(L, L, d);
      break;
    case Method::multi_stream: {
      const auto T = split_lengths(L);
      std::uint64_t done = 0, peak = 0;
      for (std::size_t m = 0; m < 3; ++m) {
        std::uint64_t pair_out = 0;
        for (std::size_t s = 0; s < 3; ++s) {
          if (s == m) continue;
          peak = std::max(peak, done + pair_out + attention_peak(T[m], T[s], d));
          pair_out += T[m] * dd;
        }
        peak = std::max(peak, done + 2 * pair_out);  // stacking copies both outputs
        peak = std::max(peak, done + pair_out + attention_peak(2 * T[m], 2 * T[m], d));
        done += 2 * T[m] * dd;
      }
      doubles = std::max(peak, 2 * done);  // final stacking
      break;
    }
  }
  return doubles * sizeof(double);
}

// --- reference implementations ------------------------------------------------------

AttentionWeights AttentionWeights::random(std::size_t d, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "bench/attention"));
  const double r = 1.0 / std::sqrt(static_cast<double>(d));
  AttentionWeights w;
  w.wq = rng.uniform_tensor({d, d}, -r, r);
  w.wk = rng.uniform_tensor({d, d}, -r, r);
  w.wv = rng.uniform_tensor({d, d}, -r, r);
  w.wo = rng.uniform_tensor({d, d}, -r, r);
  return w;
}

namespace {

void check_attention_inputs(const Tensor& q, const Tensor& k, const AttentionWeights& w) {
  if (q.rank() != 2 || k.rank() != 2 || q.rows() == 0 || k.rows() == 0) {
    throw DimensionError("attention: inputs must be non-empty matrices, got " +
                         shape_str(q.shape()) + " and " + shape_str(k.shape()));
  }
  const std::size_t d = q.cols();
  if (k.cols() != d || w.wq.shape() != Shape{d, d} || w.wk.shape() != Shape{d, d} ||
      w.wv.shape() != Shape{d, d} || w.wo.shape() != Shape{d, d}) {
    throw DimensionError("attention: widths differ (queries " + shape_str(q.shape()) +
                         ", keys " + shape_str(k.shape()) + ", weights " +
                         shape_str(w.wq.shape()) + ")");
  }
}

void softmax_rows(Tensor& s) {
  for (std::size_t r = 0; r < s.rows(); ++r) {
    auto row = s.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double& v : row) sum += (v = std::exp(v - mx));
    for (double& v : row) v /= sum;
  }
}

Tensor scores(const Tensor& queries, const Tensor& keys, const AttentionWeights& w) {
  Tensor s;
  {
    const Tensor q = matmul(queries, w.wq);
    const Tensor kt = transpose(matmul(keys, w.wk));
    s = matmul(q, kt);
  }
  const double inv = 1.0 / std::sqrt(static_cast<double>(queries.cols()));
  for (double& v : s.data()) v *= inv;
  softmax_rows(s);
  return s;
}

Tensor stack_rows(const Tensor& a, const Tensor& b) {
  Tensor out({a.rows() + b.rows(), a.cols()});
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(), out.data().begin() + a.size());
  return out;
}

}  // namespace

Tensor attention_weights(const Tensor& queries, const Tensor& keys, const AttentionWeights& w) {
  check_attention_inputs(queries, keys, w);
  return scores(queries, keys, w);
}

Tensor attention(const Tensor& queries, const Tensor& keys, const AttentionWeights& w,
                 const AttentionOptions& options) {
  check_attention_inputs(queries, keys, w);
  const std::uint64_t need =
      attention_peak(queries.rows(), keys.rows(), queries.cols()) * sizeof(double);
  if (need > options.byte_budget) {
    throw BudgetError("attention over " + std::to_string(queries.rows()) + " x " +
                      std::to_string(keys.rows()) + " tokens needs " + std::to_string(need) +
                      " bytes, budget is " + std::to_string(options.byte_budget));
  }
  Tensor mixed;
  {
    // V is formed first so that it is the only projection alive next to the scores.
    const Tensor v = matmul(keys, w.wv);
    const Tensor s = scores(queries, keys, w);
    mixed = matmul(s, v);
  }
  return matmul(mixed, w.wo);
}

Tensor attention_single_stream(const Tensor& x, const AttentionWeights& w,
                               const AttentionOptions& options) {
  return attention(x, x, w, options);
}

Tensor attention_multi_stream(const Tensor& xa, const Tensor& xv, const Tensor& xl,
                              const AttentionWeights& w, const AttentionOptions& options) {
  const Tensor* x[3] = {&xa, &xv, &xl};
  for (const Tensor* t : x) {
    if (t->rank() != 2 || t->cols() != xl.cols()) {
      throw DimensionError("attention_multi_stream: widths differ (audio " +
                           shape_str(xa.shape()) + ", video " + shape_str(xv.shape()) +
                           ", language " + shape_str(xl.shape()) + ")");
    }
  }
  std::array<Tensor, 3> fused;
  for (std::size_t m = 0; m < 3; ++m) {
    const std::size_t s0 = m == 0 ? 1 : 0;
    const std::size_t s1 = m == 2 ? 1 : 2;
    const Tensor first = attention(*x[m], *x[s0], w, options);
    const Tensor second = attention(*x[m], *x[s1], w, options);
    const Tensor both = stack_rows(first, second);
    fused[m] = attention(both, both, w, options);
  }
  return stack_rows(stack_rows(fused[0], fused[1]), fused[2]);
}

Tensor scan_fusion(const Tensor& x, const fusion::MambaLayerParams& layer) {
  const fusion::MambaLayerVars vars = fusion::layer_vars(layer, false);
  return fusion::mamba_block(Var::constant(x), vars).value();
}

// --- sweep ------------------------------------------------------------------------

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw DimensionError("loglog_slope: x and y differ in length");
  if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw ParameterError("loglog_slope: values must be positive");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / sxx;
}

namespace {

std::atomic<bool> g_sweep_running{false};

struct RunningGuard {
  RunningGuard() {
    if (g_sweep_running.exchange(true)) {
      throw ParameterError("a timing sweep is already running in this process; "
                           "timed runs must not overlap");
    }
  }
  ~RunningGuard() { g_sweep_running.store(false); }
  RunningGuard(const RunningGuard&) = delete;
  RunningGuard& operator=(const RunningGuard&) = delete;
};

template <class F>
double time_ms(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

bool sweep_running() { return g_sweep_running.load(); }

SweepResult run_scaling_sweep(const SweepConfig& config) {
  if (config.lengths.size() < 3) throw ParameterError("bench sweep needs at least 3 lengths");
  if (config.repeats < 5) throw ParameterError("bench sweep needs at least 5 repeats");
  if (config.warmup < 0) throw ParameterError("bench warmup must be >= 0");
  if (config.methods.empty()) throw ParameterError("bench sweep needs at least one method");
  check_dims(1, config.d, config.N);
  for (std::size_t L : config.lengths) {
    if (L < 3) throw ParameterError("bench lengths must be at least 3 (one token per modality)");
  }
  const RunningGuard guard;

  const AttentionWeights attn_w = AttentionWeights::random(config.d, config.seed);
  Rng layer_rng(derive_seed(config.seed, "bench/scan"));
  const fusion::MambaLayerParams layer = fusion::init_layer(config.d, config.N, layer_rng);
  // The sweep's layer gets a non-zero output map so the block does real work
  // end to end; it is never trained.
  const double r = 1.0 / std::sqrt(static_cast<double>(config.d));
  fusion::MambaLayerParams timed_layer = layer;
  timed_layer.w_out = layer_rng.uniform_tensor({config.d, config.d}, -r, r);
  const AttentionOptions opts{config.byte_budget};

  SweepResult out;
  for (Method method : config.methods) {
    std::vector<double> xs, ys;
    for (std::size_t L : config.lengths) {
      BenchResult br;
      br.method = method;
      br.length = L;
      br.flops = flops_count(method, L, config.d, config.N);
      br.estimated_bytes = memory_model(method, L, config.d, config.N);

      Rng input_rng(derive_seed(config.seed, "bench/input/" + std::to_string(L)));
      const auto T = split_lengths(L);
      std::array<Tensor, 3> parts;
      Tensor whole;
      if (method == Method::multi_stream) {
        for (std::size_t m = 0; m < 3; ++m) parts[m] = input_rng.normal_tensor({T[m], config.d});
      } else {
        whole = input_rng.normal_tensor({L, config.d});
      }
      auto run_once = [&] {
        switch (method) {
          case Method::scan: return scan_fusion(whole, timed_layer);
          case Method::single_stream: return attention_single_stream(whole, attn_w, opts);
          case Method::multi_stream:
            return attention_multi_stream(parts[0], parts[1], parts[2], attn_w, opts);
        }
        return Tensor();
      };

      try {
        for (int i = 0; i < config.warmup; ++i) (void)run_once();
        std::vector<double> times;
        {
          const AllocationScope scope;
          times.push_back(time_ms([&] { (void)run_once(); }));
          br.measured_bytes = scope.peak_bytes();
        }
        while (static_cast<int>(times.size()) < config.repeats) {
          times.push_back(time_ms([&] { (void)run_once(); }));
        }
        br.median_ms = std::max(median(times), 1e-6);
        br.repeats = config.repeats;
        xs.push_back(static_cast<double>(L));
        ys.push_back(br.median_ms);
      } catch (const BudgetError&) {
        br.oom = true;
      }
      out.results.push_back(br);
    }
    out.slopes[method] = loglog_slope(xs, ys);
  }
  return out;
}

void write_sweep_csv(const SweepResult& result, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << "method,length,median_ms,flops,estimated_bytes\n";
  char buf[64];
  for (const BenchResult& r : result.results) {
    f << to_string(r.method) << ',' << r.length << ',';
    if (r.oom) {
      f << "oom";
    } else {
      std::snprintf(buf, sizeof buf, "%.6f", r.median_ms);
      f << buf;
    }
    f << ',' << r.flops << ',' << r.estimated_bytes << '\n';
  }
  for (const auto& [method, slope] : result.slopes) {
    std::snprintf(buf, sizeof buf, "%.6f", slope);
    f << "# slope," << to_string(method) << ',' << buf << '\n';
  }
  if (!f) throw IoError("write failed for " + path.string());
}

}  // namespace xmf::bench
