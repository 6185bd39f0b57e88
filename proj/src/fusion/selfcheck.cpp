// SPDX-License-Identifier: Apache-2.0

#include "xmf/selfcheck.hpp"

#include <functional>

#include "xmf/alignment.hpp"
#include "xmf/fusion.hpp"
#include "xmf/gradcheck.hpp"
#include "xmf/rng.hpp"

namespace xmf::fusion {
namespace {

struct Case {
  ScalarFn f;
  std::vector<Tensor> leaves;
};

using CaseMaker = std::function<Case(Rng&)>;

std::size_t between(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

// sum(y * w) with fixed random w, so every output coordinate gets a distinct
// upstream gradient.
Var weighted_sum(const Var& y, const Tensor& w) { return sum(mul(y, Var::constant(w))); }

Case mmd_case(Rng& rng) {
  const std::size_t n = between(rng, 2, 6), m = between(rng, 2, 6), d = between(rng, 1, 4);
  const auto kernel = align::KernelConfig::fixed(rng.uniform(0.5, 2.0));
  return {[kernel](std::span<const Var> v) { return align::mmd_sq(v[0], v[1], kernel); },
          {rng.normal_tensor({n, d}), rng.normal_tensor({m, d})}};
}

Case align_case(Rng& rng) {
  const std::size_t T = between(rng, 2, 5), d = between(rng, 1, 4);
  const auto kernel = align::KernelConfig::fixed(rng.uniform(0.5, 2.0));
  return {[kernel](std::span<const Var> v) { return align::align_loss(v[0], v[1], v[2], kernel); },
          {rng.normal_tensor({T, d}), rng.normal_tensor({T, d}), rng.normal_tensor({T, d})}};
}

// A layer whose every parameter is non-trivial (init_layer zeroes several).
MambaLayerParams random_layer(Rng& rng, std::size_t d, std::size_t N) {
  MambaLayerParams p = init_layer(d, N, rng);
  p.norm_gamma = rng.uniform_tensor({d}, 0.5, 1.5);
  p.norm_beta = rng.normal_tensor({d}, 0.0, 0.3);
  p.b_delta = rng.normal_tensor({d}, 0.0, 0.5);
  p.b_b = rng.normal_tensor({N}, 0.0, 0.5);
  p.b_c = rng.normal_tensor({N}, 0.0, 0.5);
  p.a_log = rng.uniform_tensor({d, N}, -1.0, 1.0);
  p.d_skip = rng.normal_tensor({d});
  p.w_out = rng.normal_tensor({d, d}, 0.0, 0.5);
  return p;
}

MambaLayerVars vars_from(std::span<const Var> v, std::size_t first) {
  MambaLayerVars p;
  visit_layer(p, [&](const char*, Var& slot) { slot = v[first++]; });
  return p;
}

std::vector<Tensor> layer_tensors(const MambaLayerParams& p) {
  std::vector<Tensor> out;
  visit_layer(p, [&](const char*, const Tensor& t) { out.push_back(t); });
  return out;
}

Case scan_case(Rng& rng) {
  const std::size_t L = between(rng, 1, 6), d = between(rng, 1, 4), N = between(rng, 1, 3);
  const MambaLayerParams layer = random_layer(rng, d, N);
  const Tensor w = rng.normal_tensor({L, d});
  Case c;
  c.leaves.push_back(rng.normal_tensor({L, d}));
  for (Tensor& t : layer_tensors(layer)) c.leaves.push_back(std::move(t));
  c.f = [w](std::span<const Var> v) { return weighted_sum(selective_scan(v[0], vars_from(v, 1)), w); };
  return c;
}

Case block_case(Rng& rng) {
  // Width 1 makes layer norm constant, so widths start at 2.
  const std::size_t L = between(rng, 1, 6), d = between(rng, 2, 4), N = between(rng, 1, 3);
  const MambaLayerParams layer = random_layer(rng, d, N);
  const Tensor w = rng.normal_tensor({L, d});
  Case c;
  c.leaves.push_back(rng.normal_tensor({L, d}));
  for (Tensor& t : layer_tensors(layer)) c.leaves.push_back(std::move(t));
  c.f = [w](std::span<const Var> v) { return weighted_sum(mamba_block(v[0], vars_from(v, 1)), w); };
  return c;
}

// The whole aligned pipeline on a small random batch: encoders, transport,
// MMD, interleave, one scan block and the head. Leaves are every model
// parameter followed by every sample's three feature sequences. The kernel
// bandwidth is fixed; a median bandwidth would move with the inputs under
// finite differences while being held constant in the backward pass.
Case composite_case(Rng& rng) {
  const std::size_t B = between(rng, 1, 3);
  FusionConfig cfg;
  cfg.model_dim = between(rng, 2, 8);
  cfg.state_dim = between(rng, 1, 4);
  cfg.num_layers = 1;
  cfg.lambda = rng.uniform(0.0, 1.0);
  cfg.task = rng.bernoulli(0.5) ? Task::binary_classification : Task::regression;
  cfg.kernel = align::KernelConfig::fixed(rng.uniform(0.5, 2.0));
  for (std::size_t& w : cfg.input_dims) w = between(rng, 2, 4);
  if (rng.bernoulli(0.5)) cfg.input_dims[data::kAudio] = cfg.input_dims[data::kLanguage];

  FusionModel model = FusionModel::init(cfg, rng.next());
  std::vector<Tensor> params = model.flat_parameters();
  for (Tensor& t : params) {
    for (double& x : t.data()) x += rng.normal(0.0, 0.3);
  }
  const ModelVars shape = model.to_vars(false);
  const std::size_t P = params.size();

  data::Dataset batch(B);
  for (data::MultimodalSample& s : batch) {
    const std::size_t T[] = {between(rng, 1, 6), between(rng, 1, 6), between(rng, 2, 6)};
    for (std::size_t m = 0; m < data::kNumModalities; ++m) {
      s.features[m] = rng.normal_tensor({T[m], cfg.input_dims[m]});
    }
    s.label = cfg.task == Task::regression ? rng.uniform(-3.0, 3.0) : double(rng.bernoulli(0.5));
    if (rng.bernoulli(0.2)) s.present[rng.index(2)] = false;
  }

  Case c;
  c.leaves = params;
  for (const auto& s : batch) {
    for (const Tensor& t : s.features) c.leaves.push_back(t);
  }
  c.f = [cfg, shape, P, batch](std::span<const Var> v) {
    ModelVars vars = shape;
    std::size_t k = 0;
    visit_params(vars, [&](const std::string&, Var& slot) { slot = v[k++]; });
    std::vector<Var> preds, aligns;
    std::vector<double> labels;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const std::size_t f0 = P + data::kNumModalities * i;
      const SampleOutput out = run_sample(vars, cfg, batch[i], {v[f0], v[f0 + 1], v[f0 + 2]});
      preds.push_back(out.prediction);
      aligns.push_back(out.align_loss);
      labels.push_back(batch[i].label);
    }
    return composite_loss(preds, labels, aligns, cfg.lambda, cfg.task);
  };
  return c;
}

}  // namespace

std::vector<SuiteReport> run_gradient_suites(std::uint64_t seed, const SuiteOptions& options) {
  const std::pair<const char*, CaseMaker> suites[] = {
      {"mmd_sq", mmd_case},           {"align_loss", align_case},
      {"selective_scan", scan_case},  {"mamba_block", block_case},
      {"composite_loss", composite_case},
  };
  GradCheckOptions gc;
  gc.eps = options.eps;
  gc.tol = options.tol;

  std::vector<SuiteReport> reports;
  for (const auto& [name, make] : suites) {
    SuiteReport r;
    r.name = name;
    for (std::size_t k = 0; k < options.configs; ++k) {
      Rng rng(derive_seed(seed, std::string("gradcheck/") + name + "/" + std::to_string(k)));
      const Case c = make(rng);
      const GradCheckReport g = grad_check(c.f, c.leaves, gc);
      ++r.configs;
      if (!g.passed) ++r.failures;
      if (g.max_rel_error >= r.max_rel_error) {
        r.max_rel_error = g.max_rel_error;
        r.worst = "config " + std::to_string(k) + ": " + g.summary();
      }
    }
    reports.push_back(std::move(r));
  }
  return reports;
}

}  // namespace xmf::fusion
