// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <string>

#include "xmf/errors.hpp"
#include "xmf/fusion.hpp"
#include "xmf/rng.hpp"

namespace xmf::fusion {

using data::kAudio;
using data::kLanguage;
using data::kNumModalities;
using data::kVideo;

const char* to_string(Task t) {
  return t == Task::regression ? "regression" : "binary_classification";
}

const char* to_string(FusionMode f) {
  switch (f) {
    case FusionMode::aligned: return "aligned";
    case FusionMode::single_stream: return "single_stream_mamba";
    case FusionMode::multi_stream: return "multi_stream_mamba";
  }
  return "?";
}

std::optional<Task> parse_task(std::string_view s) {
  if (s == "binary_classification" || s == "classification") return Task::binary_classification;
  if (s == "regression") return Task::regression;
  return std::nullopt;
}

std::optional<FusionMode> parse_fusion_mode(std::string_view s) {
  if (s == "aligned") return FusionMode::aligned;
  if (s == "single_stream_mamba" || s == "single_stream") return FusionMode::single_stream;
  if (s == "multi_stream_mamba" || s == "multi_stream") return FusionMode::multi_stream;
  return std::nullopt;
}

void FusionConfig::validate() const {
  if (model_dim == 0 || state_dim == 0 || num_layers == 0) {
    throw ParameterError("fusion config: model_dim, state_dim and num_layers must be >= 1");
  }
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    if (input_dims[m] == 0) {
      throw ParameterError(std::string("fusion config: ") + data::kModalityNames[m] +
                           " input width must be >= 1");
    }
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ParameterError("fusion config: lambda must be finite and >= 0, got " +
                         std::to_string(lambda));
  }
  if (kernel.sigma && !(*kernel.sigma > 0.0)) {
    throw ParameterError("fusion config: kernel sigma must be > 0");
  }
}

bool FusionConfig::operator==(const FusionConfig& o) const {
  return input_dims == o.input_dims && model_dim == o.model_dim && state_dim == o.state_dim &&
         num_layers == o.num_layers && lambda == o.lambda && task == o.task &&
         scan_order == o.scan_order && fusion == o.fusion &&
         local_alignment == o.local_alignment && plan_mode == o.plan_mode &&
         kernel.sigma == o.kernel.sigma;
}

// --- parameters ------------------------------------------------------------------

MambaLayerParams init_layer(std::size_t d, std::size_t n, Rng& rng) {
  const double r = 1.0 / std::sqrt(static_cast<double>(d));
  MambaLayerParams p;
  p.norm_gamma = Tensor({d}, 1.0);
  p.norm_beta = Tensor({d});
  p.w_delta = rng.uniform_tensor({d, d}, -r, r);
  p.b_delta = Tensor({d});
  p.w_b = rng.uniform_tensor({d, n}, -r, r);
  p.b_b = Tensor({n});
  p.w_c = rng.uniform_tensor({d, n}, -r, r);
  p.b_c = Tensor({n});
  p.a_log = Tensor({d, n});
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t k = 0; k < n; ++k) p.a_log(c, k) = std::log(static_cast<double>(k + 1));
  }
  p.d_skip = Tensor({d}, 1.0);
  p.w_gate = rng.uniform_tensor({d, d}, -r, r);
  p.w_out = Tensor({d, d});
  return p;
}

MambaLayerVars layer_vars(const MambaLayerParams& p, bool requires_grad) {
  MambaLayerVars v;
  // Walk both structs in lockstep through their shared declaration order.
  std::vector<const Tensor*> tensors;
  visit_layer(p, [&](const char*, const Tensor& t) { tensors.push_back(&t); });
  std::size_t i = 0;
  visit_layer(v, [&](const char*, Var& var) { var = Var::leaf(*tensors[i++], requires_grad); });
  return v;
}

Tensor state_matrix(const MambaLayerParams& p) {
  Tensor a = p.a_log;
  for (double& v : a.data()) v = -std::exp(v);
  return a;
}

FusionModel FusionModel::init(const FusionConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t d = config.model_dim;
  Rng rng(derive_seed(seed, "fusion/init"));
  FusionModel model;
  model.config = config;
  auto& p = model.params;
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    Tensor w({config.input_dims[m], d});
    for (std::size_t i = 0; i < std::min(config.input_dims[m], d); ++i) w(i, i) = 1.0;
    p.encoders[m].weight = std::move(w);
    p.encoders[m].bias = Tensor({d});
    p.missing_tokens[m] = Tensor({1, d});
  }
  const std::size_t n_stacks = config.fusion == FusionMode::multi_stream ? kNumModalities : 1;
  p.stacks.resize(n_stacks);
  for (auto& stack : p.stacks) {
    for (std::size_t l = 0; l < config.num_layers; ++l) {
      stack.push_back(init_layer(d, config.state_dim, rng));
    }
  }
  const std::size_t head_in = n_stacks * d;
  const double r = 1.0 / std::sqrt(static_cast<double>(head_in));
  p.head_w = rng.uniform_tensor({head_in, 1}, -r, r);
  p.head_b = Tensor({1});
  return model;
}

std::size_t FusionModel::parameter_count() const {
  std::size_t n = 0;
  visit_params(params, [&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

std::vector<std::string> FusionModel::parameter_names() const {
  std::vector<std::string> names;
  visit_params(params, [&](const std::string& name, const Tensor&) { names.push_back(name); });
  return names;
}

std::vector<Tensor> FusionModel::flat_parameters() const {
  std::vector<Tensor> out;
  visit_params(params, [&](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

void FusionModel::set_flat_parameters(std::span<const Tensor> values) {
  std::size_t i = 0;
  visit_params(params, [&](const std::string& name, Tensor& t) {
    if (i >= values.size()) throw DimensionError("set_flat_parameters: too few tensors");
    if (values[i].shape() != t.shape()) {
      throw DimensionError("set_flat_parameters: " + name + " expects " + shape_str(t.shape()) +
                           ", got " + shape_str(values[i].shape()));
    }
    t = values[i++];
  });
  if (i != values.size()) throw DimensionError("set_flat_parameters: too many tensors");
}

ModelVars FusionModel::to_vars(bool requires_grad) const {
  ModelVars v;
  v.stacks.resize(params.stacks.size());
  for (std::size_t s = 0; s < params.stacks.size(); ++s) v.stacks[s].resize(params.stacks[s].size());
  const std::vector<Tensor> flat = flat_parameters();
  std::size_t i = 0;
  visit_params(v, [&](const std::string&, Var& var) {
    var = Var::leaf(flat[i++], requires_grad);
  });
  return v;
}

// --- forward ---------------------------------------------------------------------

namespace {

Var run_stack(const std::vector<MambaLayerVars>& stack, Var x) {
  for (const MambaLayerVars& layer : stack) x = mamba_block(x, layer);
  return x;
}

Var head(const ModelVars& model, const Var& pooled) {
  return add(matmul(pooled, model.head_w), model.head_b);
}

Var encode(const ModelVars& model, std::size_t m, const Var& raw) {
  return add_row_vector(matmul(raw, model.encoders[m].weight),
                        model.encoders[m].bias);
}

std::size_t anchor_length(const data::MultimodalSample& s) {
  if (s.features[kLanguage].rows() > 0) return s.features[kLanguage].rows();
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    if (s.present[m] && s.features[m].rows() > 0) return s.features[m].rows();
  }
  throw DimensionError("sample has no frames in any modality");
}

}  // namespace

ForwardResult forward(const ModelVars& model, const FusionConfig& config, const Var& xa_aligned,
                      const Var& xv_aligned, const Var& xl) {
  (void)config;
  if (model.stacks.empty()) throw DimensionError("forward: model has no layer stack");
  const Var hidden = run_stack(model.stacks[0], interleave(xa_aligned, xv_aligned, xl));
  return {head(model, mean_rows(hidden)), hidden};
}

SampleOutput run_sample(const ModelVars& model, const FusionConfig& config,
                        const data::MultimodalSample& sample) {
  std::array<Var, kNumModalities> features;
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    features[m] = Var::constant(sample.features[m]);
  }
  return run_sample(model, config, sample, features);
}

SampleOutput run_sample(const ModelVars& model, const FusionConfig& config,
                        const data::MultimodalSample& sample,
                        const std::array<Var, kNumModalities>& features) {
  sample.validate();
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    if (features[m].shape() != sample.features[m].shape()) {
      throw DimensionError(std::string(data::kModalityNames[m]) +
                           " feature variable does not match the sample shape");
    }
  }
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    if (sample.present[m] && sample.features[m].cols() != config.input_dims[m]) {
      throw DimensionError(std::string(data::kModalityNames[m]) + " features have width " +
                           std::to_string(sample.features[m].cols()) + ", model expects " +
                           std::to_string(config.input_dims[m]));
    }
  }

  SampleOutput out;
  out.align_loss = Var::constant(Tensor::scalar(0.0));
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    if (sample.present[m]) out.encoded[m] = encode(model, m, features[m]);
  }
  auto missing = [&](std::size_t m, std::size_t len) {
    return repeat_row(model.missing_tokens[m], len);
  };

  switch (config.fusion) {
    case FusionMode::aligned: {
      const std::size_t T = anchor_length(sample);
      const bool anchor = sample.present[kLanguage];
      out.aligned[kLanguage] = anchor ? out.encoded[kLanguage] : missing(kLanguage, T);
      Var align_sum;
      for (std::size_t m : {kAudio, kVideo}) {
        if (!sample.present[m]) {
          out.aligned[m] = missing(m, T);
          continue;
        }
        if (anchor && config.local_alignment) {
          // The cost is taken on the unimodal features themselves when their
          // widths agree; the trainable projections would otherwise drift the
          // plan away from the true correspondences during training.
          const bool raw = sample.features[m].cols() == sample.features[kLanguage].cols();
          const align::CostMatrix cost =
              raw ? align::cosine_cost(features[m].value(), features[kLanguage].value())
                  : align::cosine_cost(out.encoded[m].value(), out.encoded[kLanguage].value());
          align::TransportPlan plan = align::relaxed_ot_plan(cost);
          out.aligned[m] = align::apply_plan(plan, out.encoded[m], config.plan_mode);
          out.plans[m] = std::move(plan);
        } else {
          out.aligned[m] = align::truncate_or_pad(out.encoded[m], T);
        }
        if (anchor) {
          const Var term = align::mmd_sq(out.aligned[m], out.encoded[kLanguage], config.kernel);
          align_sum = align_sum.defined() ? add(align_sum, term) : term;
        }
      }
      if (align_sum.defined()) out.align_loss = align_sum;
      out.prediction =
          forward(model, config, out.aligned[kAudio], out.aligned[kVideo], out.aligned[kLanguage])
              .prediction;
      break;
    }
    case FusionMode::single_stream: {
      std::array<Var, kNumModalities> parts;
      for (std::size_t m = 0; m < kNumModalities; ++m) {
        const std::size_t len = std::max<std::size_t>(sample.features[m].rows(), 1);
        parts[m] = sample.present[m] ? out.encoded[m] : missing(m, len);
        out.aligned[m] = parts[m];
      }
      const Var hidden = run_stack(model.stacks.at(0), concat_rows(parts));
      out.prediction = head(model, mean_rows(hidden));
      break;
    }
    case FusionMode::multi_stream: {
      if (model.stacks.size() != kNumModalities) {
        throw DimensionError("multi-stream fusion needs one layer stack per modality");
      }
      std::array<Var, kNumModalities> pooled;
      for (std::size_t m = 0; m < kNumModalities; ++m) {
        const std::size_t len = std::max<std::size_t>(sample.features[m].rows(), 1);
        out.aligned[m] = sample.present[m] ? out.encoded[m] : missing(m, len);
        pooled[m] = mean_rows(run_stack(model.stacks[m], out.aligned[m]));
      }
      out.prediction = head(model, concat_cols(pooled));
      break;
    }
  }
  return out;
}

// --- losses ----------------------------------------------------------------------

Var task_loss(const Var& prediction, double label, Task task) {
  if (task == Task::binary_classification) {
    // BCE with logits: softplus(z) - y z.
    const double y = data::binarize_label(label) ? 1.0 : 0.0;
    return sub(softplus(prediction), scale(prediction, y));
  }
  return square(sub(prediction, Var::constant(Tensor::scalar(label))));
}

namespace {

Var batch_mean(std::span<const Var> terms) {
  Var acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return scale(acc, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

Var composite_loss(std::span<const Var> predictions, std::span<const double> labels,
                   std::span<const Var> align_losses, double lambda, Task task) {
  if (!(lambda >= 0.0)) {
    throw ParameterError("composite_loss: lambda must be >= 0, got " + std::to_string(lambda));
  }
  if (predictions.empty() || predictions.size() != labels.size() ||
      predictions.size() != align_losses.size()) {
    throw DimensionError("composite_loss: need equally many predictions (" +
                         std::to_string(predictions.size()) + "), labels (" +
                         std::to_string(labels.size()) + ") and alignment terms (" +
                         std::to_string(align_losses.size()) + ")");
  }
  std::vector<Var> task_terms;
  task_terms.reserve(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    task_terms.push_back(task_loss(predictions[i], labels[i], task));
  }
  const Var l_task = batch_mean(task_terms);
  if (lambda == 0.0) return l_task;
  return add(l_task, scale(batch_mean(align_losses), lambda));
}

Var composite_loss(const Var& prediction, double label, const Var& align_loss, double lambda,
                   Task task) {
  return composite_loss(std::span<const Var>(&prediction, 1), std::span<const double>(&label, 1),
                        std::span<const Var>(&align_loss, 1), lambda, task);
}

std::vector<double> predict(const FusionModel& model, const data::Dataset& ds) {
  const ModelVars vars = model.to_vars(false);
  std::vector<double> out;
  out.reserve(ds.size());
  for (const data::MultimodalSample& s : ds) {
    out.push_back(run_sample(vars, model.config, s).prediction.value()[0]);
  }
  return out;
}

}  // namespace xmf::fusion
