// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <string>

#include "xmf/errors.hpp"
#include "xmf/fusion.hpp"
#include "xmf/rng.hpp"

namespace xmf::fusion {
namespace {

// Logits and sentiment scores are both read by their sign.
bool correct(double prediction, double label) {
  return (prediction > 0.0) == data::binarize_label(label);
}

data::MultimodalSample drop_modalities(const data::MultimodalSample& s, Rng& rng, double p) {
  const data::DropDraw draw = data::draw_drop(rng, p, s.present);
  data::MultimodalSample out = s;
  for (std::size_t m = 0; m < data::kNumModalities; ++m) {
    if (s.present[m] && !draw.kept[m]) {
      out.present[m] = false;
      std::fill(out.features[m].data().begin(), out.features[m].data().end(), 0.0);
    }
  }
  return out;
}

}  // namespace

TrainResult train(FusionModel model, const data::Dataset& ds, const TrainConfig& cfg) {
  model.config.validate();
  if (ds.empty()) throw ParameterError("train: dataset is empty");
  if (cfg.epochs <= 0) throw ParameterError("train: epochs must be positive");
  if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) throw ParameterError("train: lr must be positive");
  if (cfg.batch_size == 0) throw ParameterError("train: batch_size must be positive");
  if (!(cfg.train_missing_rate >= 0.0 && cfg.train_missing_rate <= 1.0)) {
    throw ParameterError("train: train_missing_rate must lie in [0, 1]");
  }

  const FusionConfig& fc = model.config;
  Rng shuffle_rng(derive_seed(cfg.seed, "train/shuffle"));
  Rng drop_rng(derive_seed(cfg.seed, "train/missing"));
  TrainResult result;

  int step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::vector<std::size_t> order = shuffle_rng.permutation(ds.size());
    double task_sum = 0.0, align_sum = 0.0;
    std::size_t hits = 0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      ++step;
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const ModelVars vars = model.to_vars(true);

      std::vector<Var> preds, aligns;
      std::vector<double> labels;
      for (std::size_t k = start; k < end; ++k) {
        const data::MultimodalSample& raw = ds[order[k]];
        SampleOutput so = cfg.train_missing_rate > 0.0
                              ? run_sample(vars, fc, drop_modalities(raw, drop_rng,
                                                                     cfg.train_missing_rate))
                              : run_sample(vars, fc, raw);
        const double pv = so.prediction.value()[0];
        task_sum += task_loss(Var::constant(so.prediction.value()), raw.label, fc.task).value()[0];
        align_sum += so.align_loss.value()[0];
        hits += correct(pv, raw.label);
        preds.push_back(std::move(so.prediction));
        aligns.push_back(std::move(so.align_loss));
        labels.push_back(raw.label);
      }

      const Var loss = composite_loss(preds, labels, aligns, fc.lambda, fc.task);
      if (!std::isfinite(loss.value()[0])) {
        throw TrainingError("training diverged: loss is " + std::to_string(loss.value()[0]) +
                                " at epoch " + std::to_string(epoch) + ", step " +
                                std::to_string(step),
                            epoch, step);
      }
      backward(loss);

      std::vector<Tensor> grads;
      visit_params(vars, [&](const std::string& name, const Var& v) {
        Tensor g = v.grad();
        if (!g.all_finite()) {
          throw TrainingError("training diverged: non-finite gradient for " + name + " at epoch " +
                                  std::to_string(epoch) + ", step " + std::to_string(step),
                              epoch, step);
        }
        grads.push_back(std::move(g));
      });
      std::size_t i = 0;
      visit_params(model.params, [&](const std::string&, Tensor& t) {
        auto w = t.data();
        const auto g = grads[i++].data();
        for (std::size_t j = 0; j < w.size(); ++j) w[j] -= cfg.lr * g[j];
      });
    }

    const double n = static_cast<double>(ds.size());
    EpochLog log{epoch, task_sum / n, align_sum / n, static_cast<double>(hits) / n};
    result.log.push_back(log);
    if (cfg.on_epoch) cfg.on_epoch(log);
  }
  result.model = std::move(model);
  return result;
}

}  // namespace xmf::fusion
