// SPDX-License-Identifier: Apache-2.0
//
// Task metrics, the proxy A-distance between two feature sets, transport
// plan export for heatmaps and the missing-rate evaluation protocol.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "xmf/alignment.hpp"
#include "xmf/data.hpp"
#include "xmf/fusion.hpp"
#include "xmf/tensor.hpp"

namespace xmf::metrics {

/// Predictions are logits (or scores) thresholded at 0; labels are
/// binarised with label > 0.
struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
};

Confusion confusion(std::span<const double> predictions, std::span<const double> labels);
double binary_accuracy(std::span<const double> predictions, std::span<const double> labels);
/// Positive-class F1; 0 when precision + recall = 0.
double f1_binary(std::span<const double> predictions, std::span<const double> labels);

struct ADistanceOptions {
  int steps = 500;
  double lr = 0.1;
};

/// Proxy A-distance 2 (1 - 2 eps), clamped to [0, 2], where eps is the test
/// error of a logistic probe separating rows of x1 (class 0) from rows of
/// x2 (class 1). Each set is shuffled and split 50/50; features are
/// standardised with train-half statistics; the probe starts at zero and
/// takes `steps` full-batch gradient steps. Throws ParameterError when either
/// set has fewer than 10 rows.
double a_distance(const Tensor& x1, const Tensor& x2, std::uint64_t seed,
                  const ADistanceOptions& options = {});

/// Token features pooled over a dataset (rows stacked across samples).
/// `input` rows live in each modality's own feature space; `encoded` and
/// `aligned` rows share the model width, so only those two are comparable
/// with each other.
struct FeatureSets {
  std::array<Tensor, data::kNumModalities> input;    // features as stored in the dataset
  std::array<Tensor, data::kNumModalities> encoded;  // encoder outputs, before transport
  std::array<Tensor, data::kNumModalities> aligned;  // sequences entering the backbone
};

/// Runs the trained pipeline forward on every sample with all modalities
/// present and collects the token rows at the three stages.
FeatureSets collect_features(const fusion::FusionModel& model, const data::Dataset& ds);

// --- transport plan export --------------------------------------------------------
//
// CSV: first row "source,<anchor labels...>", then one row per source token
// "<label>,<mass>..." with masses printed by %.17g. The JSON sidecar (same
// stem, .json) holds {"source_labels", "anchor_labels", "selected", "mass"}.

void export_transport_plan(const align::TransportPlan& plan,
                           const std::vector<std::string>& source_labels,
                           const std::vector<std::string>& anchor_labels,
                           const std::filesystem::path& csv_path);

struct PlanTable {
  std::vector<std::string> source_labels;
  std::vector<std::string> anchor_labels;
  Tensor mass;  // [sources x anchors]
};

PlanTable read_plan_csv(const std::filesystem::path& csv_path);

// --- evaluation -------------------------------------------------------------------

struct RatePoint {
  double rate = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
};

struct EvalReport {
  double accuracy = 0.0;
  double f1 = 0.0;
  std::vector<RatePoint> by_rate;
  /// accuracy at the lowest rate minus accuracy at the highest rate.
  double delta = 0.0;
};

EvalReport evaluate(const fusion::FusionModel& model, const data::Dataset& ds);

/// Each rate masks the dataset with apply_missing(ds, rate, seed) and
/// evaluates. The top-level accuracy/F1 are those at the lowest rate.
EvalReport evaluate_missing_rates(const fusion::FusionModel& model, const data::Dataset& ds,
                                  std::span<const double> rates, std::uint64_t seed);

/// Fraction of the more frequent class.
double majority_baseline(const data::Dataset& ds);

}  // namespace xmf::metrics
