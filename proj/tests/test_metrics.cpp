// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "xmf/errors.hpp"
#include "xmf/metrics.hpp"
#include "xmf/rng.hpp"

namespace xmf::metrics {
namespace {

namespace fs = std::filesystem;

TEST(Accuracy, Examples) {
  const std::vector<double> labels{1, 0, 1, 0};
  EXPECT_EQ(binary_accuracy(std::vector<double>{2, -1, 0.5, -3}, labels), 1.0);
  EXPECT_EQ(binary_accuracy(std::vector<double>{1, -1, -1, -1}, labels), 0.75);
  EXPECT_THROW(binary_accuracy(std::vector<double>{}, std::vector<double>{}), ParameterError);
  EXPECT_THROW(binary_accuracy(std::vector<double>{1}, labels), ParameterError);
}

TEST(F1, Examples) {
  EXPECT_EQ(f1_binary(std::vector<double>{1, 1, -1}, std::vector<double>{1, 1, 0}), 1.0);
  EXPECT_EQ(f1_binary(std::vector<double>{1, -1, 1, -1}, std::vector<double>{1, 1, 0, 0}), 0.5);
  EXPECT_EQ(f1_binary(std::vector<double>{-1, -1}, std::vector<double>{0, -2}), 0.0);
  EXPECT_THROW(f1_binary(std::vector<double>{}, std::vector<double>{}), ParameterError);
}

TEST(Metrics, MatchConfusionOracle) {
  Rng rng(3);
  for (int k = 0; k < 100; ++k) {
    const std::size_t n = 1 + rng.index(40);
    std::vector<double> p(n), y(n);
    int tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng.normal();
      y[i] = rng.uniform(-3, 3);
      const bool pp = p[i] > 0, yy = y[i] > 0;
      tp += pp && yy;
      fp += pp && !yy;
      tn += !pp && !yy;
      fn += !pp && yy;
    }
    EXPECT_DOUBLE_EQ(binary_accuracy(p, y), double(tp + tn) / double(n));
    const double f1 = tp == 0 ? 0.0 : 2.0 * tp / double(2 * tp + fp + fn);
    EXPECT_NEAR(f1_binary(p, y), f1, 1e-15);
  }
}

TEST(ADistance, SameDistributionNearZero) {
  Rng rng(1);
  const Tensor x1 = rng.normal_tensor({500, 8}), x2 = rng.normal_tensor({500, 8});
  EXPECT_LE(a_distance(x1, x2, 7), 0.3);
}

TEST(ADistance, OffsetSeparable) {
  Rng rng(2);
  const Tensor x1 = rng.normal_tensor({500, 8});
  Tensor x2 = x1;
  for (double& v : x2.data()) v += 10.0;
  EXPECT_GE(a_distance(x1, x2, 7), 1.8);
}

TEST(ADistance, RangeSymmetryAndErrors) {
  double asym = 0.0;
  for (int s = 0; s < 5; ++s) {
    Rng rng(derive_seed(s, "adist/sym"));
    const Tensor x1 = rng.normal_tensor({200, 4});
    const Tensor x2 = rng.normal_tensor({150, 4}, 0.4, 1.2);
    const double ab = a_distance(x1, x2, s), ba = a_distance(x2, x1, s);
    for (double v : {ab, ba}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 2.0);
    }
    EXPECT_EQ(ab, ba);
    asym += std::abs(ab - ba);
  }
  EXPECT_LE(asym / 5.0, 0.1);
  EXPECT_THROW(a_distance(Tensor::matrix(9, 2), Tensor::matrix(20, 2), 1), ParameterError);
  EXPECT_THROW(a_distance(Tensor::matrix(20, 2), Tensor::matrix(20, 3), 1), DimensionError);
}

fs::path temp_dir() {
  const fs::path d = fs::temp_directory_path() / "xmf_test_metrics";
  fs::create_directories(d);
  return d;
}

// Independent CSV reader for the heatmap file.
std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

TEST(PlanExport, WorkedExampleRowSums) {
  const align::TransportPlan plan({0, 1, 0}, 2);
  const fs::path csv = temp_dir() / "worked.csv";
  export_transport_plan(plan, {"s0", "s1", "s2"}, {"l0", "l1"}, csv);
  const auto rows = read_csv(csv);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"source", "l0", "l1"}));
  for (std::size_t i = 1; i < 4; ++i) {
    double sum = 0.0;
    for (std::size_t j = 1; j < rows[i].size(); ++j) sum += std::stod(rows[i][j]);
    EXPECT_EQ(sum, 1.0 / 3.0);
  }
  std::ifstream js(temp_dir() / "worked.json");
  const nlohmann::json j = nlohmann::json::parse(js);
  EXPECT_EQ(j["selected"], nlohmann::json::array({0, 1, 0}));
}

TEST(PlanExport, IdentityIsDiagonalAndRoundTrips) {
  const align::TransportPlan plan = align::TransportPlan::identity(4);
  const fs::path csv = temp_dir() / "identity.csv";
  export_transport_plan(plan, {"a", "b", "c", "d"}, {"w", "x", "y", "z"}, csv);
  const PlanTable t = read_plan_csv(csv);
  EXPECT_EQ(t.mass, plan.dense());
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(t.mass(i, j) != 0.0, i == j);
  }
  EXPECT_EQ(t.anchor_labels[2], "y");
}

TEST(PlanExport, LabelMismatchAndUnwritable) {
  const align::TransportPlan plan = align::TransportPlan::identity(2);
  EXPECT_THROW(export_transport_plan(plan, {"a"}, {"x", "y"}, temp_dir() / "bad.csv"),
               DimensionError);
  EXPECT_THROW(export_transport_plan(plan, {"a", "b"}, {"x", "y"},
                                     "/nonexistent_dir_for_test/p.csv"),
               IoError);
}

data::Dataset small_data(std::size_t n) {
  data::SynthConfig c;
  c.num_samples = n;
  c.seed = 5;
  return data::synth_generate(c);
}

TEST(Eval, RateZeroEqualsCompleteEvaluation) {
  const data::Dataset ds = small_data(40);
  const fusion::FusionModel m = fusion::FusionModel::init(fusion::FusionConfig{}, 3);
  const EvalReport full = evaluate(m, ds);
  const std::vector<double> rates{0.0};
  const EvalReport r = evaluate_missing_rates(m, ds, rates, 1);
  EXPECT_EQ(r.accuracy, full.accuracy);
  EXPECT_EQ(r.f1, full.f1);
  EXPECT_EQ(r.delta, 0.0);
}

TEST(Eval, DeltaDefinition) {
  const data::Dataset ds = small_data(60);
  fusion::FusionModel m = fusion::FusionModel::init(fusion::FusionConfig{}, 3);
  Rng rng(4);
  auto p = m.flat_parameters();
  for (auto& t : p) {
    for (double& v : t.data()) v += rng.normal(0.0, 0.3);
  }
  m.set_flat_parameters(p);
  const std::vector<double> rates{0.7, 0.1, 0.4};
  const EvalReport r = evaluate_missing_rates(m, ds, rates, 9);
  ASSERT_EQ(r.by_rate.size(), 3u);
  double lo = 0, hi = 0;
  for (const RatePoint& q : r.by_rate) {
    EXPECT_GE(q.accuracy, 0.0);
    EXPECT_LE(q.accuracy, 1.0);
    if (q.rate == 0.1) lo = q.accuracy;
    if (q.rate == 0.7) hi = q.accuracy;
  }
  EXPECT_EQ(r.delta, lo - hi);
  EXPECT_EQ(r.accuracy, lo);
}

TEST(Eval, MajorityBaseline) {
  data::Dataset ds(4);
  for (auto& s : ds) {
    for (auto& f : s.features) f = Tensor::matrix(1, 1, 1.0);
  }
  ds[0].label = 1;
  ds[1].label = -1;
  ds[2].label = -2;
  ds[3].label = 0;
  EXPECT_EQ(majority_baseline(ds), 0.75);
}

TEST(CollectFeatures, Shapes) {
  const data::Dataset ds = small_data(5);
  const fusion::FusionModel m = fusion::FusionModel::init(fusion::FusionConfig{}, 1);
  const FeatureSets fs = collect_features(m, ds);
  EXPECT_EQ(fs.input[data::kAudio].shape(), (Shape{5 * 16, 8}));
  EXPECT_EQ(fs.encoded[data::kVideo].shape(), (Shape{5 * 12, 16}));
  EXPECT_EQ(fs.aligned[data::kAudio].shape(), (Shape{5 * 8, 16}));
  EXPECT_EQ(fs.aligned[data::kLanguage], fs.encoded[data::kLanguage]);
}

}  // namespace
}  // namespace xmf::metrics
