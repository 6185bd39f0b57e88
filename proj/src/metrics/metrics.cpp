// SPDX-License-Identifier: Apache-2.0

#include "xmf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "xmf/errors.hpp"
#include "xmf/rng.hpp"

namespace xmf::metrics {

Confusion confusion(std::span<const double> predictions, std::span<const double> labels) {
  if (predictions.empty() || predictions.size() != labels.size()) {
    throw ParameterError("metrics need equally many predictions (" +
                         std::to_string(predictions.size()) + ") and labels (" +
                         std::to_string(labels.size()) + "), at least one");
  }
  Confusion c;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const bool p = predictions[i] > 0.0;
    const bool y = data::binarize_label(labels[i]);
    if (p && y) ++c.tp;
    else if (p) ++c.fp;
    else if (y) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double binary_accuracy(std::span<const double> predictions, std::span<const double> labels) {
  const Confusion c = confusion(predictions, labels);
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

double f1_binary(std::span<const double> predictions, std::span<const double> labels) {
  const Confusion c = confusion(predictions, labels);
  // 2PR / (P + R) reduces to 2tp / (2tp + fp + fn); zero when tp = 0.
  if (c.tp == 0) return 0.0;
  return 2.0 * c.tp / (2.0 * c.tp + c.fp + c.fn);
}

// --- A-distance --------------------------------------------------------------------

double a_distance(const Tensor& x1, const Tensor& x2, std::uint64_t seed,
                  const ADistanceOptions& options) {
  if (x1.rank() != 2 || x2.rank() != 2 || x1.rows() < 10 || x2.rows() < 10) {
    throw ParameterError("a_distance needs at least 10 rows per set");
  }
  if (x1.cols() != x2.cols()) {
    throw DimensionError("a_distance: feature widths differ (" + std::to_string(x1.cols()) +
                         " vs " + std::to_string(x2.cols()) + ")");
  }
  if (options.steps <= 0 || !(options.lr > 0.0)) {
    throw ParameterError("a_distance: steps and lr must be positive");
  }
  const std::size_t d = x1.cols();
  auto row = [&](std::size_t i) { return i < x1.rows() ? x1.row(i) : x2.row(i - x1.rows()); };
  auto label = [&](std::size_t i) { return i < x1.rows() ? 0.0 : 1.0; };

  // Each set is halved on its own, with a permutation that depends only on
  // the seed and the set's size, so swapping the arguments reuses the same
  // split and only mirrors the labels.
  std::vector<std::size_t> train, test;
  auto split = [&](std::size_t rows, std::size_t offset) {
    Rng rng(derive_seed(seed, "a_distance/split/" + std::to_string(rows)));
    const std::vector<std::size_t> perm = rng.permutation(rows);
    for (std::size_t k = 0; k < rows; ++k) (k < rows / 2 ? train : test).push_back(offset + perm[k]);
  };
  split(x1.rows(), 0);
  split(x2.rows(), x1.rows());
  const std::size_t n_train = train.size();

  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (std::size_t i : train)
    for (std::size_t c = 0; c < d; ++c) mu[c] += row(i)[c];
  for (double& v : mu) v /= static_cast<double>(n_train);
  for (std::size_t i : train)
    for (std::size_t c = 0; c < d; ++c) sd[c] += (row(i)[c] - mu[c]) * (row(i)[c] - mu[c]);
  for (double& v : sd) v = std::sqrt(v / static_cast<double>(n_train));
  for (double& v : sd) v = v > 1e-12 ? v : 1.0;
  auto feature = [&](std::size_t i, std::size_t c) { return (row(i)[c] - mu[c]) / sd[c]; };

  std::vector<double> w(d, 0.0), gw(d);
  double b = 0.0;
  for (int step = 0; step < options.steps; ++step) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0.0;
    for (std::size_t i : train) {
      double z = b;
      for (std::size_t c = 0; c < d; ++c) z += w[c] * feature(i, c);
      const double err = 1.0 / (1.0 + std::exp(-z)) - label(i);
      for (std::size_t c = 0; c < d; ++c) gw[c] += err * feature(i, c);
      gb += err;
    }
    const double scale = options.lr / static_cast<double>(n_train);
    for (std::size_t c = 0; c < d; ++c) w[c] -= scale * gw[c];
    b -= scale * gb;
  }

  std::size_t wrong = 0;
  for (std::size_t i : test) {
    double z = b;
    for (std::size_t c = 0; c < d; ++c) z += w[c] * feature(i, c);
    wrong += (z > 0.0) != (label(i) > 0.5);
  }
  const double eps = static_cast<double>(wrong) / static_cast<double>(test.size());
  return std::clamp(2.0 * (1.0 - 2.0 * eps), 0.0, 2.0);
}

FeatureSets collect_features(const fusion::FusionModel& model, const data::Dataset& ds) {
  const fusion::ModelVars vars = model.to_vars(false);
  constexpr std::size_t M = data::kNumModalities;
  std::array<std::array<std::vector<double>, M>, 3> rows;
  std::array<std::array<std::size_t, M>, 3> width{};
  auto append = [&](std::size_t stage, std::size_t m, const Tensor& t) {
    const auto d = t.data();
    rows[stage][m].insert(rows[stage][m].end(), d.begin(), d.end());
    width[stage][m] = t.cols();
  };
  for (const data::MultimodalSample& s : ds) {
    data::MultimodalSample full = s;
    full.present = {true, true, true};
    const fusion::SampleOutput out = fusion::run_sample(vars, model.config, full);
    for (std::size_t m = 0; m < M; ++m) {
      append(0, m, s.features[m]);
      append(1, m, out.encoded[m].value());
      append(2, m, out.aligned[m].value());
    }
  }
  FeatureSets fs;
  std::array<std::array<Tensor, M>*, 3> dst{&fs.input, &fs.encoded, &fs.aligned};
  for (std::size_t stage = 0; stage < 3; ++stage) {
    for (std::size_t m = 0; m < M; ++m) {
      const std::size_t w = width[stage][m];
      const std::size_t n = rows[stage][m].size() / std::max<std::size_t>(w, 1);
      (*dst[stage])[m] = Tensor({n, w}, std::move(rows[stage][m]));
    }
  }
  return fs;
}

// --- plan export -------------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_label(const std::string& s) {
  if (s.find_first_of(",\n\r\"") != std::string::npos) {
    throw ParameterError("plan label \"" + s + "\" contains a CSV delimiter or quote");
  }
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void export_transport_plan(const align::TransportPlan& plan,
                           const std::vector<std::string>& source_labels,
                           const std::vector<std::string>& anchor_labels,
                           const std::filesystem::path& csv_path) {
  if (source_labels.size() != plan.source_count() ||
      anchor_labels.size() != plan.anchor_count()) {
    throw DimensionError("plan is " + std::to_string(plan.source_count()) + " x " +
                         std::to_string(plan.anchor_count()) + " but got " +
                         std::to_string(source_labels.size()) + " source and " +
                         std::to_string(anchor_labels.size()) + " anchor labels");
  }
  for (const auto& s : source_labels) check_label(s);
  for (const auto& s : anchor_labels) check_label(s);

  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw IoError("cannot open " + csv_path.string() + " for writing");
  csv << "source";
  for (const auto& a : anchor_labels) csv << ',' << a;
  csv << '\n';
  for (std::size_t i = 0; i < plan.source_count(); ++i) {
    csv << source_labels[i];
    for (std::size_t j = 0; j < plan.anchor_count(); ++j) csv << ',' << fmt_double(plan(i, j));
    csv << '\n';
  }
  if (!csv) throw IoError("write failed for " + csv_path.string());

  std::filesystem::path json_path = csv_path;
  json_path.replace_extension(".json");
  nlohmann::json j;
  j["source_labels"] = source_labels;
  j["anchor_labels"] = anchor_labels;
  j["selected"] = plan.selected();
  j["mass"] = plan.mass();
  std::ofstream js(json_path, std::ios::trunc);
  if (!js) throw IoError("cannot open " + json_path.string() + " for writing");
  js << j.dump(2) << '\n';
  if (!js) throw IoError("write failed for " + json_path.string());
}

PlanTable read_plan_csv(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open " + csv_path.string() + " for reading");
  std::string line;
  if (!std::getline(in, line)) throw FormatError(csv_path.string() + ": empty plan file");
  std::vector<std::string> header = split_csv(line);
  if (header.empty() || header[0] != "source") {
    throw FormatError(csv_path.string() + ": line 1 must start with \"source\"");
  }
  PlanTable t;
  t.anchor_labels.assign(header.begin() + 1, header.end());
  std::vector<double> values;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw FormatError(csv_path.string() + ": line " + std::to_string(line_no) + " has " +
                        std::to_string(cells.size()) + " cells, expected " +
                        std::to_string(header.size()));
    }
    t.source_labels.push_back(cells[0]);
    for (std::size_t k = 1; k < cells.size(); ++k) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cells[k], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != cells[k].size() || cells[k].empty()) {
        throw FormatError(csv_path.string() + ": line " + std::to_string(line_no) +
                          ": bad number \"" + cells[k] + "\"");
      }
      values.push_back(v);
    }
  }
  t.mass = Tensor({t.source_labels.size(), t.anchor_labels.size()}, std::move(values));
  return t;
}

// --- evaluation ----------------------------------------------------------------------

namespace {

std::vector<double> labels_of(const data::Dataset& ds) {
  std::vector<double> y;
  y.reserve(ds.size());
  for (const auto& s : ds) y.push_back(s.label);
  return y;
}

}  // namespace

EvalReport evaluate(const fusion::FusionModel& model, const data::Dataset& ds) {
  const std::vector<double> pred = fusion::predict(model, ds);
  const std::vector<double> y = labels_of(ds);
  EvalReport r;
  r.accuracy = binary_accuracy(pred, y);
  r.f1 = f1_binary(pred, y);
  return r;
}

EvalReport evaluate_missing_rates(const fusion::FusionModel& model, const data::Dataset& ds,
                                  std::span<const double> rates, std::uint64_t seed) {
  if (rates.empty()) throw ParameterError("evaluate_missing_rates: empty rate list");
  std::vector<double> sorted(rates.begin(), rates.end());
  std::sort(sorted.begin(), sorted.end());
  EvalReport r;
  for (double rate : sorted) {
    const EvalReport at = evaluate(model, data::apply_missing(ds, rate, seed));
    r.by_rate.push_back({rate, at.accuracy, at.f1});
  }
  r.accuracy = r.by_rate.front().accuracy;
  r.f1 = r.by_rate.front().f1;
  r.delta = r.by_rate.front().accuracy - r.by_rate.back().accuracy;
  return r;
}

double majority_baseline(const data::Dataset& ds) {
  if (ds.empty()) throw ParameterError("majority_baseline: empty dataset");
  std::size_t pos = 0;
  for (const auto& s : ds) pos += data::binarize_label(s.label);
  return static_cast<double>(std::max(pos, ds.size() - pos)) / static_cast<double>(ds.size());
}

}  // namespace xmf::metrics
