// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "xmf/alignment.hpp"
#include "xmf/bytes.hpp"
#include "xmf/data.hpp"
#include "xmf/errors.hpp"

namespace xmf::data {
namespace {

namespace fs = std::filesystem;

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "xmf_test_data";
  fs::create_directories(dir);
  return dir / name;
}

SynthConfig small_config(std::size_t n = 12) {
  SynthConfig c;
  c.num_samples = n;
  c.seed = 42;
  return c;
}

TEST(Synth, Shapes) {
  const SynthConfig c = small_config();
  const Dataset ds = synth_generate(c);
  ASSERT_EQ(ds.size(), c.num_samples);
  for (const MultimodalSample& s : ds) {
    EXPECT_EQ(s.audio().shape(), (Shape{c.t_audio, c.d_audio}));
    EXPECT_EQ(s.video().shape(), (Shape{c.t_video, c.d_video}));
    EXPECT_EQ(s.language().shape(), (Shape{c.t_language, c.d_language}));
    EXPECT_EQ(s.present_count(), 3u);
    EXPECT_GE(s.label, -3.0);
    EXPECT_LE(s.label, 3.0);
  }
}

TEST(Synth, DeterministicBytes) {
  EXPECT_EQ(mmf_encode(synth_generate(small_config())), mmf_encode(synth_generate(small_config())));
  SynthConfig other = small_config();
  other.seed = 43;
  EXPECT_NE(mmf_encode(synth_generate(small_config())), mmf_encode(synth_generate(other)));
}

TEST(Synth, LanguageTakesSmallestShift) {
  std::vector<SampleTruth> truth;
  synth_generate(small_config(200), &truth);
  bool any_shift = false;
  for (const SampleTruth& t : truth) {
    EXPECT_LE(t.shift[kLanguage], t.shift[kAudio]);
    EXPECT_LE(t.shift[kLanguage], t.shift[kVideo]);
    any_shift |= t.shift[kAudio] > 0;
  }
  EXPECT_TRUE(any_shift);
}

TEST(Synth, RejectsInvalidConfig) {
  SynthConfig c = small_config();
  c.misalignment_max_shift = c.t_language;
  EXPECT_THROW(synth_generate(c), ParameterError);
  c = small_config();
  c.d_video = 0;
  EXPECT_THROW(synth_generate(c), ParameterError);
  c = small_config();
  c.noise_std = -1;
  EXPECT_THROW(synth_generate(c), ParameterError);
}

// Least squares by normal equations and Gauss-Jordan elimination with
// partial pivoting. Noiseless features span a subspace, so columns without a
// usable pivot are dependent and keep zero weight.
std::vector<double> least_squares(const std::vector<std::vector<double>>& X,
                                  const std::vector<double>& y) {
  const std::size_t p = X[0].size();
  std::vector<std::vector<double>> A(p, std::vector<double>(p + 1, 0.0));
  for (std::size_t i = 0; i < X.size(); ++i) {
    for (std::size_t a = 0; a < p; ++a) {
      for (std::size_t b = 0; b < p; ++b) A[a][b] += X[i][a] * X[i][b];
      A[a][p] += X[i][a] * y[i];
    }
  }
  double scale = 0.0;
  for (std::size_t a = 0; a < p; ++a) scale = std::max(scale, std::abs(A[a][a]));
  std::vector<std::size_t> pivot_row(p, p);
  std::size_t next = 0;
  for (std::size_t c = 0; c < p && next < p; ++c) {
    std::size_t piv = next;
    for (std::size_t r = next + 1; r < p; ++r) {
      if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
    }
    if (std::abs(A[piv][c]) <= 1e-10 * scale) continue;
    std::swap(A[next], A[piv]);
    for (std::size_t r = 0; r < p; ++r) {
      if (r == next) continue;
      const double f = A[r][c] / A[next][c];
      for (std::size_t k = c; k <= p; ++k) A[r][k] -= f * A[next][k];
    }
    pivot_row[c] = next++;
  }
  std::vector<double> w(p, 0.0);
  for (std::size_t c = 0; c < p; ++c) {
    if (pivot_row[c] < p) w[c] = A[pivot_row[c]][p] / A[pivot_row[c]][c];
  }
  return w;
}

TEST(Synth, NoiselessAlignedLanguageIsLinearlySeparable) {
  // The polarity flips are cued only in audio, so language alone is a linear
  // function of the score only when flips are off. Clamped scores are not
  // linear, so the fit uses the rest; every sample must then be classified.
  SynthConfig c = small_config(512);
  c.noise_std = 0.0;
  c.misalignment_max_shift = 0;
  c.cue_flip_rate = 0.0;
  const Dataset ds = synth_generate(c);
  std::vector<std::vector<double>> X, X_fit;
  std::vector<double> y, y_fit;
  for (const MultimodalSample& s : ds) {
    std::vector<double> row(s.language().data().begin(), s.language().data().end());
    row.push_back(1.0);
    if (std::abs(s.label) < 3.0) {
      X_fit.push_back(row);
      y_fit.push_back(s.label);
    }
    X.push_back(std::move(row));
    y.push_back(s.label);
  }
  ASSERT_GT(X_fit.size(), X.size() / 2);
  const std::vector<double> w = least_squares(X_fit, y_fit);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    double z = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) z += w[k] * X[i][k];
    correct += (z > 0.0) == binarize_label(y[i]);
  }
  EXPECT_EQ(correct, X.size());
}

double plan_accuracy(const Dataset& ds, const std::vector<SampleTruth>& truth, Modality m) {
  std::size_t hit = 0, total = 0;
  for (std::size_t n = 0; n < ds.size(); ++n) {
    const auto plan =
        align::relaxed_ot_plan(align::cosine_cost(ds[n].features[m], ds[n].language()));
    for (std::size_t i = 0; i < plan.source_count(); ++i) {
      hit += plan.selected()[i] == true_anchor_position(truth[n], m, i);
      ++total;
    }
  }
  return double(hit) / double(total);
}

TEST(Synth, NoiselessUnshiftedPlansFindTrueTokens) {
  SynthConfig c = small_config(200);
  c.noise_std = 0.0;
  c.misalignment_max_shift = 0;
  std::vector<SampleTruth> truth;
  const Dataset ds = synth_generate(c, &truth);
  EXPECT_GE(plan_accuracy(ds, truth, kAudio), 0.95);
  EXPECT_GE(plan_accuracy(ds, truth, kVideo), 0.95);
}

TEST(Synth, ShiftedPlansAreNotDiagonal) {
  SynthConfig c = small_config(200);
  const Dataset ds = synth_generate(c);
  for (const Modality m : {kAudio, kVideo}) {
    double diag = 0.0;
    for (const MultimodalSample& s : ds) {
      const auto plan = align::relaxed_ot_plan(align::cosine_cost(s.features[m], s.language()));
      const std::size_t T = plan.anchor_count(), Tm = plan.source_count();
      for (std::size_t i = 0; i < Tm; ++i) diag += plan(i, i * T / Tm);
    }
    diag /= double(ds.size());
    EXPECT_LT(diag, 1.0 - 1.0 / double(c.t_language)) << kModalityNames[m];
  }
}

TEST(TrainTestSplit, TakesTail) {
  const Dataset ds = synth_generate(small_config(10));
  const auto [tr, te] = train_test_split(ds, 0.2);
  ASSERT_EQ(tr.size(), 8u);
  ASSERT_EQ(te.size(), 2u);
  EXPECT_EQ(te[0], ds[8]);
  EXPECT_THROW(train_test_split(ds, 0.0), ParameterError);
  EXPECT_THROW(train_test_split(ds, 0.01), ParameterError);
}

TEST(Missing, RateZeroUnchanged) {
  const Dataset ds = synth_generate(small_config());
  EXPECT_EQ(apply_missing(ds, 0.0, 1), ds);
}

TEST(Missing, RateOneKeepsExactlyOne) {
  const Dataset ds = synth_generate(small_config(100));
  const Dataset out = apply_missing(ds, 1.0, 2);
  std::array<int, 3> kept{};
  for (const MultimodalSample& s : out) {
    ASSERT_EQ(s.present_count(), 1u);
    for (std::size_t m = 0; m < 3; ++m) {
      if (s.present[m]) {
        ++kept[m];
      } else {
        for (double v : s.features[m].data()) ASSERT_EQ(v, 0.0);
      }
    }
  }
  for (int k : kept) EXPECT_GT(k, 15);
}

TEST(Missing, DropFractionBeforeRetention) {
  Rng rng(7);
  std::array<int, 3> dropped{};
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const DropDraw d = draw_drop(rng, 0.5, {true, true, true});
    for (std::size_t m = 0; m < 3; ++m) dropped[m] += d.dropped[m];
    ASSERT_GE(d.kept[0] + d.kept[1] + d.kept[2], 1);
  }
  for (int k : dropped) {
    EXPECT_GE(k / double(n), 0.47);
    EXPECT_LE(k / double(n), 0.53);
  }
}

TEST(Missing, NeverEmptyAndSeeded) {
  const Dataset ds = synth_generate(small_config(300));
  for (const double p : {0.1, 0.4, 0.7, 0.9}) {
    const Dataset a = apply_missing(ds, p, 5);
    for (const MultimodalSample& s : a) ASSERT_GE(s.present_count(), 1u);
    EXPECT_EQ(a, apply_missing(ds, p, 5));
  }
  EXPECT_THROW(apply_missing(ds, 1.5, 1), ParameterError);
  EXPECT_THROW(apply_missing(ds, -0.1, 1), ParameterError);
}

Dataset three_samples() {
  Dataset ds = synth_generate(small_config(3));
  ds[1].present[kVideo] = false;
  ds[1].features[kVideo] = Tensor(ds[1].video().shape(), 0.0);
  ds[2].label = -1.25;
  return ds;
}

TEST(Mmf, RoundTripAt32Bits) {
  const Dataset ds = three_samples();
  const fs::path p = temp_path("three.mmf");
  mmf_write(ds, p);
  const Dataset back = mmf_read(p);
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t n = 0; n < ds.size(); ++n) {
    EXPECT_EQ(back[n].label, ds[n].label);
    EXPECT_EQ(back[n].present, ds[n].present);
    for (std::size_t m = 0; m < 3; ++m) {
      ASSERT_EQ(back[n].features[m].shape(), ds[n].features[m].shape());
      for (std::size_t i = 0; i < ds[n].features[m].size(); ++i) {
        ASSERT_EQ(back[n].features[m][i], double(float(ds[n].features[m][i])));
      }
    }
  }
  EXPECT_EQ(mmf_encode(back), mmf_encode(ds));
}

TEST(Mmf, BadMagic) {
  auto bytes = mmf_encode(three_samples());
  bytes[0] = bytes[1] = bytes[2] = bytes[3] = 'X';
  try {
    mmf_decode(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
  }
}

TEST(Mmf, TruncationReportsOffset) {
  const auto bytes = mmf_encode(three_samples());
  for (const std::size_t keep : {std::size_t{6}, std::size_t{20}, bytes.size() - 3}) {
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + keep);
    try {
      mmf_decode(cut);
      FAIL() << keep;
    } catch (const FormatError& e) {
      EXPECT_NE(std::string(e.what()).find("byte offset"), std::string::npos) << e.what();
    }
  }
}

TEST(Mmf, EmptyDatasetIsEightBytes) {
  const fs::path p = temp_path("empty.mmf");
  mmf_write({}, p);
  EXPECT_EQ(fs::file_size(p), 8u);
  EXPECT_TRUE(mmf_read(p).empty());
}

TEST(Mmf, MissingFileIsIoError) {
  EXPECT_THROW(mmf_read(temp_path("does_not_exist.mmf")), IoError);
}

TEST(Jsonl, OneValidLine) {
  const Dataset ds = jsonl_parse(
      R"({"audio": [[1, 2]], "video": [[3], [4]], "language": [[5, 6, 7]], "label": 1})");
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds[0].video(), Tensor::from_rows({{3}, {4}}));
  EXPECT_EQ(ds[0].label, 1.0);
  EXPECT_EQ(ds[0].present_count(), 3u);
}

TEST(Jsonl, RaggedRowsNameLine) {
  try {
    jsonl_parse(R"({"audio": [[1]], "video": [[1, 2], [3]], "language": [[1]], "label": 0})");
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos) << e.what();
  }
}

TEST(Jsonl, MalformedLineNamesLine) {
  try {
    jsonl_parse("{\"audio\": [[1]], \"video\": [[1]], \"language\": [[1]], \"label\": 0}\n{oops");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Jsonl, MatchesMmfAfterExport) {
  const Dataset ds = three_samples();
  const fs::path pm = temp_path("x.mmf"), pj = temp_path("x.jsonl");
  mmf_write(ds, pm);
  const Dataset from_mmf = mmf_read(pm);
  jsonl_write(from_mmf, pj);
  EXPECT_EQ(jsonl_read(pj), from_mmf);
}

}  // namespace
}  // namespace xmf::data
