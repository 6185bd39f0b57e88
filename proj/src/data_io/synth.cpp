// SPDX-License-Identifier: Apache-2.0
//
// Synthetic temporally-misaligned trimodal data.
//
// Each sample has a latent timeline of T = t_language steps carrying
//   s(t)  sentiment curve: a random walk smoothed by a 3-tap box filter;
//         sign(mean s) is the class, clamp(mean s, -3, 3) the score
//   c(t)  event code in R^content_dim, i.i.d. per step, seen by every
//         modality through one shared map (what makes tokens of different
//         modalities matchable)
//   f(t)  polarity flip, Bernoulli(cue_flip_rate)
// Modality m samples the timeline at its own rate (frame i looks at step
// floor(i T / T_m)), delayed by a per-sample circular shift, and observes
//   audio    : c + g s w_a + (2f - 1) u_a
//   video    : c + g s w_v
//   language : c + s (1 - 2f) w_l
// plus N(0, noise_std^2) per coordinate, where g = side_sentiment_gain.
// The content map has orthonormal columns (times kContentGain) and w_m, u_a
// are random unit directions in its orthogonal complement, so content
// dominates cross-modal cosine similarity while staying linearly separable
// from the label signal. This needs content_dim < width; otherwise the map
// is Gaussian and the directions unconstrained. Recovering s at a timestep
// from the strong language channel needs the audio cue from the same instant.

#include <algorithm>
#include <cmath>
#include <string>

#include "xmf/data.hpp"
#include "xmf/errors.hpp"

namespace xmf::data {
namespace {

constexpr double kContentGain = 2.0;
constexpr double kCueGain = 1.0;
constexpr double kLanguageGain = 1.0;
constexpr double kCurveScale = 1.5;

struct Maps {
  std::array<Tensor, kNumModalities> content;  // [d_m x k]
  std::array<std::vector<double>, kNumModalities> sentiment_dir;
  std::vector<double> cue_dir;
};

// Orthonormal basis of R^d from the leading d x d block of g (Gram-Schmidt
// on columns). Equal widths give equal bases.
Tensor orthonormal_basis(const Tensor& g, std::size_t d) {
  Tensor q({d, d});
  for (std::size_t j = 0; j < d; ++j) {
    std::vector<double> v(d);
    for (std::size_t r = 0; r < d; ++r) v[r] = g(r, j);
    for (std::size_t p = 0; p < j; ++p) {
      double dot = 0.0;
      for (std::size_t r = 0; r < d; ++r) dot += v[r] * q(r, p);
      for (std::size_t r = 0; r < d; ++r) v[r] -= dot * q(r, p);
    }
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    const double inv = 1.0 / std::sqrt(std::max(n2, 1e-300));
    for (std::size_t r = 0; r < d; ++r) q(r, j) = v[r] * inv;
  }
  return q;
}

// Random unit vector in the span of columns [first, d) of q, or in all of
// R^d when that range is empty.
std::vector<double> unit_vector(Rng& rng, const Tensor& q, std::size_t first) {
  const std::size_t d = q.rows();
  if (first >= d) first = 0;
  std::vector<double> v(d, 0.0);
  for (std::size_t j = first; j < d; ++j) {
    const double w = rng.normal();
    for (std::size_t r = 0; r < d; ++r) v[r] += w * q(r, j);
  }
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  const double inv = 1.0 / std::sqrt(std::max(n2, 1e-300));
  for (double& x : v) x *= inv;
  return v;
}

Maps draw_maps(const SynthConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, "synth/maps"));
  const std::array<std::size_t, 3> dims{cfg.d_audio, cfg.d_video, cfg.d_language};
  const std::size_t d_max = *std::max_element(dims.begin(), dims.end());
  const std::size_t k = cfg.content_dim;
  const Tensor g = rng.normal_tensor({d_max, std::max(d_max, k)});
  Maps maps;
  std::array<Tensor, kNumModalities> basis;
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    const std::size_t d = dims[m];
    basis[m] = orthonormal_basis(g, d);
    Tensor c({d, k});
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t j = 0; j < k; ++j) {
        // Orthonormal columns while k < d, scaled Gaussian columns beyond.
        c(r, j) = kContentGain * (j < d && k < d ? basis[m](r, j)
                                                 : g(r, j) / std::sqrt(static_cast<double>(d)));
      }
    }
    maps.content[m] = std::move(c);
  }
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    maps.sentiment_dir[m] = unit_vector(rng, basis[m], k);
  }
  maps.cue_dir = unit_vector(rng, basis[kAudio], k);
  return maps;
}

}  // namespace

void SynthConfig::validate() const {
  const std::size_t vals[] = {num_samples, t_audio, t_video, t_language, d_audio,
                              d_video,     d_language, content_dim};
  for (std::size_t v : vals) {
    if (v == 0) throw ParameterError("synth config: sizes must be positive");
  }
  const std::size_t min_len = std::min({t_audio, t_video, t_language});
  if (misalignment_max_shift >= min_len) {
    throw ParameterError("synth config: misalignment_max_shift (" +
                         std::to_string(misalignment_max_shift) +
                         ") must be below the shortest sequence length (" +
                         std::to_string(min_len) + ")");
  }
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
    throw ParameterError("synth config: noise_std must be finite and >= 0");
  }
  if (!(side_sentiment_gain >= 0.0) || !std::isfinite(side_sentiment_gain)) {
    throw ParameterError("synth config: side_sentiment_gain must be finite and >= 0");
  }
  if (!(cue_flip_rate >= 0.0 && cue_flip_rate <= 1.0)) {
    throw ParameterError("synth config: cue_flip_rate must lie in [0, 1]");
  }
}

Dataset synth_generate(const SynthConfig& cfg) { return synth_generate(cfg, nullptr); }

Dataset synth_generate(const SynthConfig& cfg, std::vector<SampleTruth>* truth) {
  cfg.validate();
  const Maps maps = draw_maps(cfg);
  const std::size_t T = cfg.t_language;
  const std::array<std::size_t, 3> lens{cfg.t_audio, cfg.t_video, cfg.t_language};
  const std::array<std::size_t, 3> dims{cfg.d_audio, cfg.d_video, cfg.d_language};
  const std::size_t k = cfg.content_dim;

  Dataset ds;
  ds.reserve(cfg.num_samples);
  if (truth) {
    truth->clear();
    truth->reserve(cfg.num_samples);
  }

  for (std::size_t n = 0; n < cfg.num_samples; ++n) {
    Rng rng(derive_seed(cfg.seed, "synth/sample/" + std::to_string(n)));

    std::vector<double> walk(T);
    double acc = 0.0;
    for (std::size_t t = 0; t < T; ++t) walk[t] = (acc += rng.normal());
    std::vector<double> s(T);
    const double scale = kCurveScale / std::sqrt(static_cast<double>(T));
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t lo = t == 0 ? 0 : t - 1;
      const std::size_t hi = std::min(T - 1, t + 1);
      double sum = 0.0;
      for (std::size_t u = lo; u <= hi; ++u) sum += walk[u];
      s[t] = scale * sum / static_cast<double>(hi - lo + 1);
    }
    Tensor code = rng.normal_tensor({T, k});
    std::vector<bool> flip(T);
    for (std::size_t t = 0; t < T; ++t) flip[t] = rng.bernoulli(cfg.cue_flip_rate);

    SampleTruth st;
    for (std::size_t m = 0; m < kNumModalities; ++m) {
      st.shift[m] = rng.index(cfg.misalignment_max_shift + 1);
    }
    // Language is the anchor and takes the smallest shift.
    const auto smallest = std::min_element(st.shift.begin(), st.shift.end());
    std::iter_swap(smallest, st.shift.begin() + kLanguage);

    MultimodalSample sample;
    for (std::size_t m = 0; m < kNumModalities; ++m) {
      const std::size_t Tm = lens[m], d = dims[m];
      Tensor x({Tm, d});
      st.latent_step[m].resize(Tm);
      for (std::size_t i = 0; i < Tm; ++i) {
        const std::size_t base = i * T / Tm;
        const std::size_t tau = (base + T - st.shift[m]) % T;
        st.latent_step[m][i] = tau;
        double sentiment = s[tau];
        double gain = cfg.side_sentiment_gain;
        if (m == kLanguage) {
          gain = kLanguageGain;
          if (flip[tau]) sentiment = -sentiment;
        }
        auto row = x.row(i);
        for (std::size_t c = 0; c < d; ++c) {
          double v = 0.0;
          for (std::size_t j = 0; j < k; ++j) v += maps.content[m](c, j) * code(tau, j);
          v += gain * sentiment * maps.sentiment_dir[m][c];
          if (m == kAudio) v += kCueGain * (flip[tau] ? 1.0 : -1.0) * maps.cue_dir[c];
          row[c] = v;
        }
      }
      for (double& v : x.data()) v += cfg.noise_std * rng.normal();
      sample.features[m] = std::move(x);
    }
    double mean_s = 0.0;
    for (double v : s) mean_s += v;
    mean_s /= static_cast<double>(T);
    sample.label = std::clamp(mean_s, -3.0, 3.0);
    ds.push_back(std::move(sample));
    if (truth) truth->push_back(std::move(st));
  }
  return ds;
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double test_fraction) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ParameterError("train_test_split: test_fraction must lie in (0, 1)");
  }
  const auto n_test =
      static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ds.size())));
  if (n_test == 0 || n_test >= ds.size()) {
    throw ParameterError("train_test_split: " + std::to_string(ds.size()) +
                         " samples cannot be split with test_fraction " +
                         std::to_string(test_fraction));
  }
  const auto cut = ds.begin() + static_cast<std::ptrdiff_t>(ds.size() - n_test);
  return {Dataset(ds.begin(), cut), Dataset(cut, ds.end())};
}

std::size_t true_anchor_position(const SampleTruth& truth, Modality m, std::size_t frame) {
  const std::size_t tau = truth.latent_step[m].at(frame);
  const auto& lang = truth.latent_step[kLanguage];
  const auto it = std::find(lang.begin(), lang.end(), tau);
  return static_cast<std::size_t>(it - lang.begin());
}

}  // namespace xmf::data
