// SPDX-License-Identifier: Apache-2.0
//
// Multimodal samples, the synthetic misaligned dataset, missing-modality
// simulation and the two on-disk formats (MMF1 binary, JSONL).

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "xmf/rng.hpp"
#include "xmf/tensor.hpp"

namespace xmf::data {

enum Modality : std::size_t { kAudio = 0, kVideo = 1, kLanguage = 2 };
inline constexpr std::size_t kNumModalities = 3;
inline constexpr std::array<const char*, kNumModalities> kModalityNames = {"audio", "video",
                                                                           "language"};

/// One example: three feature sequences, a label and a presence mask.
///
/// The label is either a class in {0, 1} or a sentiment score in [-3, 3];
/// binarize_label() maps both onto the positive/negative split (> 0).
struct MultimodalSample {
  std::array<Tensor, kNumModalities> features;
  double label = 0.0;
  std::array<bool, kNumModalities> present{true, true, true};

  const Tensor& audio() const { return features[kAudio]; }
  const Tensor& video() const { return features[kVideo]; }
  const Tensor& language() const { return features[kLanguage]; }
  std::size_t present_count() const;

  /// Throws DimensionError / ParameterError when the sample violates the
  /// invariants (no modality present, empty present sequence, rank != 2).
  void validate() const;

  bool operator==(const MultimodalSample&) const = default;
};

using Dataset = std::vector<MultimodalSample>;

inline bool binarize_label(double label) { return label > 0.0; }

// --- synthetic generator ------------------------------------------------------

struct SynthConfig {
  std::size_t num_samples = 2560;
  std::size_t t_audio = 16;
  std::size_t t_video = 12;
  std::size_t t_language = 8;
  std::size_t d_audio = 8;
  std::size_t d_video = 8;
  std::size_t d_language = 8;
  std::size_t misalignment_max_shift = 3;
  double noise_std = 0.2;
  std::uint64_t seed = 7;
  /// Width of the shared per-timestep event code visible in every modality.
  std::size_t content_dim = 5;
  /// Probability that a language token's sentiment polarity is inverted at a
  /// timestep; the inversion is cued in the audio stream at the same instant.
  double cue_flip_rate = 0.3;
  /// Strength of the sentiment signal in the audio and video streams.
  double side_sentiment_gain = 0.1;

  void validate() const;
};

/// Per-sample ground truth kept by the generator (test oracle only).
struct SampleTruth {
  std::array<std::size_t, kNumModalities> shift{};
  /// For every frame of every modality, the latent timestep it observes.
  std::array<std::vector<std::size_t>, kNumModalities> latent_step;
};

Dataset synth_generate(const SynthConfig& cfg);
Dataset synth_generate(const SynthConfig& cfg, std::vector<SampleTruth>* truth);

/// Splits off the last round(test_fraction * size) samples as the test set.
/// Samples come out of the generator i.i.d., so no shuffling is needed.
/// Throws ParameterError unless both parts end up non-empty.
std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double test_fraction);

/// Anchor (language) frame observing the same latent step as frame `frame`
/// of modality `m`.
std::size_t true_anchor_position(const SampleTruth& truth, Modality m, std::size_t frame);

// --- missing modalities ------------------------------------------------------

struct DropDraw {
  std::array<bool, kNumModalities> dropped{};  // raw Bernoulli(p) outcome
  std::array<bool, kNumModalities> kept{};     // after the retention fix-up
};

/// One sample's draw: each currently-present modality drops with
/// probability p; if that would leave nothing, one of the previously present
/// modalities is retained uniformly at random.
DropDraw draw_drop(Rng& rng, double p, const std::array<bool, kNumModalities>& present);

/// Dropped modalities get zeroed features and a false mask bit. Throws
/// ParameterError for p outside [0, 1].
Dataset apply_missing(const Dataset& ds, double p, std::uint64_t seed);

// --- MMF1 binary container ----------------------------------------------------
//
//   "MMF1" | u32 count | count x sample
//   sample = 3 x (u32 T | u32 d | T*d f32) | u8 mask | f64 label
// All integers and floats little-endian; mask bit k set <=> modality k present.

std::vector<std::uint8_t> mmf_encode(const Dataset& ds);
Dataset mmf_decode(std::span<const std::uint8_t> bytes);
void mmf_write(const Dataset& ds, const std::filesystem::path& path);
Dataset mmf_read(const std::filesystem::path& path);

// --- JSONL ---------------------------------------------------------------------
//
// One object per line: {"audio": [[...],...], "video": ..., "language": ...,
// "label": number, "mask": [bool, bool, bool] (optional)}.

Dataset jsonl_parse(std::string_view text);
Dataset jsonl_read(const std::filesystem::path& path);
void jsonl_write(const Dataset& ds, const std::filesystem::path& path);

}  // namespace xmf::data
