// Copyright 2026 The sedtune Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Log-mel front ends for both branches, encoder tokenization, and the two
// augmentations (waveform mixup, frequency warping) with their random draw.

#include <array>
#include <cstddef>
#include <memory>
#include <vector>

#include "sedtune/corpus.hpp"
#include "sedtune/rng.hpp"
#include "sedtune/tensor.hpp"

namespace sedtune {

enum class Branch { Cnn, Encoder };
enum class EncoderKind { FrameWise, PatchWise };

const char* to_string(EncoderKind kind);
EncoderKind encoder_kind_from_string(const std::string& s);

struct StftConfig {
  std::size_t win_length = 2048;
  std::size_t n_fft = 2048;
  std::size_t hop = 256;
  /// Zero-pad the tail so that frames = floor(samples / hop).
  bool pad_tail = false;
};

struct FeatureConfig {
  int sample_rate = 16000;
  std::size_t n_mels = 128;
  double f_min = 0.0;
  double f_max = 8000.0;
  double log_eps = 1e-5;
  StftConfig cnn{2048, 2048, 256, false};
  StftConfig encoder{400, 512, 160, true};
  std::size_t frame_token_frames = 4;  // frames per frame-wise token
  std::size_t patch_size = 16;         // square patch edge, frames and bins
};

/// values: [T, F] or [N, T, F] log-mel energies.
struct MelSpectrogram {
  Tensor values;
  double frame_hop = 0.0;
  double frame_len = 0.0;
  std::size_t n_mels = 0;
  Branch origin = Branch::Cnn;

  std::size_t frames() const { return values.dim(values.rank() - 2); }
};

/// HTK mel scale.
double hz_to_mel(double hz);
double mel_to_hz(double mel);
/// Triangular filterbank [n_fft/2+1, n_mels] without area normalization.
Tensor mel_filterbank(std::size_t n_fft, std::size_t n_mels, int sample_rate, double f_min, double f_max);

/// One branch's STFT + mel + log pipeline. Not thread-safe (owns FFT scratch).
class LogMelExtractor {
 public:
  LogMelExtractor(const FeatureConfig& cfg, Branch branch);
  ~LogMelExtractor();
  LogMelExtractor(const LogMelExtractor&) = delete;
  LogMelExtractor& operator=(const LogMelExtractor&) = delete;

  std::size_t frame_count(std::size_t samples) const;
  /// Writes frame_count(n) * n_mels values into `out` (row-major [T, F]).
  void compute(const float* x, std::size_t n, double* out);
  MelSpectrogram operator()(const std::vector<float>& waveform);
  /// Stacks equal-length waveforms into [N, T, F].
  MelSpectrogram batch(const std::vector<std::vector<float>>& waveforms);

  Branch branch() const { return branch_; }
  const StftConfig& stft() const { return stft_; }
  double frame_hop() const;
  double frame_len() const;

 private:
  struct Fft;
  FeatureConfig cfg_;
  StftConfig stft_;
  Branch branch_;
  std::vector<std::vector<std::pair<std::size_t, double>>> filters_;  // sparse columns
  std::vector<double> window_;
  std::unique_ptr<Fft> fft_;
};

MelSpectrogram logmel_cnn(const std::vector<float>& waveform, const FeatureConfig& cfg = {});
MelSpectrogram logmel_encoder(const std::vector<float>& waveform, const FeatureConfig& cfg = {});

/// Token layout produced by `encoder_tokens`.
struct TokenGrid {
  std::size_t columns = 0;          // time columns
  std::size_t per_column = 1;       // tokens per column (frequency patches)
  std::size_t dim = 0;              // token width
  double column_seconds = 0.0;      // time spanned by one column
  std::size_t count() const { return columns * per_column; }
  double tokens_per_second() const { return per_column / column_seconds; }
};

TokenGrid token_grid(EncoderKind kind, std::size_t frames, const FeatureConfig& cfg);
/// Encoder-branch mel [N, T, F] -> tokens [N, count, dim]. Patch tokens are
/// ordered column by column, low frequency first.
Tensor encoder_tokens(const MelSpectrogram& mel, EncoderKind kind, const FeatureConfig& cfg);

/// Resamples the frequency axis by `factor` with linear interpolation,
/// cropping or zero-padding back to F bins. Rejects CNN-branch input.
MelSpectrogram frequency_warp(const MelSpectrogram& spec, double factor);

struct AugmentationDraw {
  bool use_mixup = false;
  bool use_fw = false;
  double mix_lambda = 1.0;
  double fw_factor = 1.0;
  std::vector<std::size_t> permutation;  // partner row of each batch row
};

struct AugmentConfig {
  double p_mixup = 0.5;
  double p_fw = 0.5;
  double beta_alpha = 0.2;
  double fw_min = 0.9;
  double fw_max = 1.1;
};

/// Independent coins for mixup and frequency warping. Mixup partners are
/// drawn within groups of rows (`groups` gives each group's size, in order);
/// pass an empty list to draw flags only.
AugmentationDraw draw_augmentations(Rng& rng, const AugmentConfig& cfg, bool allow_fw,
                                    const std::vector<std::size_t>& groups);

/// Row partitions used for mixup pairing: strong (both streams), weak, unlabeled.
std::vector<std::size_t> mixup_groups(const CompositeBatch& batch);

/// Waveforms and targets mixed as lambda*x_i + (1-lambda)*x_perm[i].
/// lambda must lie in (0, 1]; lambda = 1 leaves the batch unchanged.
void mixup(CompositeBatch& batch, double lambda, const std::vector<std::size_t>& permutation);
/// Rows of [N, ...] mixed the same way.
Tensor mix_rows(const Tensor& x, double lambda, const std::vector<std::size_t>& permutation);

}  // namespace sedtune
