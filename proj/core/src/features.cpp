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

#include "sedtune/features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fftw3.h>

#include "sedtune/error.hpp"

namespace sedtune {

const char* to_string(EncoderKind kind) { return kind == EncoderKind::FrameWise ? "frame" : "patch"; }

EncoderKind encoder_kind_from_string(const std::string& s) {
  if (s == "frame") return EncoderKind::FrameWise;
  if (s == "patch") return EncoderKind::PatchWise;
  throw ConfigError("encoder kind must be 'frame' or 'patch', got '" + s + "'");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Tensor mel_filterbank(std::size_t n_fft, std::size_t n_mels, int sample_rate, double f_min, double f_max) {
  if (n_mels == 0 || n_fft < 2) throw ConfigError("mel filterbank needs n_mels > 0 and n_fft >= 2");
  if (!(f_min >= 0 && f_max > f_min && f_max <= sample_rate / 2.0))
    throw ConfigError("mel band edges must satisfy 0 <= f_min < f_max <= sample_rate/2");
  const std::size_t bins = n_fft / 2 + 1;
  const double m_lo = hz_to_mel(f_min), m_hi = hz_to_mel(f_max);
  std::vector<double> f(n_mels + 2);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = mel_to_hz(m_lo + (m_hi - m_lo) * i / (n_mels + 1));
  Tensor fb({bins, n_mels});
  for (std::size_t k = 0; k < bins; ++k) {
    const double hz = sample_rate / 2.0 * k / (bins - 1);
    for (std::size_t m = 0; m < n_mels; ++m) {
      const double down = (hz - f[m]) / (f[m + 1] - f[m]);
      const double up = (f[m + 2] - hz) / (f[m + 2] - f[m + 1]);
      fb[k * n_mels + m] = std::max(0.0, std::min(down, up));
    }
  }
  return fb;
}

struct LogMelExtractor::Fft {
  std::size_t n;
  double* in;
  fftw_complex* out;
  fftw_plan plan;

  explicit Fft(std::size_t n_fft) : n(n_fft) {
    in = fftw_alloc_real(n);
    out = fftw_alloc_complex(n / 2 + 1);
    // ESTIMATE keeps the plan (and hence the arithmetic) identical run to run.
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
  }
  ~Fft() {
    fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
};

LogMelExtractor::LogMelExtractor(const FeatureConfig& cfg, Branch branch)
    : cfg_(cfg), stft_(branch == Branch::Cnn ? cfg.cnn : cfg.encoder), branch_(branch) {
  if (stft_.win_length == 0 || stft_.hop == 0 || stft_.win_length > stft_.n_fft)
    throw ConfigError("STFT needs 0 < win_length <= n_fft and hop > 0");
  const Tensor fb = mel_filterbank(stft_.n_fft, cfg.n_mels, cfg.sample_rate, cfg.f_min, cfg.f_max);
  const std::size_t bins = stft_.n_fft / 2 + 1;
  filters_.resize(cfg.n_mels);
  for (std::size_t k = 0; k < bins; ++k)
    for (std::size_t m = 0; m < cfg.n_mels; ++m)
      if (fb[k * cfg.n_mels + m] > 0) filters_[m].emplace_back(k, fb[k * cfg.n_mels + m]);
  window_.resize(stft_.win_length);
  for (std::size_t i = 0; i < window_.size(); ++i)
    window_[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(window_.size()));
  fft_ = std::make_unique<Fft>(stft_.n_fft);
}

LogMelExtractor::~LogMelExtractor() = default;

double LogMelExtractor::frame_hop() const { return static_cast<double>(stft_.hop) / cfg_.sample_rate; }
double LogMelExtractor::frame_len() const { return static_cast<double>(stft_.win_length) / cfg_.sample_rate; }

std::size_t LogMelExtractor::frame_count(std::size_t samples) const {
  if (stft_.pad_tail) return samples / stft_.hop;
  return samples < stft_.win_length ? 0 : (samples - stft_.win_length) / stft_.hop + 1;
}

void LogMelExtractor::compute(const float* x, std::size_t n, double* out) {
  if (n == 0) throw ValidationError("log-mel: empty waveform");
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(x[i])) throw ValidationError("log-mel: non-finite sample at index " + std::to_string(i));
  const std::size_t frames = frame_count(n);
  if (frames == 0) throw ValidationError("log-mel: waveform shorter than one frame");
  const std::size_t F = cfg_.n_mels;
  const std::size_t bins = stft_.n_fft / 2 + 1;
  std::vector<double> power(bins);
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t start = t * stft_.hop;
    for (std::size_t i = 0; i < stft_.n_fft; ++i) {
      const std::size_t s = start + i;
      fft_->in[i] = (i < stft_.win_length && s < n) ? static_cast<double>(x[s]) * window_[i] : 0.0;
    }
    fftw_execute(fft_->plan);
    for (std::size_t k = 0; k < bins; ++k) power[k] = fft_->out[k][0] * fft_->out[k][0] + fft_->out[k][1] * fft_->out[k][1];
    double* row = out + t * F;
    for (std::size_t m = 0; m < F; ++m) {
      double acc = 0.0;
      for (const auto& [k, w] : filters_[m]) acc += w * power[k];
      row[m] = std::log(acc + cfg_.log_eps);
    }
  }
}

MelSpectrogram LogMelExtractor::operator()(const std::vector<float>& waveform) {
  MelSpectrogram m;
  m.values = Tensor({frame_count(waveform.size()), cfg_.n_mels});
  compute(waveform.data(), waveform.size(), m.values.data());
  m.frame_hop = frame_hop();
  m.frame_len = frame_len();
  m.n_mels = cfg_.n_mels;
  m.origin = branch_;
  return m;
}

MelSpectrogram LogMelExtractor::batch(const std::vector<std::vector<float>>& waveforms) {
  if (waveforms.empty()) throw ValidationError("log-mel: empty batch");
  const std::size_t n = waveforms.front().size();
  const std::size_t T = frame_count(n), F = cfg_.n_mels;
  MelSpectrogram m;
  m.values = Tensor({waveforms.size(), T, F});
  for (std::size_t i = 0; i < waveforms.size(); ++i) {
    if (waveforms[i].size() != n) throw ContractError("log-mel batch: waveforms differ in length");
    compute(waveforms[i].data(), n, m.values.data() + i * T * F);
  }
  m.frame_hop = frame_hop();
  m.frame_len = frame_len();
  m.n_mels = F;
  m.origin = branch_;
  return m;
}

MelSpectrogram logmel_cnn(const std::vector<float>& waveform, const FeatureConfig& cfg) {
  LogMelExtractor ex(cfg, Branch::Cnn);
  return ex(waveform);
}

MelSpectrogram logmel_encoder(const std::vector<float>& waveform, const FeatureConfig& cfg) {
  LogMelExtractor ex(cfg, Branch::Encoder);
  return ex(waveform);
}

TokenGrid token_grid(EncoderKind kind, std::size_t frames, const FeatureConfig& cfg) {
  const double hop = static_cast<double>(cfg.encoder.hop) / cfg.sample_rate;
  TokenGrid g;
  if (kind == EncoderKind::FrameWise) {
    g.columns = frames / cfg.frame_token_frames;
    g.per_column = 1;
    g.dim = cfg.frame_token_frames * cfg.n_mels;
    g.column_seconds = hop * cfg.frame_token_frames;
  } else {
    if (cfg.n_mels % cfg.patch_size != 0) throw ConfigError("n_mels must be a multiple of the patch size");
    g.columns = frames / cfg.patch_size;
    g.per_column = cfg.n_mels / cfg.patch_size;
    g.dim = cfg.patch_size * cfg.patch_size;
    g.column_seconds = hop * cfg.patch_size;
  }
  return g;
}

Tensor encoder_tokens(const MelSpectrogram& mel, EncoderKind kind, const FeatureConfig& cfg) {
  if (mel.origin != Branch::Encoder) throw ContractError("encoder tokens need an encoder-branch spectrogram");
  const Tensor& v = mel.values;
  const bool batched = v.rank() == 3;
  const std::size_t N = batched ? v.dim(0) : 1;
  const std::size_t T = v.dim(v.rank() - 2), F = v.dim(v.rank() - 1);
  if (F != cfg.n_mels) throw ContractError("encoder tokens: mel width mismatch");
  const TokenGrid g = token_grid(kind, T, cfg);
  if (g.columns == 0) throw ValidationError("encoder tokens: spectrogram shorter than one token");
  Tensor out({N, g.count(), g.dim});
  for (std::size_t n = 0; n < N; ++n) {
    const double* src = v.data() + n * T * F;
    double* dst = out.data() + n * g.count() * g.dim;
    if (kind == EncoderKind::FrameWise) {
      std::copy_n(src, g.count() * g.dim, dst);
    } else {
      const std::size_t P = cfg.patch_size;
      for (std::size_t c = 0; c < g.columns; ++c)
        for (std::size_t fp = 0; fp < g.per_column; ++fp) {
          double* tok = dst + (c * g.per_column + fp) * g.dim;
          for (std::size_t a = 0; a < P; ++a)
            for (std::size_t b = 0; b < P; ++b) tok[a * P + b] = src[(c * P + a) * F + fp * P + b];
        }
    }
  }
  return out;
}

MelSpectrogram frequency_warp(const MelSpectrogram& spec, double factor) {
  if (spec.origin != Branch::Encoder) throw ContractError("frequency warping applies to the encoder branch only");
  if (!(factor > 0) || !std::isfinite(factor)) throw ContractError("frequency warp factor must be positive");
  MelSpectrogram out = spec;
  const std::size_t F = spec.values.dim(spec.values.rank() - 1);
  const std::size_t rows = spec.values.size() / F;
  const double* src = spec.values.data();
  double* dst = out.values.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = src + r * F;
    double* o = dst + r * F;
    for (std::size_t j = 0; j < F; ++j) {
      const double pos = static_cast<double>(j) / factor;
      if (pos > static_cast<double>(F - 1)) {
        o[j] = 0.0;
        continue;
      }
      const std::size_t i0 = static_cast<std::size_t>(pos);
      const double frac = pos - static_cast<double>(i0);
      const double a = in[i0];
      const double b = in[std::min(i0 + 1, F - 1)];
      o[j] = frac == 0.0 ? a : a + (b - a) * frac;
    }
  }
  return out;
}

AugmentationDraw draw_augmentations(Rng& rng, const AugmentConfig& cfg, bool allow_fw,
                                    const std::vector<std::size_t>& groups) {
  AugmentationDraw d;
  d.use_mixup = coin(rng, cfg.p_mixup);
  const bool fw = coin(rng, cfg.p_fw);
  d.use_fw = allow_fw && fw;
  if (d.use_mixup) d.mix_lambda = std::clamp(beta_sample(rng, cfg.beta_alpha, cfg.beta_alpha), 1e-6, 1.0 - 1e-6);
  if (d.use_fw) d.fw_factor = uniform(rng, cfg.fw_min, cfg.fw_max);
  const std::size_t N = std::accumulate(groups.begin(), groups.end(), std::size_t{0});
  d.permutation.resize(N);
  std::iota(d.permutation.begin(), d.permutation.end(), std::size_t{0});
  if (d.use_mixup) {
    std::size_t start = 0;
    for (std::size_t g : groups) {
      std::shuffle(d.permutation.begin() + static_cast<std::ptrdiff_t>(start),
                   d.permutation.begin() + static_cast<std::ptrdiff_t>(start + g), rng);
      start += g;
    }
  }
  return d;
}

std::vector<std::size_t> mixup_groups(const CompositeBatch& batch) {
  const auto& g = batch.group_sizes;
  return {g[0] + g[1], g[2], g[3]};
}

namespace {

void check_permutation(const std::vector<std::size_t>& perm, std::size_t n) {
  if (perm.size() != n) throw ContractError("mixup: permutation length does not match the batch");
  std::vector<bool> seen(n, false);
  for (std::size_t p : perm) {
    if (p >= n || seen[p]) throw ContractError("mixup: pairing is not a permutation");
    seen[p] = true;
  }
}

void check_lambda(double lambda) {
  if (!(lambda > 0.0 && lambda <= 1.0)) throw ContractError("mixup: lambda must lie in (0, 1]");
}

}  // namespace

Tensor mix_rows(const Tensor& x, double lambda, const std::vector<std::size_t>& perm) {
  check_lambda(lambda);
  const std::size_t N = x.dim(0);
  check_permutation(perm, N);
  const std::size_t row = N ? x.size() / N : 0;
  Tensor out(x.shape());
  for (std::size_t i = 0; i < N; ++i) {
    const double* a = x.data() + i * row;
    const double* b = x.data() + perm[i] * row;
    double* o = out.data() + i * row;
    for (std::size_t k = 0; k < row; ++k) o[k] = lambda * a[k] + (1.0 - lambda) * b[k];
  }
  return out;
}

void mixup(CompositeBatch& batch, double lambda, const std::vector<std::size_t>& perm) {
  check_lambda(lambda);
  const std::size_t N = batch.size();
  check_permutation(perm, N);
  for (std::size_t i = 0; i < N; ++i)
    if (batch.kind[i] != batch.kind[perm[i]]) throw ContractError("mixup: partners must share a supervision kind");
  std::vector<std::vector<float>> mixed(N);
  for (std::size_t i = 0; i < N; ++i) {
    const auto& a = batch.waveforms[i];
    const auto& b = batch.waveforms[perm[i]];
    if (a.size() != b.size()) throw ContractError("mixup: waveforms differ in length");
    mixed[i].resize(a.size());
    for (std::size_t k = 0; k < a.size(); ++k)
      mixed[i][k] = static_cast<float>(lambda * a[k] + (1.0 - lambda) * static_cast<double>(b[k]));
  }
  batch.waveforms = std::move(mixed);
  batch.strong_labels = mix_rows(batch.strong_labels, lambda, perm);
  batch.weak_labels = mix_rows(batch.weak_labels, lambda, perm);
}

}  // namespace sedtune
