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

// Dual-branch SED network: CNN front end and transformer encoder, aligned by
// adaptive pooling, merged, passed through a bidirectional GRU, and read out
// by a frame-level head and an attention-pooled clip-level head.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sedtune/autograd.hpp"
#include "sedtune/features.hpp"
#include "sedtune/rng.hpp"

namespace sedtune {

/// Optimizer group a parameter belongs to.
enum class ParamGroup { Cnn, Rnn, EncoderEmbed, EncoderBlock };
const char* to_string(ParamGroup g);

struct Param {
  std::string name;
  ag::Var var;
  ParamGroup group = ParamGroup::Cnn;
  int block = -1;  // transformer block index for EncoderBlock
};

struct CnnSpec {
  std::vector<std::size_t> channels{16, 32, 64, 64, 64, 64, 64};
  std::vector<std::size_t> time_pool{2, 2, 1, 1, 1, 1, 1};
  std::vector<std::size_t> freq_pool{2, 2, 2, 2, 2, 2, 2};
  std::string activation = "relu";  // relu | gelu
};

struct EncoderSpec {
  EncoderKind kind = EncoderKind::FrameWise;
  std::size_t n_blocks = 2;
  std::size_t width = 256;
  std::size_t n_heads = 4;
  std::size_t mlp_ratio = 4;
  std::string init = "random";  // random | checkpoint
  std::string checkpoint;        // used when init == "checkpoint"
  /// Seconds per token column: 0.040 frame-wise, 0.160 patch-wise.
  double token_resolution(const FeatureConfig& f) const;
};

struct ModelSpec {
  std::size_t n_classes = 3;
  CnnSpec cnn;
  EncoderSpec encoder;
  std::size_t merge_width = 128;
  std::size_t rnn_hidden = 64;
  std::size_t rnn_layers = 2;
};

/// Frame-level and clip-level posteriors.
struct PredictionPair {
  ag::Var strong;  // [N, T_out, C]
  ag::Var weak;    // [N, C]
  double frame_hop = 0.064;
};

/// Scalar input standardization, fitted on training clips.
struct InputStats {
  double cnn_mean = 0.0, cnn_std = 1.0;
  double enc_mean = 0.0, enc_std = 1.0;
};

class SedModel {
 public:
  SedModel(const ModelSpec& spec, const FeatureConfig& features, std::uint64_t seed);
  // Copies would share parameter storage; use copy_from on a fresh model.
  SedModel(const SedModel&) = delete;
  SedModel& operator=(const SedModel&) = delete;

  const ModelSpec& spec() const { return spec_; }
  const FeatureConfig& features() const { return features_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  const Param& param(const std::string& name) const;
  std::size_t parameter_count() const;

  InputStats& stats() { return stats_; }
  const InputStats& stats() const { return stats_; }

  /// Frozen encoder parameters never require grad and the encoder runs
  /// without recording a graph.
  void set_encoder_frozen(bool frozen);
  bool encoder_frozen() const { return encoder_frozen_; }

  /// CNN-branch log-mel [N, T, F] -> [N, floor(T / time stride), D_cnn].
  ag::Var cnn_forward(const Tensor& cnn_mel) const;
  /// Encoder-branch log-mel [N, T, F] -> [N, T_selfsl, width]; patch-wise
  /// output averages the frequency patches of each time column.
  ag::Var encoder_forward(const Tensor& enc_mel) const;
  /// Per-token encoder output [N, tokens, width] before patch averaging.
  ag::Var encoder_token_states(const Tensor& enc_mel) const;
  /// Alignment, merge, recurrent layers and both heads.
  PredictionPair heads_forward(const ag::Var& cnn_seq, const ag::Var& enc_seq) const;
  PredictionPair forward(const Tensor& cnn_mel, const Tensor& enc_mel) const;

  std::size_t cnn_time_stride() const;
  std::size_t cnn_output_frames(std::size_t input_frames) const;
  std::size_t cnn_width(std::size_t n_mels) const;
  double output_frame_hop() const;

  /// Copies every parameter value and the input statistics from `other`.
  void copy_from(const SedModel& other);

 private:
  ag::Var add_param(const std::string& name, Shape shape, ParamGroup group, int block);
  const ag::Var& p(const std::string& name) const;
  ag::Var encoder_tokens_var(const Tensor& enc_mel) const;
  ag::Var transformer(ag::Var x) const;

  ModelSpec spec_;
  FeatureConfig features_;
  InputStats stats_;
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
  bool encoder_frozen_ = false;
  Rng init_rng_;
};

/// Window-length-varying mean pooling along time (see ag::adaptive_windows).
ag::Var adaptive_pool_align(const ag::Var& seq, std::size_t target_len);

/// Sinusoidal position table [positions, width].
Tensor sinusoidal_positions(std::size_t positions, std::size_t width);

struct EmbeddingRow {
  std::string clip_id;
  std::string context;  // classes active at the sampled frame, or "none"
  std::size_t frame = 0;
  std::vector<double> values;
};

/// One uniformly drawn aligned encoder frame per clip.
std::vector<EmbeddingRow> export_frame_embeddings(const SedModel& model, const std::vector<AnnotatedClip>& clips,
                                                  const std::vector<std::string>& class_names, Rng& rng);
void write_embeddings_tsv(const std::vector<EmbeddingRow>& rows, const std::string& path);

/// Fits InputStats on the given clips' log-mels.
InputStats fit_input_stats(const std::vector<AnnotatedClip>& clips, const FeatureConfig& features);

}  // namespace sedtune
