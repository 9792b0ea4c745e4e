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

// Loss-weight ramps, learning-rate schedules, layer-wise rate decay and the
// per-stage hyperparameter defaults.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "sedtune/features.hpp"

namespace sedtune {

/// w_max * exp(-5 (1 - min(epoch / r_eps, 1))^2).
double ramp_weight(double epoch, double r_eps, double w_max);

/// Exponential warm-up to alpha over `warmup` steps, then cosine decay to
/// alpha / 10 at `total` (or constant alpha when `decay` is false).
double lr_schedule(std::size_t step, std::size_t total, std::size_t warmup, double alpha, bool decay = true);

/// Block i (0 = nearest the input) gets alpha * factor^(n_blocks - 1 - i).
std::vector<double> llrd_rates(double alpha, std::size_t n_blocks, double factor = 0.5);
/// Rate of the token embedding: alpha * factor^n_blocks.
double llrd_embedding_rate(double alpha, std::size_t n_blocks, double factor = 0.5);

enum class Stage { Frozen, Finetune };
const char* to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct StageConfig {
  double alpha_cnn = 1e-3;
  double alpha_rnn = 1e-3;
  std::optional<double> alpha_encoder;  // absent while the encoder is frozen
  double r_mt_max = 2.0;
  std::optional<double> r_ict_max;
  double r_eps = 50.0;
  std::size_t total_epochs = 100;
  std::optional<double> llrd_factor;
  bool encoder_frozen = true;
  /// Cosine decay to alpha/10 after warm-up; otherwise warm-up then constant.
  bool cosine_decay = false;
  std::size_t patience = 20;  // epochs without improvement; 0 disables early stopping

  void validate() const;
};

StageConfig stage_config_defaults(Stage stage, EncoderKind kind);

}  // namespace sedtune
