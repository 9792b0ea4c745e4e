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

#include "sedtune/schedules.hpp"

#include <algorithm>
#include <cmath>

#include "sedtune/error.hpp"

namespace sedtune {

double ramp_weight(double epoch, double r_eps, double w_max) {
  if (!(r_eps > 0.0)) throw ConfigError("ramp_weight: r_eps must be positive");
  if (!(w_max >= 0.0)) throw ConfigError("ramp_weight: w_max must be >= 0");
  const double x = std::min(std::max(epoch, 0.0) / r_eps, 1.0);
  const double d = 1.0 - x;
  return w_max * std::exp(-5.0 * d * d);
}

double lr_schedule(std::size_t step, std::size_t total, std::size_t warmup, double alpha, bool decay) {
  if (decay && total <= warmup) throw ConfigError("lr_schedule: total steps must exceed warm-up steps");
  if (step > total) throw ContractError("lr_schedule: step beyond the schedule");
  if (step <= warmup) {
    if (warmup == 0) return alpha;
    const double d = 1.0 - static_cast<double>(step) / static_cast<double>(warmup);
    return alpha * std::exp(-5.0 * d * d);
  }
  if (!decay) return alpha;
  const double floor = alpha / 10.0;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return floor + (alpha - floor) * (1.0 + std::cos(M_PI * progress)) / 2.0;
}

std::vector<double> llrd_rates(double alpha, std::size_t n_blocks, double factor) {
  if (n_blocks == 0) throw ConfigError("llrd_rates: need at least one block");
  if (!(factor > 0.0 && factor <= 1.0)) throw ConfigError("llrd_rates: factor must lie in (0, 1]");
  std::vector<double> r(n_blocks);
  for (std::size_t i = 0; i < n_blocks; ++i) r[i] = alpha * std::pow(factor, static_cast<double>(n_blocks - 1 - i));
  return r;
}

double llrd_embedding_rate(double alpha, std::size_t n_blocks, double factor) {
  return alpha * std::pow(factor, static_cast<double>(n_blocks));
}

const char* to_string(Stage s) { return s == Stage::Frozen ? "frozen" : "finetune"; }

Stage stage_from_string(const std::string& s) {
  if (s == "frozen") return Stage::Frozen;
  if (s == "finetune") return Stage::Finetune;
  throw ConfigError("stage must be 'frozen' or 'finetune', got '" + s + "'");
}

void StageConfig::validate() const {
  if (!(alpha_cnn > 0 && alpha_rnn > 0)) throw ConfigError("stage: learning rates must be positive");
  if (!encoder_frozen && !(alpha_encoder && *alpha_encoder > 0))
    throw ConfigError("stage: a trainable encoder needs alpha_encoder > 0");
  if (!(r_mt_max >= 0) || (r_ict_max && !(*r_ict_max >= 0))) throw ConfigError("stage: ramp maxima must be >= 0");
  if (!(r_eps > 0)) throw ConfigError("stage: r_eps must be positive");
  if (total_epochs == 0 || r_eps > static_cast<double>(total_epochs))
    throw ConfigError("stage: r_eps must not exceed total_epochs");
  if (llrd_factor && !(*llrd_factor > 0 && *llrd_factor <= 1)) throw ConfigError("stage: llrd_factor must lie in (0, 1]");
}

StageConfig stage_config_defaults(Stage stage, EncoderKind kind) {
  StageConfig c;
  if (stage == Stage::Frozen) {
    c.alpha_cnn = 1e-3;
    c.alpha_rnn = 1e-3;
    c.r_mt_max = 2.0;
    c.r_eps = 50.0;
    c.total_epochs = 100;
    c.patience = 20;
    c.encoder_frozen = true;
    c.cosine_decay = false;
    return c;
  }
  c.encoder_frozen = false;
  c.cosine_decay = true;
  c.r_eps = 10.0;
  c.total_epochs = 250;
  c.patience = 0;
  if (kind == EncoderKind::FrameWise) {
    c.alpha_cnn = 2e-4;
    c.alpha_rnn = 2e-3;
    c.alpha_encoder = 2e-4;
    c.r_mt_max = 70.0;
    c.r_ict_max = 17.5;
    c.llrd_factor = 0.5;
  } else {
    c.alpha_cnn = 5e-4;
    c.alpha_rnn = 5e-4;
    c.alpha_encoder = 5e-6;
    c.r_mt_max = 140.0;
    c.r_ict_max = 35.0;
  }
  return c;
}

}  // namespace sedtune
