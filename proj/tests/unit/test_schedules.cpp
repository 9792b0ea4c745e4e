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

#include <gtest/gtest.h>

#include <cmath>

#include "sedtune/error.hpp"
#include "sedtune/schedules.hpp"

namespace sedtune {
namespace {

TEST(Ramp, Endpoints) {
  EXPECT_NEAR(ramp_weight(0, 10, 1.0), std::exp(-5.0), 1e-15);
  EXPECT_EQ(ramp_weight(10, 10, 2.0), 2.0);
  EXPECT_EQ(ramp_weight(40, 10, 2.0), 2.0);
  EXPECT_NEAR(ramp_weight(5, 10, 1.0), std::exp(-1.25), 1e-15);
  double prev = 0;
  for (int e = 0; e <= 50; ++e) {
    const double w = ramp_weight(e, 50, 70.0);
    EXPECT_GE(w, prev);
    prev = w;
  }
  EXPECT_THROW(ramp_weight(1, 0, 1.0), ConfigError);
}

TEST(LearningRate, WarmupAndCosine) {
  const double a = 2e-4;
  EXPECT_NEAR(lr_schedule(0, 1000, 100, a), a * std::exp(-5.0), 1e-18);
  EXPECT_EQ(lr_schedule(100, 1000, 100, a), a);
  EXPECT_NEAR(lr_schedule(1000, 1000, 100, a), a / 10, 1e-18);
  EXPECT_NEAR(lr_schedule(550, 1000, 100, a), 0.55 * a, 1e-18);
  for (std::size_t s = 101; s <= 1000; ++s) EXPECT_LE(lr_schedule(s, 1000, 100, a), lr_schedule(s - 1, 1000, 100, a));
  EXPECT_EQ(lr_schedule(700, 1000, 100, a, false), a);
  EXPECT_THROW(lr_schedule(0, 100, 100, a), ConfigError);
}

TEST(LearningRate, LayerwiseDecay) {
  auto r = llrd_rates(2e-4, 3, 0.5);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_DOUBLE_EQ(r[0], 5e-5);
  EXPECT_DOUBLE_EQ(r[1], 1e-4);
  EXPECT_DOUBLE_EQ(r[2], 2e-4);
  EXPECT_DOUBLE_EQ(llrd_embedding_rate(2e-4, 3, 0.5), 2.5e-5);
  auto flat = llrd_rates(1e-3, 4, 1.0);
  for (double v : flat) EXPECT_EQ(v, 1e-3);
  EXPECT_THROW(llrd_rates(1e-3, 2, 1.5), ConfigError);
}

TEST(StageDefaults, FrozenAndFinetune) {
  auto f = stage_config_defaults(Stage::Frozen, EncoderKind::FrameWise);
  EXPECT_EQ(f.alpha_cnn, 1e-3);
  EXPECT_EQ(f.alpha_rnn, 1e-3);
  EXPECT_FALSE(f.alpha_encoder);
  EXPECT_EQ(f.r_mt_max, 2.0);
  EXPECT_FALSE(f.r_ict_max);
  EXPECT_EQ(f.r_eps, 50.0);
  EXPECT_TRUE(f.encoder_frozen);
  EXPECT_NO_THROW(f.validate());

  auto a = stage_config_defaults(Stage::Finetune, EncoderKind::FrameWise);
  EXPECT_EQ(a.alpha_cnn, 2e-4);
  EXPECT_EQ(a.alpha_rnn, 2e-3);
  EXPECT_EQ(*a.alpha_encoder, 2e-4);
  EXPECT_EQ(a.r_mt_max, 70.0);
  EXPECT_EQ(*a.r_ict_max, 17.5);
  EXPECT_EQ(a.r_eps, 10.0);
  EXPECT_EQ(*a.llrd_factor, 0.5);
  EXPECT_EQ(a.total_epochs, 250u);
  EXPECT_NO_THROW(a.validate());

  auto p = stage_config_defaults(Stage::Finetune, EncoderKind::PatchWise);
  EXPECT_EQ(p.alpha_cnn, 5e-4);
  EXPECT_EQ(p.alpha_rnn, 5e-4);
  EXPECT_EQ(*p.alpha_encoder, 5e-6);
  EXPECT_EQ(p.r_mt_max, 140.0);
  EXPECT_EQ(*p.r_ict_max, 35.0);
  EXPECT_FALSE(p.llrd_factor);
  EXPECT_NO_THROW(p.validate());

  EXPECT_EQ(stage_from_string("finetune"), Stage::Finetune);
  EXPECT_THROW(stage_from_string("warm"), ConfigError);
  a.r_eps = 1000;
  EXPECT_THROW(a.validate(), ConfigError);
}

}  // namespace
}  // namespace sedtune
