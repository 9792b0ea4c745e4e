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
#include <set>

#include "align_oracle.hpp"
#include "gradcheck.hpp"
#include "sedtune/error.hpp"
#include "sedtune/model.hpp"
#include "sedtune/ops.hpp"
#include "sedtune/semisup.hpp"

namespace sedtune {
namespace {

using ag::Var;

Tensor random_tensor(Shape s, std::uint64_t seed, double sd = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(s));
  for (auto& v : t.values()) v = normal(rng, 0.0, sd);
  return t;
}

ModelSpec small_spec(EncoderKind kind) {
  ModelSpec s;
  s.cnn.channels = {4, 4};
  s.cnn.time_pool = {2, 2};
  s.cnn.freq_pool = {4, 4};
  s.encoder.kind = kind;
  s.encoder.width = 16;
  s.encoder.n_heads = 2;
  s.encoder.n_blocks = 1;
  s.merge_width = 8;
  s.rnn_hidden = 6;
  s.rnn_layers = 1;
  return s;
}

TEST(Model, DefaultCnnProducesStrideFourFrames) {
  SedModel m(ModelSpec{}, FeatureConfig{}, 1);
  EXPECT_EQ(m.cnn_time_stride(), 4u);
  EXPECT_EQ(m.cnn_output_frames(618), 154u);
  EXPECT_EQ(m.cnn_output_frames(617), 154u);
  EXPECT_DOUBLE_EQ(m.output_frame_hop(), 0.064);
  ag::NoGradGuard ng;
  Var y = m.cnn_forward(random_tensor({1, 618, 128}, 2));
  EXPECT_EQ(y.shape(), (Shape{1, 154, m.cnn_width(128)}));
  EXPECT_EQ(m.cnn_width(128), 64u);
}

TEST(Model, EncoderSequenceLengths) {
  ag::NoGradGuard ng;
  const Tensor mel = random_tensor({1, 1000, 128}, 3);
  ModelSpec fs = small_spec(EncoderKind::FrameWise), ps = small_spec(EncoderKind::PatchWise);
  SedModel f(fs, {}, 1), p(ps, {}, 1);
  EXPECT_EQ(f.encoder_forward(mel).shape(), (Shape{1, 250, 16}));
  EXPECT_EQ(p.encoder_token_states(mel).shape(), (Shape{1, 496, 16}));
  EXPECT_EQ(p.encoder_forward(mel).shape(), (Shape{1, 62, 16}));
  EXPECT_NEAR(fs.encoder.token_resolution({}), 0.040, 1e-12);
  EXPECT_NEAR(ps.encoder.token_resolution({}), 0.160, 1e-12);
}

TEST(Model, PatchOutputAveragesFrequencyPatches) {
  ag::NoGradGuard ng;
  SedModel p(small_spec(EncoderKind::PatchWise), {}, 4);
  const Tensor mel = random_tensor({2, 64, 128}, 5);
  const Tensor tok = p.encoder_token_states(mel).value();
  const Tensor out = p.encoder_forward(mel).value();
  ASSERT_EQ(out.shape(), (Shape{2, 4, 16}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t d = 0; d < 16; ++d) {
        double s = 0;
        for (std::size_t f = 0; f < 8; ++f) s += tok[(n * 32 + c * 8 + f) * 16 + d];
        EXPECT_NEAR(out[(n * 4 + c) * 16 + d], s / 8, 1e-12);
      }
}

TEST(Alignment, MatchesOracleExhaustively) {
  for (std::size_t T = 1; T <= 64; ++T)
    for (std::size_t Tp = 1; Tp <= 64; ++Tp) {
      Tensor x = random_tensor({1, T, 1}, T * 100 + Tp);
      std::vector<double> xs(x.values().begin(), x.values().end());
      const auto want = oracle_pool(xs, Tp);
      const Tensor got = adaptive_pool_align(Var(x), Tp).value();
      ASSERT_EQ(got.shape(), (Shape{1, Tp, 1}));
      for (std::size_t i = 0; i < Tp; ++i) ASSERT_EQ(got[i], want[i]) << T << "->" << Tp << " @" << i;
    }
}

TEST(Alignment, EncoderToCnnWindows) {
  const auto w = ag::adaptive_windows(250, 154);
  ASSERT_EQ(w.size(), 154u);
  std::vector<int> covered(250, 0);
  for (auto [b, e] : w) {
    const std::size_t len = e - b;
    EXPECT_TRUE(len == 2 || len == 3) << len;
    for (std::size_t t = b; t < e; ++t) covered[t] = 1;
  }
  for (int c : covered) EXPECT_EQ(c, 1);
  EXPECT_EQ(w.front().first, 0u);
  EXPECT_EQ(w.back().second, 250u);
  // Patch-wise: 62 columns stretched to 154 frames.
  for (auto [b, e] : ag::adaptive_windows(62, 154)) EXPECT_TRUE(e - b == 1 || e - b == 2);
}

TEST(Alignment, IntegerRatioEqualsFixedPooling) {
  Tensor x = random_tensor({2, 48, 3}, 9);
  const Tensor a = adaptive_pool_align(Var(x), 12).value();
  const Tensor b = ag::group_mean(Var(x), 4).value();
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-14);
  EXPECT_THROW(adaptive_pool_align(Var(x), 0), ContractError);
}

TEST(Model, OutputsAreProbabilities) {
  for (auto kind : {EncoderKind::FrameWise, EncoderKind::PatchWise}) {
    SedModel m(small_spec(kind), {}, 7);
    ag::NoGradGuard ng;
    auto y = m.forward(random_tensor({3, 40, 128}, 1, 3.0), random_tensor({3, 128, 128}, 2, 3.0));
    EXPECT_EQ(y.strong.shape(), (Shape{3, 10, 3}));
    EXPECT_EQ(y.weak.shape(), (Shape{3, 3}));
    for (double v : y.strong.value().values()) EXPECT_TRUE(v >= 0 && v <= 1);
    for (double v : y.weak.value().values()) EXPECT_TRUE(v >= 0 && v <= 1);
  }
}

TEST(Model, ConstantFramePosteriorGivesSameClipPosterior) {
  SedModel m(small_spec(EncoderKind::FrameWise), {}, 7);
  m.params()[m.params().size() - 4].var.mutable_value().fill(0.0);  // head.strong.w
  auto& b = m.params()[m.params().size() - 3].var.mutable_value();  // head.strong.b
  b[0] = -1.0, b[1] = 0.0, b[2] = 2.0;
  ag::NoGradGuard ng;
  auto y = m.forward(random_tensor({2, 40, 128}, 1), random_tensor({2, 64, 128}, 2));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c) {
      const double p = 1.0 / (1.0 + std::exp(-b[c]));
      EXPECT_NEAR(y.weak.value()[n * 3 + c], p, 1e-12);
      EXPECT_NEAR(y.strong.value()[(n * 10 + 4) * 3 + c], p, 1e-12);
    }
}

TEST(Model, FrozenEncoderReceivesNoGradient) {
  SedModel m(small_spec(EncoderKind::FrameWise), {}, 7);
  m.set_encoder_frozen(true);
  for (const auto& p : m.params()) {
    const bool enc = p.group == ParamGroup::EncoderEmbed || p.group == ParamGroup::EncoderBlock;
    EXPECT_EQ(p.var.requires_grad(), !enc) << p.name;
  }
  auto y = m.forward(random_tensor({2, 40, 128}, 1), random_tensor({2, 64, 128}, 2));
  ag::backward(ag::add(ag::mse_mean(y.strong, Tensor(y.strong.shape(), 0.0)), ag::mse_mean(y.weak, Tensor(y.weak.shape(), 0.0))));
  for (const auto& p : m.params()) {
    const bool enc = p.group == ParamGroup::EncoderEmbed || p.group == ParamGroup::EncoderBlock;
    if (enc) EXPECT_FALSE(p.var.has_grad()) << p.name;
    else EXPECT_TRUE(p.var.has_grad()) << p.name;
  }
  m.set_encoder_frozen(false);
  EXPECT_TRUE(m.param("encoder.embed.w").var.requires_grad());
}

TEST(Model, ParameterGroupsAndBlocks) {
  ModelSpec s = small_spec(EncoderKind::PatchWise);
  s.encoder.n_blocks = 3;
  SedModel m(s, {}, 1);
  EXPECT_EQ(m.param("encoder.embed.w").group, ParamGroup::EncoderEmbed);
  EXPECT_EQ(m.param("encoder.freq_embed").group, ParamGroup::EncoderEmbed);
  EXPECT_EQ(m.param("encoder.block1.mlp.fc1.w").block, 1);
  EXPECT_EQ(m.param("encoder.final_ln.g").block, 2);
  EXPECT_EQ(m.param("merge.w").group, ParamGroup::Rnn);
  EXPECT_EQ(m.param("cnn.0.conv.w").group, ParamGroup::Cnn);
  std::set<std::string> names;
  for (const auto& p : m.params()) EXPECT_TRUE(names.insert(p.name).second);
  EXPECT_THROW(m.param("nope"), ContractError);
}

TEST(Model, RejectsBadSpecs) {
  ModelSpec s = small_spec(EncoderKind::FrameWise);
  s.cnn.activation = "tanh";
  EXPECT_THROW(SedModel(s, {}, 1), ConfigError);
  s = small_spec(EncoderKind::FrameWise);
  s.encoder.n_heads = 3;
  EXPECT_THROW(SedModel(s, {}, 1), ConfigError);
  s = small_spec(EncoderKind::FrameWise);
  s.cnn.freq_pool = {16, 16};
  EXPECT_THROW(SedModel(s, {}, 1), ConfigError);
}

TEST(Model, CopyFromReproducesOutputs) {
  SedModel a(small_spec(EncoderKind::FrameWise), {}, 1), b(small_spec(EncoderKind::FrameWise), {}, 2);
  a.stats().cnn_mean = -3.0;
  b.copy_from(a);
  ag::NoGradGuard ng;
  const Tensor c = random_tensor({1, 40, 128}, 1), e = random_tensor({1, 64, 128}, 2);
  EXPECT_EQ(a.forward(c, e).strong.value(), b.forward(c, e).strong.value());
  EXPECT_EQ(b.stats().cnn_mean, -3.0);
}

// Whole-network gradient check on the composite objective.
TEST(Model, MiniatureGradientCheck) {
  FeatureConfig fc;
  fc.n_mels = 32;
  ModelSpec s;
  s.n_classes = 2;
  s.cnn.channels = {2, 2};
  s.cnn.time_pool = {2, 2};
  s.cnn.freq_pool = {4, 4};
  s.cnn.activation = "gelu";
  s.encoder.width = 8;
  s.encoder.n_heads = 2;
  s.encoder.n_blocks = 1;
  s.encoder.mlp_ratio = 2;
  s.merge_width = 6;
  s.rnn_hidden = 3;
  s.rnn_layers = 1;
  for (auto kind : {EncoderKind::FrameWise, EncoderKind::PatchWise}) {
    s.encoder.kind = kind;
    SedModel student(s, fc, 11), teacher(s, fc, 12);
    const Tensor cnn = random_tensor({3, 40, 32}, 1), enc = random_tensor({3, 64, 32}, 2);
    CompositeBatch batch;
    batch.kind = {Supervision::Strong, Supervision::Weak, Supervision::Unlabeled};
    batch.clip_index = {0, 1, 2};
    batch.strong_labels = Tensor({3, 10, 2});
    for (std::size_t t = 3; t < 7; ++t) batch.strong_labels[t * 2 + 1] = 1.0;
    batch.weak_labels = Tensor({3, 2});
    batch.weak_labels[2] = 1.0;
    PredictionValues tv;
    {
      ag::NoGradGuard ng;
      tv = values_of(teacher.forward(cnn, enc));
    }
    AugmentationDraw draw;
    draw.use_mixup = true;
    draw.mix_lambda = 0.7;
    draw.permutation = {0, 1, 2};
    LossOptions opt;
    opt.ict_enabled = true;
    auto fn = [&] { return composite_loss(student.forward(cnn, enc), tv, batch, draw, 2.0, 3.0, opt).graph; };
    std::vector<Var> params;
    std::size_t count = 0;
    for (auto& p : student.params()) {
      params.push_back(p.var);
      count += p.var.value().size();
    }
    ASSERT_GE(count, 100u);
    // Absolute floor sits above the finite-difference round-off of a loss of order one.
    auto r = testing::gradcheck(fn, params, 300, 5, 1e-5, 1e-6);
    EXPECT_EQ(r.checked, 300u);
    EXPECT_LT(r.max_rel_error, 1e-3) << to_string(kind);
  }
}

TEST(Embeddings, ExportOneRowPerClip) {
  SedModel m(small_spec(EncoderKind::FrameWise), {}, 3);
  std::vector<AnnotatedClip> clips(3);
  Rng rng(1);
  for (std::size_t i = 0; i < 3; ++i) {
    clips[i].id = "c" + std::to_string(i);
    clips[i].samples.resize(16000);
    for (auto& v : clips[i].samples) v = static_cast<float>(normal(rng, 0.0, 0.05));
    clips[i].duration = 1.0;
  }
  clips[0].kind = Supervision::Strong;
  clips[0].events = {{2, 0.0, 1.0}};
  clips[1].kind = Supervision::Weak;
  clips[1].tags = {0, 1};
  clips[2].kind = Supervision::Unlabeled;
  Rng pick(4);
  auto rows = export_frame_embeddings(m, clips, {"a", "b", "c"}, pick);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].context, "c");
  EXPECT_EQ(rows[1].context, "a,b");
  EXPECT_EQ(rows[2].context, "unlabeled");
  for (const auto& r : rows) {
    EXPECT_EQ(r.values.size(), 16u);
    EXPECT_LT(r.frame, m.cnn_output_frames(LogMelExtractor({}, Branch::Cnn).frame_count(16000)));
  }
}

}  // namespace
}  // namespace sedtune
