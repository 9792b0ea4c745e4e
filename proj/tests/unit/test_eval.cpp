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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "sedtune/error.hpp"
#include "sedtune/eval.hpp"
#include "sedtune/rng.hpp"
#include "psds_oracle.hpp"
#include "temp_dir.hpp"

namespace sedtune {
namespace {

PsdsParams with_thresholds(PsdsParams p, std::size_t n) {
  p.thresholds = default_thresholds(n);
  return p;
}

TEST(Psds, FastMatchesBruteForceOnRandomInstances) {
  auto [p1, p2] = psds_presets();
  PsdsParams p3 = p2;
  p3.alpha_st = 0.0;
  p3.e_max = 400.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto in = random_instance(seed, 6);
    for (const auto& p : {p1, p2, p3}) {
      auto q = with_thresholds(p, 6);
      const double fast = psds(in.dets, in.truth, in.total, in.C, q).score;
      const double slow = brute_psds(in.dets, in.truth, in.total, in.C, q);
      ASSERT_NEAR(fast, slow, 1e-9) << "seed " << seed;
      EXPECT_GE(fast, 0.0);
      EXPECT_LE(fast, 1.0);
    }
  }
}

TEST(Psds, PerfectAndEmptyDetections) {
  auto in = random_instance(3, 50);
  auto [p1, p2] = psds_presets();
  std::vector<std::vector<TimedEvent>> perfect(50, in.truth), empty(50);
  EXPECT_DOUBLE_EQ(psds(perfect, in.truth, in.total, in.C, p1).score, 1.0);
  EXPECT_DOUBLE_EQ(psds(perfect, in.truth, in.total, in.C, p2).score, 1.0);
  EXPECT_EQ(psds(empty, in.truth, in.total, in.C, p1).score, 0.0);
  EXPECT_EQ(psds(empty, in.truth, in.total, in.C, p2).score, 0.0);
  EXPECT_THROW(psds(empty, {}, in.total, in.C, p1), ValidationError);
  EXPECT_THROW(psds({}, in.truth, in.total, in.C, p1), ContractError);
}

TEST(Psds, HalfOverlappingDetection) {
  std::vector<TimedEvent> truth{{"a", 0, 0.0, 4.0}};
  std::vector<std::vector<TimedEvent>> det{{{"a", 0, 2.0, 6.0}}};
  auto [p1, p2] = psds_presets();
  p1.thresholds = p2.thresholds = {0.5};
  // Intersection is half of both events: fails 0.7 criteria, passes 0.1.
  EXPECT_EQ(psds(det, truth, 10.0, 1, p1).score, 0.0);
  EXPECT_EQ(psds(det, truth, 10.0, 1, p2).score, 1.0);
  p1.dtc = p1.gtc = 0.5;
  EXPECT_EQ(psds(det, truth, 10.0, 1, p1).score, 1.0);
  p1.gtc = 0.51;
  EXPECT_EQ(psds(det, truth, 10.0, 1, p1).score, 0.0);
  EXPECT_EQ(brute_psds(det, truth, 10.0, 1, p1), 0.0);
}

TEST(Psds, EmaxChangesNormalization) {
  // 72 s of audio: one false positive is 50 per hour.
  std::vector<TimedEvent> truth{{"a", 0, 1.0, 2.0}, {"a", 0, 5.0, 6.0}};
  std::vector<std::vector<TimedEvent>> det{{{"a", 0, 1.0, 2.0}, {"a", 0, 5.0, 6.0}, {"a", 0, 8.0, 9.0}},
                                           {{"a", 0, 1.0, 2.0}}};
  PsdsParams p;
  p.thresholds = {0.3, 0.6};
  auto r = psds(det, truth, 72.0, 1, p);
  EXPECT_NEAR(r.classes[0].efpr[0], 50.0, 1e-12);
  EXPECT_NEAR(r.score, (0.5 * 50 + 1.0 * 50) / 100.0, 1e-12);
  p.e_max = 50.0;
  EXPECT_NEAR(psds(det, truth, 72.0, 1, p).score, 0.5, 1e-12);
}

TEST(Psds, CrossTriggerRate) {
  std::vector<TimedEvent> truth{{"a", 0, 0.0, 3.6}, {"a", 1, 5.0, 6.0}};
  std::vector<std::vector<TimedEvent>> det{{{"a", 1, 0.5, 1.5}}};
  auto p = psds_presets().second;
  p.thresholds = {0.5};
  auto r = psds(det, truth, 36.0, 2, p);
  // Class-1 false positive lying on class-0 truth: one cross-trigger over 0.001 h.
  EXPECT_NEAR(r.classes[1].fpr[0], 100.0, 1e-9);
  EXPECT_NEAR(r.classes[1].ctr[0], 1000.0, 1e-9);
  EXPECT_NEAR(r.classes[1].efpr[0], 600.0, 1e-9);
  EXPECT_EQ(r.classes[0].ctr[0], 0.0);
}

TEST(Psds, InvariantToOrdering) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto in = random_instance(seed + 100, 5);
    auto p = with_thresholds(psds_presets().second, 5);
    const double a = psds(in.dets, in.truth, in.total, in.C, p).score;
    std::mt19937_64 g(seed);
    std::shuffle(in.truth.begin(), in.truth.end(), g);
    for (auto& d : in.dets) std::shuffle(d.begin(), d.end(), g);
    EXPECT_NEAR(psds(in.dets, in.truth, in.total, in.C, p).score, a, 1e-12);
  }
}

TEST(Psds, AddingTruePositiveNeverHurts) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto in = random_instance(seed + 200, 5);
    auto p = with_thresholds(psds_presets().first, 5);
    p.alpha_st = 0.0;
    const double before = psds(in.dets, in.truth, in.total, in.C, p).score;
    in.dets[seed % 5].push_back(in.truth[seed % in.truth.size()]);
    EXPECT_GE(psds(in.dets, in.truth, in.total, in.C, p).score, before - 1e-12);
  }
}

TEST(Psds, PresetsAndValidation) {
  auto [p1, p2] = psds_presets();
  EXPECT_GT(p1.dtc, p2.dtc);
  EXPECT_FALSE(p1.cttc);
  EXPECT_EQ(*p2.cttc, 0.3);
  EXPECT_EQ(p2.alpha_ct, 0.5);
  EXPECT_EQ(p1.thresholds.size(), 50u);
  EXPECT_DOUBLE_EQ(p1.thresholds.front(), 0.01);
  EXPECT_DOUBLE_EQ(p1.thresholds.back(), 0.99);
  p1.thresholds = {0.5, 0.4};
  EXPECT_THROW(p1.validate(), ConfigError);
  p2.e_max = 0;
  EXPECT_THROW(p2.validate(), ConfigError);
}

TEST(Decode, MedianFilter) {
  std::vector<double> x{0, 0, 1, 0, 0, 1, 1, 1, 0};
  EXPECT_EQ(median_filter(x, 1), x);
  EXPECT_EQ(median_filter(x, 3), (std::vector<double>{0, 0, 0, 0, 0, 1, 1, 1, 0}));
  EXPECT_EQ(median_filter({1, 0, 0}, 3), (std::vector<double>{1, 0, 0}));
  EXPECT_THROW(median_filter(x, 4), ContractError);
}

TEST(Decode, BlocksBecomeEvents) {
  Tensor s({30, 2});
  for (std::size_t t = 5; t < 15; ++t) s[t * 2 + 1] = 0.9;
  s[20 * 2] = 0.9;  // isolated frame
  auto ev = decode_events(s, 0.5, {3}, 0.064);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].class_id, 1);
  EXPECT_NEAR(ev[0].offset - ev[0].onset, 0.64, 1e-12);
  EXPECT_NEAR(ev[0].onset, 0.32, 1e-12);
  EXPECT_EQ(decode_events(s, 0.5, {1}, 0.064).size(), 2u);
  EXPECT_TRUE(decode_events(Tensor({30, 2}), 0.5, {7}, 0.064).empty());
  EXPECT_THROW(decode_events(s, 0.5, {2}, 0.064), ConfigError);
  EXPECT_THROW(decode_events(s, 0.5, {3, 3, 3}, 0.064), ConfigError);
}

TEST(Decode, UnitMedianIsPlainThresholding) {
  Rng rng(1);
  Tensor s({40, 3});
  for (auto& v : s.values()) v = uniform(rng, 0, 1);
  for (double th : {0.2, 0.5, 0.8}) {
    auto ev = decode_events(s, th, {1}, 0.1);
    Tensor back({40, 3});
    for (const auto& e : ev)
      for (auto t = std::lround(e.onset / 0.1); t < std::lround(e.offset / 0.1); ++t) back[t * 3 + e.class_id] = 1;
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(back[i], s[i] > th ? 1.0 : 0.0);
  }
}

TEST(EventF1, Examples) {
  std::vector<TimedEvent> truth{{"a", 0, 1.0, 2.0}, {"a", 1, 3.0, 5.0}};
  EXPECT_EQ(event_f1(truth, truth).f1, 1.0);
  EXPECT_EQ(event_f1({}, truth).f1, 0.0);
  EXPECT_NEAR(event_f1({truth[0]}, truth).f1, 2.0 / 3.0, 1e-12);
  // Onset 0.19 s late still matches; 0.21 s does not.
  EXPECT_EQ(event_f1({{"a", 0, 1.19, 2.0}}, {truth[0]}).tp, 1u);
  EXPECT_EQ(event_f1({{"a", 0, 1.21, 2.0}}, {truth[0]}).tp, 0u);
  // Offset tolerance grows with the reference length.
  EXPECT_EQ(event_f1({{"a", 1, 3.0, 5.35}}, {truth[1]}).tp, 1u);
  EXPECT_EQ(event_f1({{"a", 1, 3.0, 5.45}}, {truth[1]}).tp, 0u);
  // Wrong class or file never matches; each reference matches once.
  EXPECT_EQ(event_f1({{"b", 0, 1.0, 2.0}}, {truth[0]}).tp, 0u);
  auto r = event_f1({truth[0], truth[0]}, {truth[0]});
  EXPECT_EQ(r.tp, 1u);
  EXPECT_EQ(r.fp, 1u);
  EXPECT_EQ(event_f1({}, {}).f1, 1.0);
}

TEST(EvalIo, TsvRoundTripAndErrors) {
  testing::TempDir dir;
  const std::vector<std::string> names{"x", "y"};
  std::vector<TimedEvent> ev{{"a.wav", 0, 0.5, 1.25}, {"b.wav", 1, 2.0, 3.5}};
  write_events_tsv(ev, names, (dir.path() / "d.tsv").string());
  EXPECT_EQ(read_events_tsv((dir.path() / "d.tsv").string(), names), ev);
  {
    std::ofstream f(dir.path() / "bad.tsv");
    f << "filename\tonset\toffset\tevent_label\na.wav\t1.0\t2.0\tx\na.wav\t1.0\n";
  }
  try {
    read_events_tsv((dir.path() / "bad.tsv").string(), names);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  {
    std::ofstream f(dir.path() / "unk.tsv");
    f << "filename\tonset\toffset\tevent_label\na.wav\t1.0\t2.0\tz\n";
  }
  EXPECT_THROW(read_events_tsv((dir.path() / "unk.tsv").string(), names), ValidationError);
  {
    std::ofstream f(dir.path() / "neg.tsv");
    f << "filename\tonset\toffset\tevent_label\nc.wav\t\t\t\na.wav\t1.0\t2.0\ty\n";
  }
  const auto neg = read_events_tsv((dir.path() / "neg.tsv").string(), names);
  ASSERT_EQ(neg.size(), 1u);
  EXPECT_EQ(neg[0].filename, "a.wav");
}

TEST(EvalReportTest, OraclePosteriorsScoreTwo) {
  const double hop = 0.064;
  std::vector<TimedEvent> truth{{"a", 0, 10 * hop, 40 * hop}, {"a", 1, 30 * hop, 90 * hop}, {"b", 2, 0.0, 20 * hop}};
  std::vector<ClipPosteriors> clips{{"a", Tensor({156, 3}), 10.0}, {"b", Tensor({156, 3}), 10.0}};
  for (const auto& e : truth) {
    auto& s = clips[e.filename == "a" ? 0 : 1].strong;
    for (auto t = std::lround(e.onset / hop); t < std::lround(e.offset / hop); ++t) s[t * 3 + e.class_id] = 1.0;
  }
  auto r = evaluate_posteriors(clips, truth, 3, hop, EvalConfig{});
  EXPECT_DOUBLE_EQ(r.metric(), 2.0);
  EXPECT_EQ(r.f1.f1, 1.0);
  testing::TempDir dir;
  auto [p1, p2] = psds_presets();
  write_report_json(r, {"x", "y", "z"}, p1, p2, (dir.path() / "r.json").string());
  std::ifstream f(dir.path() / "r.json");
  std::string body((std::istreambuf_iterator<char>(f)), {});
  EXPECT_NE(body.find("\"psds1\""), std::string::npos);
  EXPECT_NE(body.find("\"event_f1\""), std::string::npos);
}

}  // namespace
}  // namespace sedtune
