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

#include <benchmark/benchmark.h>

#include <algorithm>

#include "sedtune/eval.hpp"
#include "sedtune/features.hpp"
#include "sedtune/model.hpp"
#include "sedtune/ops.hpp"
#include "sedtune/semisup.hpp"

using namespace sedtune;

namespace {

std::vector<float> noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> x(n);
  for (auto& v : x) v = static_cast<float>(normal(rng, 0.0, 0.1));
  return x;
}

Tensor random_tensor(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(s));
  for (auto& v : t.values()) v = normal(rng, 0.0, 1.0);
  return t;
}

ModelSpec toy_spec() {
  ModelSpec s;
  s.cnn.channels = {8, 16, 32, 32, 32};
  s.cnn.time_pool = {2, 2, 1, 1, 1};
  s.cnn.freq_pool = {2, 2, 2, 2, 2};
  s.encoder.width = 64;
  s.merge_width = 64;
  s.rnn_hidden = 32;
  return s;
}

FeatureConfig toy_features() {
  FeatureConfig f;
  f.n_mels = 64;
  return f;
}

void BM_LogMel(benchmark::State& state) {
  const Branch branch = state.range(0) ? Branch::Encoder : Branch::Cnn;
  LogMelExtractor ex(FeatureConfig{}, branch);
  const auto x = noise(160000, 1);
  for (auto _ : state) benchmark::DoNotOptimize(ex(x).values.data());
  state.SetLabel(branch == Branch::Cnn ? "cnn" : "encoder");
}
BENCHMARK(BM_LogMel)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_AdaptivePool(benchmark::State& state) {
  const ag::Var x(random_tensor({24, 250, 256}, 2));
  for (auto _ : state) benchmark::DoNotOptimize(adaptive_pool_align(x, 154).value().data());
}
BENCHMARK(BM_AdaptivePool)->Unit(benchmark::kMicrosecond);

void BM_ToyForward(benchmark::State& state) {
  const ModelSpec spec = toy_spec();
  const FeatureConfig fc = toy_features();
  SedModel m(spec, fc, 1);
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor cnn = random_tensor({n, 626, 64}, 3), enc = random_tensor({n, 1000, 64}, 4);
  ag::NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(cnn, enc).strong.value().data());
}
BENCHMARK(BM_ToyForward)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_ToyTrainStep(benchmark::State& state) {
  const ModelSpec spec = toy_spec();
  const FeatureConfig fc = toy_features();
  SedModel student(spec, fc, 1);
  const std::size_t n = 8;
  const Tensor cnn = random_tensor({n, 626, 64}, 3), enc = random_tensor({n, 1000, 64}, 4);
  CompositeBatch batch;
  batch.kind.assign(n, Supervision::Unlabeled);
  batch.kind[0] = Supervision::Strong;
  batch.kind[1] = Supervision::Weak;
  batch.clip_index.resize(n);
  const std::size_t T = student.cnn_output_frames(626);
  batch.strong_labels = Tensor({n, T, 3});
  batch.weak_labels = Tensor({n, 3});
  PredictionValues tv;
  {
    ag::NoGradGuard ng;
    tv = values_of(student.forward(cnn, enc));
  }
  AugmentationDraw draw;
  for (auto _ : state) {
    auto L = composite_loss(student.forward(cnn, enc), tv, batch, draw, 1.0, 0.0, {});
    ag::backward(L.graph);
  }
}
BENCHMARK(BM_ToyTrainStep)->Unit(benchmark::kMillisecond);

void BM_Psds(benchmark::State& state) {
  Rng rng(5);
  std::vector<TimedEvent> truth;
  for (int c = 0; c < 100; ++c)
    for (int e = 0; e < 3; ++e) {
      const double on = uniform(rng, 0, 8);
      truth.push_back({"clip" + std::to_string(c), static_cast<int>(uniform_index(rng, 3)), on, on + uniform(rng, 0.3, 2)});
    }
  PsdsParams p = psds_presets().second;
  std::vector<std::vector<TimedEvent>> dets(p.thresholds.size());
  for (auto& d : dets)
    for (const auto& g : truth)
      if (coin(rng, 0.8)) {
        const double on = std::max(0.0, g.onset + uniform(rng, -0.3, 0.3));
        d.push_back({g.filename, g.class_id, on, std::max(on + 0.05, g.offset + uniform(rng, -0.3, 0.3))});
      }
  for (auto _ : state) benchmark::DoNotOptimize(psds(dets, truth, 1000.0, 3, p).score);
}
BENCHMARK(BM_Psds)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
