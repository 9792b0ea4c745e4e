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
#include <fstream>

#include "sedtune/checkpoint.hpp"
#include "sedtune/error.hpp"
#include "sedtune/ops.hpp"
#include "sedtune/optim.hpp"
#include "temp_dir.hpp"

namespace sedtune {
namespace {

using ag::Var;

TEST(Adam, MatchesHandComputedUpdates) {
  Var w(Tensor({2}, std::vector<double>{1.0, -2.0}), true);
  Adam opt({w});
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m[2] = {0, 0}, v[2] = {0, 0}, ref[2] = {1.0, -2.0};
  for (int t = 1; t <= 3; ++t) {
    opt.zero_grad();
    // loss = sum w^3 / 3  ->  grad = w^2
    w.grad() = Tensor({2});
    for (int i = 0; i < 2; ++i) w.grad()[i] = w.value()[i] * w.value()[i];
    opt.step({lr});
    for (int i = 0; i < 2; ++i) {
      const double g = ref[i] * ref[i];
      m[i] = b1 * m[i] + (1 - b1) * g;
      v[i] = b2 * v[i] + (1 - b2) * g * g;
      const double mh = m[i] / (1 - std::pow(b1, t)), vh = v[i] / (1 - std::pow(b2, t));
      ref[i] -= lr * mh / (std::sqrt(vh) + eps);
      EXPECT_NEAR(w.value()[i], ref[i], 1e-12);
    }
  }
  EXPECT_EQ(opt.steps(), 3u);
}

TEST(Adam, MinimizesQuadratic) {
  Var w(Tensor({3}, std::vector<double>{3.0, -1.0, 0.5}), true);
  const Tensor target({3}, std::vector<double>{0.2, 0.4, -0.7});
  Adam opt({w});
  for (int i = 0; i < 2000; ++i) {
    opt.zero_grad();
    ag::backward(ag::mse_mean(w, target));
    opt.step({0.01});
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(w.value()[i], target[i], 1e-3);
}

TEST(Adam, ClipsGlobalNorm) {
  Var a(Tensor({1}), true), b(Tensor({1}), true);
  a.grad() = Tensor({1}, 6.0);
  b.grad() = Tensor({1}, 8.0);
  Adam opt({a, b});
  EXPECT_DOUBLE_EQ(opt.clip_grad_norm(5.0), 10.0);
  EXPECT_NEAR(a.grad()[0], 3.0, 1e-9);
  EXPECT_NEAR(b.grad()[0], 4.0, 1e-9);
  EXPECT_NEAR(opt.clip_grad_norm(0.0), 5.0, 1e-9);
  EXPECT_NEAR(a.grad()[0], 3.0, 1e-9);
  EXPECT_THROW(opt.step({0.1}), ContractError);
}

TEST(Adam, SkipsFrozenParameters) {
  Var a(Tensor({1}, 1.0), false), b(Tensor({1}, 1.0), true);
  b.grad() = Tensor({1}, 1.0);
  Adam opt({a, b});
  opt.step({0.1, 0.1});
  EXPECT_EQ(a.value()[0], 1.0);
  EXPECT_LT(b.value()[0], 1.0);
}

TEST(CheckpointFile, RoundTripAndRejections) {
  testing::TempDir dir;
  Checkpoint ck;
  ck.meta_json = R"({"rng":"1 2 3","step":12})";
  ck.tensors.push_back({"a", Tensor({2, 2}, std::vector<double>{1, 2, 3, 4.5})});
  ck.tensors.push_back({"b", Tensor({3}, -0.125)});
  const auto path = dir.path() / "x.ckpt";
  save_checkpoint(ck, path);
  auto back = load_checkpoint(path);
  EXPECT_EQ(back.meta_json, ck.meta_json);
  ASSERT_EQ(back.tensors.size(), 2u);
  EXPECT_EQ(back.tensor("a"), ck.tensors[0].value);
  EXPECT_EQ(back.tensor("b"), ck.tensors[1].value);
  EXPECT_THROW(back.tensor("c"), ValidationError);

  std::string bytes;
  {
    std::ifstream f(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(f), {});
  }
  auto write = [&](const std::string& b) {
    std::ofstream f(dir.path() / "y.ckpt", std::ios::binary);
    f << b;
  };
  std::string v2 = bytes;
  v2[8] = 2;
  write(v2);
  EXPECT_THROW(load_checkpoint(dir.path() / "y.ckpt"), ValidationError);
  write("NOTACKPT" + bytes.substr(8));
  EXPECT_THROW(load_checkpoint(dir.path() / "y.ckpt"), ValidationError);
  write(bytes.substr(0, bytes.size() - 5));
  EXPECT_THROW(load_checkpoint(dir.path() / "y.ckpt"), ValidationError);
  EXPECT_THROW(load_checkpoint(dir.path() / "missing.ckpt"), ValidationError);
}

}  // namespace
}  // namespace sedtune
