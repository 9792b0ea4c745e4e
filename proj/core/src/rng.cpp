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

#include "sedtune/rng.hpp"

#include <sstream>

#include "sedtune/error.hpp"

namespace sedtune {

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t root, std::string_view stream) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return splitmix64(splitmix64(root) ^ h);
}

std::string save_rng(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void load_rng(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw ParseError("corrupt random generator state");
}

double uniform(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(rng);
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  std::uniform_int_distribution<std::size_t> d(0, n - 1);
  return d(rng);
}

double normal(Rng& rng, double mean, double stddev) {
  std::normal_distribution<double> d(mean, stddev);
  return d(rng);
}

double beta_sample(Rng& rng, double a, double b) {
  std::gamma_distribution<double> ga(a, 1.0);
  std::gamma_distribution<double> gb(b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  if (x + y <= 0.0) return 0.5;
  return x / (x + y);
}

bool coin(Rng& rng, double p) { return uniform(rng, 0.0, 1.0) < p; }

}  // namespace sedtune
