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

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace sedtune {

using Rng = std::mt19937_64;

/// Independent seed for a named subsystem ("corpus", "init", "augment", ...).
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);

std::string save_rng(const Rng& rng);
void load_rng(Rng& rng, const std::string& state);

// Distribution objects are constructed per call so that the engine state is
// the only state that has to be checkpointed.
double uniform(Rng& rng, double lo, double hi);
std::size_t uniform_index(Rng& rng, std::size_t n);
double normal(Rng& rng, double mean = 0.0, double stddev = 1.0);
double beta_sample(Rng& rng, double a, double b);
bool coin(Rng& rng, double p);

}  // namespace sedtune
