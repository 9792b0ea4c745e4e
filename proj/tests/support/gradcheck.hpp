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

// Central finite-difference oracle for the autograd engine. Independent of
// the backward closures: it only re-evaluates the forward function.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "sedtune/autograd.hpp"

namespace sedtune::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Relative error with an absolute floor so that two vanishing gradients
/// do not register as a mismatch.
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Checks up to `samples` coordinates drawn uniformly across `params`
/// (all coordinates when samples == 0).
inline GradCheckResult gradcheck(const std::function<ag::Var()>& loss_fn, std::vector<ag::Var> params,
                                 std::size_t samples = 0, std::uint64_t seed = 1, double h = 1e-5,
                                 double floor = 1e-8) {
  for (auto& p : params) p.zero_grad();
  ag::Var loss = loss_fn();
  ag::backward(loss);
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < params[i].value().size(); ++j) coords.emplace_back(i, j);
  if (samples && samples < coords.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(samples);
  }
  GradCheckResult r;
  for (auto [i, j] : coords) {
    const double analytic = params[i].has_grad() ? params[i].grad()[j] : 0.0;
    double& v = params[i].mutable_value()[j];
    const double saved = v;
    double fp, fm;
    {
      ag::NoGradGuard ng;
      v = saved + h;
      fp = loss_fn().item();
      v = saved - h;
      fm = loss_fn().item();
    }
    v = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic, numeric, floor));
    ++r.checked;
  }
  return r;
}

}  // namespace sedtune::testing
