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

// Adam with per-parameter learning rates and global-norm gradient clipping.

#include <vector>

#include "sedtune/autograd.hpp"

namespace sedtune {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<ag::Var> params, AdamConfig cfg = {});

  /// Scales every gradient so that their joint L2 norm is at most max_norm
  /// (no-op when max_norm <= 0). Returns the norm before clipping.
  double clip_grad_norm(double max_norm);
  /// One update; lr[i] applies to params[i]. Parameters without a gradient
  /// are skipped and keep their moments.
  void step(const std::vector<double>& lr);
  void zero_grad();

  std::size_t steps() const { return t_; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  void set_steps(std::size_t t) { t_ = t; }
  const std::vector<ag::Var>& params() const { return params_; }

 private:
  std::vector<ag::Var> params_;
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace sedtune
