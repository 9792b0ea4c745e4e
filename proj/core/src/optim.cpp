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

#include "sedtune/optim.hpp"

#include <cmath>

#include "sedtune/error.hpp"

namespace sedtune {

Adam::Adam(std::vector<ag::Var> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg.beta1 >= 0 && cfg.beta1 < 1 && cfg.beta2 >= 0 && cfg.beta2 < 1 && cfg.eps > 0))
    throw ConfigError("adam: betas must lie in [0, 1) and eps must be positive");
  for (const auto& p : params_) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

double Adam::clip_grad_norm(double max_norm) {
  double sq = 0.0;
  for (const auto& p : params_)
    if (p.has_grad())
      for (double g : p.grad().values()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (auto& p : params_)
      if (p.has_grad())
        for (double& g : p.grad().values()) g *= s;
  }
  return norm;
}

void Adam::step(const std::vector<double>& lr) {
  if (lr.size() != params_.size()) throw ContractError("adam: one learning rate per parameter expected");
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.requires_grad() || !p.has_grad()) continue;
    const Tensor& g = p.grad();
    Tensor& w = p.mutable_value();
    Tensor &m = m_[i], &v = v_[i];
    const double step = lr[i] / c1;
    const double inv_c2 = 1.0 / c2;
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      w[k] -= step * m[k] / (std::sqrt(v[k] * inv_c2) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace sedtune
