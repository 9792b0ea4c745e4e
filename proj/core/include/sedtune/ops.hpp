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

// Differentiable tensor ops. Layout conventions:
//   images     [N, H(time), W(freq), C]   (channels last)
//   sequences  [N, T, D]

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "sedtune/autograd.hpp"

namespace sedtune::ag {

Var add(const Var& a, const Var& b);
/// x + c where c is a constant whose shape matches the trailing dims of x.
Var add_constant(const Var& x, const Tensor& c);
/// x + b where b (a parameter) matches the trailing elements of x; b's
/// gradient is summed over the leading positions.
Var add_broadcast(const Var& x, const Var& b);
Var scale(const Var& x, double s);
/// a + w * b for scalars; evaluation order is fixed so the value can be
/// recomputed bit-for-bit from its parts.
Var add_scaled(const Var& a, double w, const Var& b);

Var relu(const Var& x);
Var gelu(const Var& x);
Var sigmoid(const Var& x);

/// x [..., K] * w [K, M] + b [M]. Pass an undefined Var to skip the bias.
Var linear(const Var& x, const Var& w, const Var& b);

/// 3x3 "same" convolution; x [N,H,W,C], w [9*C, Co] with row index (kh*3+kw)*C+c.
Var conv3x3(const Var& x, const Var& w, const Var& b);
/// Non-overlapping mean pooling; trailing partial windows are dropped.
Var avg_pool2d(const Var& x, std::size_t pool_h, std::size_t pool_w);
/// Normalizes each run of `group` trailing elements; gamma/beta have the size
/// of the last dim and are broadcast within the group.
Var layer_norm(const Var& x, std::size_t group, const Var& gamma, const Var& beta,
               double eps = 1e-5);

Var reshape(const Var& x, Shape shape);
Var concat_last(const Var& a, const Var& b);
/// Gathers entries of dim 0.
Var select_rows(const Var& x, std::span<const std::size_t> rows);

/// Multi-head scaled dot-product self attention; qkv [N,T,3D] -> [N,T,D].
Var self_attention(const Var& qkv, std::size_t heads);

/// Single-direction GRU over x [N,T,D]; wx [D,3H], wh [H,3H], bx/bh [3H],
/// gate order (reset, update, candidate). Returns hidden states [N,T,H].
Var gru(const Var& x, const Var& wx, const Var& wh, const Var& bx, const Var& bh, bool reverse);

/// Half-open input window [begin, end) averaged into output row i when
/// resampling a length-T sequence to length `target`.
std::vector<std::pair<std::size_t, std::size_t>> adaptive_windows(std::size_t length,
                                                                   std::size_t target);
/// Variable-window mean pooling along time: [N,T,D] -> [N,target,D].
Var adaptive_avg_pool_time(const Var& x, std::size_t target);
/// Averages consecutive groups along time: [N, T*G, D] -> [N, T, D].
Var group_mean(const Var& x, std::size_t group);

/// Class-wise softmax attention over time: out[n,c] = sum_t softmax_t(s[n,:,c]) v[n,t,c].
Var attention_pool(const Var& values, const Var& scores);

/// Mean binary cross entropy of probabilities against (soft) targets.
/// Probabilities are clamped to [1e-7, 1-1e-7]; clamped entries pass no gradient.
Var bce_mean(const Var& prob, const Tensor& target);
/// Mean squared error against a constant target.
Var mse_mean(const Var& pred, const Tensor& target);

}  // namespace sedtune::ag
