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

// Supervised BCE, mean-teacher and interpolation-consistency losses, their
// weighted combination, and the EMA teacher update.

#include <vector>

#include "sedtune/corpus.hpp"
#include "sedtune/features.hpp"
#include "sedtune/model.hpp"

namespace sedtune {

/// theta_t <- decay * theta_t + (1 - decay) * theta_s for every parameter the
/// student trains; frozen parameters are left untouched.
void ema_update(const SedModel& student, SedModel& teacher, double decay);
/// Warm-up decay min(1 - 1/(step + 1), max_decay), step counted from 0.
double ema_decay(std::size_t step, double max_decay);

/// Constant (no-graph) copy of a prediction pair.
struct PredictionValues {
  Tensor strong;  // [N, T, C]
  Tensor weak;    // [N, C]
};
PredictionValues values_of(const PredictionPair& p);

/// Strong-head BCE over strong rows plus weak-head BCE over weak rows.
ag::Var bce_loss(const PredictionPair& preds, const CompositeBatch& batch);

/// Mean of the strong-head and weak-head MSEs over `rows` (all rows when empty).
ag::Var mt_loss(const PredictionPair& student, const PredictionValues& teacher,
                const std::vector<std::size_t>& rows = {});

/// MSE of the student (evaluated on mixed inputs) against the same mix of the
/// teacher outputs on the unmixed inputs: lambda * a + (1 - lambda) * b.
ag::Var ict_loss(const PredictionPair& student_on_mixed, const PredictionValues& teacher_a,
                 const PredictionValues& teacher_b, double lambda, const std::vector<std::size_t>& rows = {});

struct LossBreakdown {
  double l_bce = 0.0;
  double l_mt = 0.0;
  double l_ict = 0.0;
  double r_mt = 0.0;
  double r_ict = 0.0;
  double total = 0.0;
  bool ict_active = false;
  ag::Var graph;  // differentiable total
  /// l_bce + r_mt * l_mt + r_ict * l_ict evaluated in the order used for the graph.
  double recomputed_total() const;
};

struct LossOptions {
  bool ict_enabled = false;        // fine-tune stage: ICT replaces MT on mixup steps
  bool supervised = true;          // false drops the BCE term (ablation)
  bool consistency_unlabeled_only = false;
};

/// Composite objective: BCE + r_mt * MT, or BCE + r_ict * ICT when ICT is
/// enabled and the draw used mixup. `teacher` is the teacher's output on the
/// student's inputs for MT, or on the unmixed inputs for ICT (its permuted
/// rows provide the second endpoint).
LossBreakdown composite_loss(const PredictionPair& student, const PredictionValues& teacher,
                             const CompositeBatch& batch, const AugmentationDraw& draw, double r_mt, double r_ict,
                             const LossOptions& options);

}  // namespace sedtune
