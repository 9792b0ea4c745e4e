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

#include "sedtune/semisup.hpp"

#include <algorithm>

#include "sedtune/error.hpp"
#include "sedtune/ops.hpp"

namespace sedtune {

using ag::Var;

void ema_update(const SedModel& student, SedModel& teacher, double decay) {
  if (!(decay >= 0.0 && decay <= 1.0)) throw ContractError("ema_update: decay must lie in [0, 1]");
  const auto& sp = student.params();
  auto& tp = teacher.params();
  if (sp.size() != tp.size()) throw ContractError("ema_update: parameter trees differ");
  for (std::size_t i = 0; i < sp.size(); ++i) {
    if (sp[i].name != tp[i].name || sp[i].var.shape() != tp[i].var.shape())
      throw ContractError("ema_update: parameter trees differ at " + sp[i].name);
    if (!sp[i].var.requires_grad()) continue;
    const Tensor& s = sp[i].var.value();
    Tensor& t = tp[i].var.mutable_value();
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = decay * t[k] + (1.0 - decay) * s[k];
  }
}

double ema_decay(std::size_t step, double max_decay) {
  return std::min(1.0 - 1.0 / static_cast<double>(step + 1), max_decay);
}

PredictionValues values_of(const PredictionPair& p) { return {p.strong.value(), p.weak.value()}; }

namespace {

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  Shape s = x.shape();
  const std::size_t stride = x.size() / s[0];
  s[0] = rows.size();
  Tensor out(s);
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(x.data() + rows[i] * stride, stride, out.data() + i * stride);
  return out;
}

Var zero() { return Var(Tensor({}, 0.0)); }

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = i;
  return r;
}

Var mse_pair(const PredictionPair& s, const Tensor& strong_target, const Tensor& weak_target,
             const std::vector<std::size_t>& rows_in) {
  if (s.strong.shape() != strong_target.shape() || s.weak.shape() != weak_target.shape())
    throw ContractError("consistency loss: prediction shapes differ");
  const std::vector<std::size_t> rows = rows_in.empty() ? all_rows(s.strong.dim(0)) : rows_in;
  Var ls = ag::mse_mean(ag::select_rows(s.strong, rows), gather_rows(strong_target, rows));
  Var lw = ag::mse_mean(ag::select_rows(s.weak, rows), gather_rows(weak_target, rows));
  return ag::scale(ag::add(ls, lw), 0.5);
}

}  // namespace

Var bce_loss(const PredictionPair& preds, const CompositeBatch& batch) {
  const auto strong_rows = batch.rows_of(Supervision::Strong);
  const auto weak_rows = batch.rows_of(Supervision::Weak);
  Var total = zero();
  if (!strong_rows.empty())
    total = ag::bce_mean(ag::select_rows(preds.strong, strong_rows), gather_rows(batch.strong_labels, strong_rows));
  if (!weak_rows.empty()) {
    Var lw = ag::bce_mean(ag::select_rows(preds.weak, weak_rows), gather_rows(batch.weak_labels, weak_rows));
    total = strong_rows.empty() ? lw : ag::add(total, lw);
  }
  return total;
}

Var mt_loss(const PredictionPair& student, const PredictionValues& teacher, const std::vector<std::size_t>& rows) {
  return mse_pair(student, teacher.strong, teacher.weak, rows);
}

Var ict_loss(const PredictionPair& student_on_mixed, const PredictionValues& a, const PredictionValues& b,
             double lambda, const std::vector<std::size_t>& rows) {
  if (!(lambda > 0.0 && lambda <= 1.0)) throw ContractError("ict_loss: lambda must lie in (0, 1]");
  if (a.strong.shape() != b.strong.shape() || a.weak.shape() != b.weak.shape())
    throw ContractError("ict_loss: teacher shapes differ");
  Tensor ts(a.strong.shape()), tw(a.weak.shape());
  for (std::size_t i = 0; i < ts.size(); ++i) ts[i] = lambda * a.strong[i] + (1.0 - lambda) * b.strong[i];
  for (std::size_t i = 0; i < tw.size(); ++i) tw[i] = lambda * a.weak[i] + (1.0 - lambda) * b.weak[i];
  return mse_pair(student_on_mixed, ts, tw, rows);
}

double LossBreakdown::recomputed_total() const { return (l_bce + r_mt * l_mt) + r_ict * l_ict; }

LossBreakdown composite_loss(const PredictionPair& student, const PredictionValues& teacher,
                             const CompositeBatch& batch, const AugmentationDraw& draw, double r_mt, double r_ict,
                             const LossOptions& options) {
  if (!(r_mt >= 0.0 && r_ict >= 0.0)) throw ContractError("composite_loss: loss weights must be >= 0");
  const std::vector<std::size_t> rows =
      options.consistency_unlabeled_only ? batch.rows_of(Supervision::Unlabeled) : std::vector<std::size_t>{};
  const bool skip_consistency = options.consistency_unlabeled_only && rows.empty();

  LossBreakdown out;
  out.r_mt = r_mt;
  out.r_ict = r_ict;
  out.ict_active = options.ict_enabled && draw.use_mixup;
  Var bce = options.supervised ? bce_loss(student, batch) : zero();
  Var mt = zero(), ict = zero();
  if (!skip_consistency) {
    if (out.ict_active) {
      PredictionValues b{Tensor(teacher.strong.shape()), Tensor(teacher.weak.shape())};
      b.strong = gather_rows(teacher.strong, draw.permutation);
      b.weak = gather_rows(teacher.weak, draw.permutation);
      ict = ict_loss(student, teacher, b, draw.mix_lambda, rows);
    } else {
      mt = mt_loss(student, teacher, rows);
    }
  }
  out.l_bce = bce.item();
  out.l_mt = mt.item();
  out.l_ict = ict.item();
  if (out.l_mt != 0.0 && out.l_ict != 0.0) throw ContractError("composite_loss: both consistency terms active");
  out.graph = ag::add_scaled(ag::add_scaled(bce, r_mt, mt), r_ict, ict);
  out.total = out.graph.item();
  return out;
}

}  // namespace sedtune
