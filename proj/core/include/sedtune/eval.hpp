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

// Event decoding from frame posteriors, intersection-based PSDS, a collar
// event-F1, and the TSV/JSON interchange used by the evaluate command.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sedtune/tensor.hpp"

namespace sedtune {

struct DetectedEvent {
  int class_id = 0;
  double onset = 0.0;
  double offset = 0.0;
  double threshold = 0.5;
};

/// An event tied to an audio file; used for both ground truth and detections.
struct TimedEvent {
  std::string filename;
  int class_id = 0;
  double onset = 0.0;
  double offset = 0.0;
  bool operator==(const TimedEvent&) const = default;
};

/// Running median over a 0/1 (or real) sequence, odd window, edges replicated.
std::vector<double> median_filter(const std::vector<double>& x, std::size_t length);

/// strong: [T, C] posteriors of one clip; a frame is active when its posterior
/// exceeds the threshold. median_len: one odd length per class
/// (a single entry applies to every class).
std::vector<DetectedEvent> decode_events(const Tensor& strong, double threshold,
                                         const std::vector<std::size_t>& median_len, double frame_hop);

struct PsdsParams {
  double dtc = 0.7;
  double gtc = 0.7;
  std::optional<double> cttc;  // disabled when absent
  double alpha_ct = 0.0;
  double alpha_st = 1.0;
  double e_max = 100.0;  // false positives per hour
  std::vector<double> thresholds;

  void validate() const;
};

/// (i + 0.5) / n for i < n.
std::vector<double> default_thresholds(std::size_t n = 50);
std::pair<PsdsParams, PsdsParams> psds_presets();

struct ClassCurve {
  std::vector<double> tpr;   // per threshold
  std::vector<double> fpr;   // per hour
  std::vector<double> ctr;   // mean cross-trigger rate per hour
  std::vector<double> efpr;  // fpr + alpha_ct * ctr
};

struct PsdsResult {
  double score = 0.0;
  std::vector<ClassCurve> classes;
  std::vector<bool> has_truth;  // classes entering the ROC average
  std::vector<double> roc_x;    // effective FPR breakpoints
  std::vector<double> roc_y;    // effective TPR on [roc_x[i], roc_x[i+1])
};

/// detections[k] holds the events decoded at params.thresholds[k].
/// total_seconds is the summed duration of all evaluated clips.
PsdsResult psds(const std::vector<std::vector<TimedEvent>>& detections, const std::vector<TimedEvent>& truth,
                double total_seconds, std::size_t n_classes, const PsdsParams& params);

struct F1Result {
  double f1 = 0.0, precision = 0.0, recall = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0;
};

/// Greedy one-to-one matching within (file, class): onsets within `collar`,
/// offsets within max(collar, 0.2 * reference length); micro-averaged. Scores
/// 1.0 when there is nothing to detect and nothing was detected.
F1Result event_f1(const std::vector<TimedEvent>& detections, const std::vector<TimedEvent>& truth,
                  double collar = 0.2);

/// Event TSV with header filename/onset/offset/event_label.
void write_events_tsv(const std::vector<TimedEvent>& events, const std::vector<std::string>& class_names,
                      const std::string& path);
std::vector<TimedEvent> read_events_tsv(const std::string& path, const std::vector<std::string>& class_names);

/// Everything needed to score one split.
struct ClipPosteriors {
  std::string filename;
  Tensor strong;  // [T, C]
  double duration = 0.0;
};

struct EvalConfig {
  PsdsParams psds1 = psds_presets().first;
  PsdsParams psds2 = psds_presets().second;
  std::vector<std::size_t> median_len{7};
  double f1_threshold = 0.5;
  double f1_collar = 0.2;
};

struct EvalReport {
  PsdsResult psds1;
  PsdsResult psds2;
  F1Result f1;
  std::vector<TimedEvent> detections;  // at f1_threshold
  double metric() const { return psds1.score + psds2.score; }
};

EvalReport evaluate_posteriors(const std::vector<ClipPosteriors>& clips, const std::vector<TimedEvent>& truth,
                               std::size_t n_classes, double frame_hop, const EvalConfig& cfg);
void write_report_json(const EvalReport& report, const std::vector<std::string>& class_names,
                       const PsdsParams& p1, const PsdsParams& p2, const std::string& path);

}  // namespace sedtune
