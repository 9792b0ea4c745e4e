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

// Two-stage training: Stage 1 trains the CNN/RNN heads against a frozen
// encoder with mean-teacher consistency; Stage 2 fine-tunes everything with
// ramped MT/ICT weights, per-module learning rates and layer-wise decay.
// Every epoch ends with PSDS1 + PSDS2 validation of the student.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sedtune/checkpoint.hpp"
#include "sedtune/config.hpp"
#include "sedtune/corpus.hpp"
#include "sedtune/eval.hpp"
#include "sedtune/model.hpp"

namespace sedtune {

struct Dataset {
  std::vector<AnnotatedClip> clips;
  std::vector<std::string> class_names;

  std::vector<std::size_t> indices(Split split) const;
  std::vector<TimedEvent> truth(Split split) const;
};

/// Loads corpus.manifest when set, otherwise corpus.data_dir when it holds a
/// corpus, otherwise synthesizes the generator corpus in memory.
Dataset load_dataset(const RunConfig& cfg);

/// Cached log-mels of every clip for both branches.
class FeatureBank {
 public:
  FeatureBank(const Dataset& data, const FeatureConfig& features);
  const Tensor& cnn(std::size_t clip) const { return cnn_[clip]; }
  const Tensor& encoder(std::size_t clip) const { return enc_[clip]; }
  /// Stacks the given clips into [N, T, F].
  Tensor stack_cnn(const std::vector<std::size_t>& clips) const;
  Tensor stack_encoder(const std::vector<std::size_t>& clips) const;
  /// Mean/std of the training clips' log-mels per branch.
  InputStats fit_stats(const std::vector<std::size_t>& clips) const;

 private:
  std::vector<Tensor> cnn_, enc_;
};

struct TrainOptions {
  Stage stage = Stage::Frozen;
  std::filesystem::path out_dir;
  std::string warm_start;  // stage-1 checkpoint for fine-tuning
  bool allow_cold_start = false;
  std::string resume;      // checkpoint written by an interrupted run
  std::optional<std::size_t> stop_after_steps;  // global step at which to checkpoint and stop
  bool verbose = false;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double metric = 0.0;  // psds1 + psds2 of the student
  double psds1 = 0.0;
  double psds2 = 0.0;
  double event_f1 = 0.0;
  double teacher_metric = 0.0;
  double mean_loss = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  double best_metric = -1.0;
  std::size_t best_epoch = 0;
  std::size_t steps = 0;
  bool interrupted = false;
  bool early_stopped = false;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
};

TrainResult train_stage(const RunConfig& cfg, const Dataset& data, const TrainOptions& opt);

/// Rebuilds the student (or teacher) stored in a training checkpoint.
std::unique_ptr<SedModel> load_model(const std::filesystem::path& checkpoint, const std::string& which = "student");
/// Resolved configuration stored in a training checkpoint.
RunConfig checkpoint_config(const Checkpoint& ckpt);

/// Strong posteriors for the given clips (batched, no graph).
std::vector<ClipPosteriors> predict(const SedModel& model, const Dataset& data, const FeatureBank& bank,
                                    const std::vector<std::size_t>& clips, std::size_t batch = 10);
EvalReport evaluate_split(const SedModel& model, const Dataset& data, const FeatureBank& bank, Split split,
                          const EvalConfig& cfg, std::size_t batch = 10);

}  // namespace sedtune
