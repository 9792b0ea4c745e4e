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

// Run configuration: one JSON document covering corpus, features, model,
// both training stages and evaluation. Parsing is strict (unknown keys and
// type mismatches raise ConfigError); dotted-path overrides are applied to
// the document before parsing.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sedtune/corpus.hpp"
#include "sedtune/eval.hpp"
#include "sedtune/features.hpp"
#include "sedtune/model.hpp"
#include "sedtune/optim.hpp"
#include "sedtune/schedules.hpp"

namespace sedtune {

struct CorpusConfig {
  std::string manifest;             // existing corpus.tsv (or its directory); empty = generate
  std::string data_dir = "data/toy";  // where gen-data writes and train reads a generated corpus
  GeneratorSpec generator;
};

struct TrainConfig {
  double ema_max_decay = 0.999;
  double clip_norm = 5.0;  // 0 disables clipping
  AdamConfig adam;
  bool supervised = true;
  bool consistency_unlabeled_only = false;
  std::size_t eval_batch = 10;
  std::optional<std::size_t> max_steps_per_epoch;
  std::size_t log_every = 1;  // steps between JSONL step records
};

struct RunConfig {
  std::uint64_t seed = 7;
  std::string output_dir = "runs/default";
  CorpusConfig corpus;
  FeatureConfig features;
  AugmentConfig augment;
  ModelSpec model;
  BatchSizes batch;
  TrainConfig train;
  StageConfig frozen = stage_config_defaults(Stage::Frozen, EncoderKind::FrameWise);
  StageConfig finetune = stage_config_defaults(Stage::Finetune, EncoderKind::FrameWise);
  EvalConfig eval;

  const StageConfig& stage(Stage s) const { return s == Stage::Frozen ? frozen : finetune; }
  /// Cross-field checks; throws ConfigError.
  void validate() const;
};

/// Parses a JSON document (empty text = all defaults). Stage defaults follow
/// model.encoder.kind before the document's stage fields are applied.
RunConfig parse_run_config(const std::string& json_text, const std::vector<std::string>& overrides = {});
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
/// Fully resolved document; parse_run_config(to_json(c)) == c.
std::string to_json(const RunConfig& cfg);
/// JSON Schema (draft 2020-12) describing every accepted key.
std::string config_schema();

}  // namespace sedtune
