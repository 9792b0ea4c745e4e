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

// sedtune: generate toy corpora, train both stages, evaluate checkpoints and
// export frame embeddings. Exit codes: 0 ok, 2 configuration error, 3 runtime error.

#include <malloc.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "sedtune/error.hpp"
#include "sedtune/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sedtune;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "JSON run configuration");
  cmd->add_option("--set", c.overrides, "Override a config key, e.g. --set stages.frozen.total_epochs=5")
      ->take_all();
  cmd->add_option("--seed", c.seed, "Root seed");
}

RunConfig resolve(const Common& c, std::vector<std::string> extra = {}) {
  std::vector<std::string> ov = c.overrides;
  if (c.seed) ov.push_back("seed=" + std::to_string(*c.seed));
  ov.insert(ov.end(), extra.begin(), extra.end());
  RunConfig cfg = c.config.empty() ? parse_run_config("", ov) : load_run_config(c.config, ov);
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text << '\n';
}

bool non_empty_dir(const fs::path& p) { return fs::is_directory(p) && !fs::is_empty(p); }

int cmd_gen_data(const Common& c, std::string out, bool force) {
  std::vector<std::string> extra;
  if (c.seed) extra.push_back("corpus.generator.seed=" + std::to_string(*c.seed));
  Common plain = c;
  plain.seed.reset();
  const RunConfig cfg = resolve(plain, extra);
  const fs::path dir = out.empty() ? fs::path(cfg.corpus.data_dir) : fs::path(out);
  if (non_empty_dir(dir)) {
    if (!force) throw ConfigError(dir.string() + " is not empty (use --force to overwrite)");
    fs::remove_all(dir);
  }
  const SynthesizedCorpus corpus = synthesize_toy_corpus(cfg.corpus.generator);
  write_corpus(corpus, dir);
  write_text(dir / "config.json", to_json(cfg));
  std::map<std::string, std::size_t> per_split;
  std::size_t events = 0;
  for (const auto& clip : corpus.clips) {
    ++per_split[to_string(clip.split)];
    events += clip.events.size();
  }
  std::printf("wrote %zu clips (%zu strong events) to %s\n", corpus.clips.size(), events, dir.c_str());
  for (const auto& [split, n] : per_split) std::printf("  %-14s %zu\n", split.c_str(), n);
  return 0;
}

struct TrainFlags {
  std::string stage = "frozen";
  std::string warm_start, resume, out;
  bool allow_cold_start = false, force = false, quiet = false;
  std::optional<std::size_t> stop_after;
};

int cmd_train(const Common& c, const TrainFlags& f) {
  const RunConfig cfg = resolve(c);
  TrainOptions opt;
  opt.stage = stage_from_string(f.stage);
  opt.out_dir = f.out.empty() ? fs::path(cfg.output_dir) / f.stage : fs::path(f.out);
  opt.warm_start = f.warm_start;
  opt.allow_cold_start = f.allow_cold_start;
  opt.resume = f.resume;
  opt.stop_after_steps = f.stop_after;
  opt.verbose = !f.quiet;
  if (opt.resume.empty() && non_empty_dir(opt.out_dir)) {
    if (!f.force) throw ConfigError(opt.out_dir.string() + " is not empty (use --force, or --resume a checkpoint)");
    fs::remove_all(opt.out_dir);
  }
  const Dataset data = load_dataset(cfg);
  const TrainResult r = train_stage(cfg, data, opt);
  json summary{{"stage", f.stage},
               {"steps", r.steps},
               {"epochs", r.history.size()},
               {"best_metric", r.best_metric},
               {"best_epoch", r.best_epoch},
               {"interrupted", r.interrupted},
               {"early_stopped", r.early_stopped},
               {"best_checkpoint", r.best_checkpoint.string()},
               {"last_checkpoint", r.last_checkpoint.string()}};
  if (!r.history.empty()) {
    const auto& last = r.history.back();
    summary["final"] = {{"metric", last.metric}, {"psds1", last.psds1}, {"psds2", last.psds2},
                        {"event_f1", last.event_f1}};
  }
  write_text(opt.out_dir / "summary.json", summary.dump(2));
  std::cout << summary.dump(2) << '\n';
  return 0;
}

struct EvalFlags {
  std::string ckpt, split = "validation", model = "student", out, detections;
};

RunConfig eval_config(const Common& c, const std::string& ckpt) {
  if (!c.config.empty() || ckpt.empty()) return resolve(c);
  std::vector<std::string> ov = c.overrides;
  RunConfig cfg = parse_run_config(to_json(checkpoint_config(load_checkpoint(ckpt))), ov);
  cfg.validate();
  return cfg;
}

int cmd_evaluate(const Common& c, const EvalFlags& f) {
  if (f.ckpt.empty() == f.detections.empty()) throw ConfigError("evaluate needs exactly one of --ckpt or --detections");
  const RunConfig cfg = eval_config(c, f.ckpt);
  const Dataset data = load_dataset(cfg);
  const Split split = split_from_string(f.split);
  const auto idx = data.indices(split);
  if (idx.empty()) throw ValidationError("split '" + f.split + "' is empty");
  const fs::path out = f.out.empty() ? fs::path(cfg.output_dir) / "eval" : fs::path(f.out);

  EvalReport rep;
  if (!f.ckpt.empty()) {
    auto model = load_model(f.ckpt, f.model);
    FeatureBank bank(data, cfg.features);
    rep = evaluate_split(*model, data, bank, split, cfg.eval, cfg.train.eval_batch);
  } else {
    // A fixed detection list is the same at every threshold.
    const auto det = read_events_tsv(f.detections, data.class_names);
    std::vector<std::vector<TimedEvent>> per1(cfg.eval.psds1.thresholds.size(), det);
    std::vector<std::vector<TimedEvent>> per2(cfg.eval.psds2.thresholds.size(), det);
    double seconds = 0.0;
    for (std::size_t i : idx) seconds += data.clips[i].duration;
    const auto truth = data.truth(split);
    rep.psds1 = psds(per1, truth, seconds, data.class_names.size(), cfg.eval.psds1);
    rep.psds2 = psds(per2, truth, seconds, data.class_names.size(), cfg.eval.psds2);
    rep.f1 = event_f1(det, truth, cfg.eval.f1_collar);
    rep.detections = det;
  }
  fs::create_directories(out);
  write_report_json(rep, data.class_names, cfg.eval.psds1, cfg.eval.psds2, (out / "report.json").string());
  write_events_tsv(rep.detections, data.class_names, (out / "detections.tsv").string());
  write_text(out / "config.json", to_json(cfg));
  std::printf("psds1 %.4f  psds2 %.4f  event_f1 %.4f  (%s, %zu clips)\n", rep.psds1.score, rep.psds2.score,
              rep.f1.f1, f.split.c_str(), idx.size());
  return 0;
}

struct ExportFlags {
  std::string ckpt, out, split, model = "student";
};

int cmd_export(const Common& c, const ExportFlags& f) {
  if (!fs::exists(f.ckpt)) throw ValidationError("checkpoint not found: " + f.ckpt);
  const RunConfig cfg = eval_config(c, f.ckpt);
  const Dataset data = load_dataset(cfg);
  auto model = load_model(f.ckpt, f.model);
  std::vector<AnnotatedClip> clips;
  if (f.split.empty()) {
    clips = data.clips;
  } else {
    for (std::size_t i : data.indices(split_from_string(f.split))) clips.push_back(data.clips[i]);
  }
  Rng rng(derive_seed(cfg.seed, "export"));
  const auto rows = export_frame_embeddings(*model, clips, data.class_names, rng);
  if (fs::path(f.out).has_parent_path()) fs::create_directories(fs::path(f.out).parent_path());
  write_embeddings_tsv(rows, f.out);
  std::printf("wrote %zu rows of width %zu to %s\n", rows.size(), rows.empty() ? 0 : rows[0].values.size(),
              f.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // Training allocates and frees the same large buffers every step; keep them
  // on the heap instead of round-tripping through mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"Two-stage semi-supervised sound event detection"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, exp_c;
  std::string gen_out;
  bool gen_force = false;
  auto* gen = app.add_subcommand("gen-data", "Synthesize the toy corpus to disk");
  add_common(gen, gen_c);
  gen->add_option("-o,--out", gen_out, "Output directory (default corpus.data_dir)");
  gen->add_flag("--force", gen_force, "Overwrite a non-empty output directory");

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "Run one training stage");
  add_common(train, train_c);
  train->add_option("--stage", tf.stage, "frozen | finetune")->check(CLI::IsMember({"frozen", "finetune"}));
  train->add_option("--warm-start", tf.warm_start, "Stage-1 checkpoint to fine-tune from");
  train->add_flag("--allow-cold-start", tf.allow_cold_start, "Fine-tune without a stage-1 checkpoint");
  train->add_option("--resume", tf.resume, "Continue an interrupted run from its checkpoint");
  train->add_option("--stop-after-steps", tf.stop_after, "Checkpoint and stop at this global step");
  train->add_option("-o,--out", tf.out, "Run directory (default <output_dir>/<stage>)");
  train->add_flag("--force", tf.force, "Overwrite a non-empty run directory");
  train->add_flag("-q,--quiet", tf.quiet, "No per-epoch progress on stderr");

  EvalFlags ef;
  auto* eval = app.add_subcommand("evaluate", "Score a checkpoint or a detections file on one split");
  add_common(eval, eval_c);
  eval->add_option("--ckpt", ef.ckpt, "Training checkpoint");
  eval->add_option("--detections", ef.detections, "Detections TSV to score instead of a checkpoint");
  eval->add_option("--split", ef.split, "Split to score");
  eval->add_option("--model", ef.model, "student | teacher");
  eval->add_option("-o,--out", ef.out, "Report directory (default <output_dir>/eval)");

  ExportFlags xf;
  auto* exp = app.add_subcommand("export-embeddings", "Write one encoder frame per clip as TSV");
  add_common(exp, exp_c);
  exp->add_option("--ckpt", xf.ckpt, "Training checkpoint")->required();
  exp->add_option("-o,--out", xf.out, "Output TSV")->required();
  exp->add_option("--split", xf.split, "Restrict to one split");
  exp->add_option("--model", xf.model, "student | teacher");

  auto* schema = app.add_subcommand("schema", "Print the configuration JSON schema");
  Common cfg_c;
  auto* show = app.add_subcommand("config", "Print the fully resolved configuration");
  add_common(show, cfg_c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_c, gen_out, gen_force);
    if (train->parsed()) return cmd_train(train_c, tf);
    if (eval->parsed()) return cmd_evaluate(eval_c, ef);
    if (exp->parsed()) return cmd_export(exp_c, xf);
    if (schema->parsed()) {
      std::cout << config_schema() << '\n';
      return 0;
    }
    if (show->parsed()) {
      std::cout << to_json(resolve(cfg_c)) << '\n';
      return 0;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
