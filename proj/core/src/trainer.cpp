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

#include "sedtune/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>

#include "sedtune/error.hpp"
#include "sedtune/ops.hpp"
#include "sedtune/optim.hpp"
#include "sedtune/schedules.hpp"
#include "sedtune/semisup.hpp"

namespace sedtune {

namespace fs = std::filesystem;
using nlohmann::json;
using ag::Var;

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < clips.size(); ++i)
    if (clips[i].split == split) out.push_back(i);
  return out;
}

std::vector<TimedEvent> Dataset::truth(Split split) const {
  std::vector<TimedEvent> out;
  for (const auto& c : clips)
    if (c.split == split)
      for (const auto& e : c.events) out.push_back({c.id, e.class_id, e.onset, e.offset});
  return out;
}

Dataset load_dataset(const RunConfig& cfg) {
  Dataset d;
  fs::path manifest = cfg.corpus.manifest;
  if (manifest.empty() && fs::exists(fs::path(cfg.corpus.data_dir) / "corpus.tsv")) manifest = cfg.corpus.data_dir;
  if (!manifest.empty()) {
    CorpusManifest m = load_manifest(manifest);
    d.clips = load_clips(m, cfg.features.sample_rate);
    d.class_names = m.class_names;
  } else {
    SynthesizedCorpus s = synthesize_toy_corpus(cfg.corpus.generator);
    d.clips = std::move(s.clips);
    d.class_names = s.manifest.class_names;
  }
  if (d.clips.empty()) throw ValidationError("corpus has no clips");
  return d;
}

FeatureBank::FeatureBank(const Dataset& data, const FeatureConfig& features) {
  LogMelExtractor cnn(features, Branch::Cnn), enc(features, Branch::Encoder);
  for (const auto& c : data.clips) {
    cnn_.push_back(cnn(c.samples).values);
    enc_.push_back(enc(c.samples).values);
  }
}

namespace {

Tensor stack(const std::vector<Tensor>& pool, const std::vector<std::size_t>& clips) {
  if (clips.empty()) throw ContractError("stack: no clips");
  const Tensor& first = pool.at(clips[0]);
  Shape s{clips.size()};
  s.insert(s.end(), first.shape().begin(), first.shape().end());
  Tensor out(s);
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const Tensor& t = pool.at(clips[i]);
    if (t.shape() != first.shape()) throw ValidationError("clips in one batch must have equal length");
    std::copy_n(t.data(), t.size(), out.data() + i * first.size());
  }
  return out;
}

void moments(const std::vector<Tensor>& pool, const std::vector<std::size_t>& clips, double& mean, double& sd) {
  double s = 0.0, s2 = 0.0;
  std::size_t n = 0;
  for (std::size_t c : clips) {
    for (double v : pool[c].values()) {
      s += v;
      s2 += v * v;
    }
    n += pool[c].size();
  }
  if (n == 0) throw ValidationError("no training clips to fit input statistics");
  mean = s / static_cast<double>(n);
  sd = std::sqrt(std::max(s2 / static_cast<double>(n) - mean * mean, 1e-12));
}

}  // namespace

Tensor FeatureBank::stack_cnn(const std::vector<std::size_t>& clips) const { return stack(cnn_, clips); }
Tensor FeatureBank::stack_encoder(const std::vector<std::size_t>& clips) const { return stack(enc_, clips); }

InputStats FeatureBank::fit_stats(const std::vector<std::size_t>& clips) const {
  InputStats st;
  moments(cnn_, clips, st.cnn_mean, st.cnn_std);
  moments(enc_, clips, st.enc_mean, st.enc_std);
  return st;
}

namespace {

constexpr const char* kRunFormat = "sedtune-run";

bool is_encoder(const Param& p) { return p.group == ParamGroup::EncoderEmbed || p.group == ParamGroup::EncoderBlock; }

void put_model(Checkpoint& ck, const SedModel& m, const std::string& prefix) {
  for (const auto& p : m.params()) ck.tensors.push_back({prefix + p.name, p.var.value()});
}

void get_model(const Checkpoint& ck, SedModel& m, const std::string& prefix, bool encoder_only = false) {
  for (auto& p : m.params()) {
    if (encoder_only && !is_encoder(p)) continue;
    const Tensor& t = ck.tensor(prefix + p.name);
    if (t.shape() != p.var.shape()) throw ValidationError("checkpoint tensor " + prefix + p.name + " has a different shape");
    p.var.mutable_value() = t;
  }
}

json stats_json(const InputStats& s) {
  return {{"cnn_mean", s.cnn_mean}, {"cnn_std", s.cnn_std}, {"enc_mean", s.enc_mean}, {"enc_std", s.enc_std}};
}

InputStats stats_from(const json& j) {
  InputStats s;
  s.cnn_mean = j.at("cnn_mean").get<double>();
  s.cnn_std = j.at("cnn_std").get<double>();
  s.enc_mean = j.at("enc_mean").get<double>();
  s.enc_std = j.at("enc_std").get<double>();
  return s;
}

json record_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},       {"metric", r.metric},         {"psds1", r.psds1},
          {"psds2", r.psds2},       {"event_f1", r.event_f1},     {"teacher_metric", r.teacher_metric},
          {"mean_loss", r.mean_loss}};
}

EpochRecord record_from(const json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.metric = j.at("metric").get<double>();
  r.psds1 = j.at("psds1").get<double>();
  r.psds2 = j.at("psds2").get<double>();
  r.event_f1 = j.at("event_f1").get<double>();
  r.teacher_metric = j.at("teacher_metric").get<double>();
  r.mean_loss = j.at("mean_loss").get<double>();
  return r;
}

json comparable_config(const RunConfig& cfg) {
  json j = json::parse(to_json(cfg));
  j.erase("output_dir");
  return j;
}

Checkpoint checked_load(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  const json meta = json::parse(ck.meta_json);
  if (meta.value("format", "") != kRunFormat) throw ValidationError(path + " is not a training checkpoint");
  return ck;
}

// Everything that evolves during a stage; serialized into each checkpoint.
struct Progress {
  std::size_t step = 0;
  double best_metric = -1.0;
  std::size_t best_epoch = 0;
  std::size_t since_best = 0;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  bool completed = false;
  bool early_stopped = false;
  std::vector<EpochRecord> history;
};

class StageRunner {
 public:
  StageRunner(const RunConfig& cfg, const Dataset& data, const TrainOptions& opt)
      : cfg_(cfg),
        data_(data),
        opt_(opt),
        sc_(cfg.stage(opt.stage)),
        spec_(with_classes(cfg.model, data.class_names.size())),
        bank_(data, cfg.features),
        student_(spec_, cfg.features, derive_seed(cfg.seed, "init")),
        teacher_(spec_, cfg.features, derive_seed(cfg.seed, "init")),
        cnn_ex_(cfg.features, Branch::Cnn),
        enc_ex_(cfg.features, Branch::Encoder),
        frames_(student_.cnn_output_frames(cnn_ex_.frame_count(data.clips.at(0).samples.size()))),
        composer_(data.clips, cfg.batch, frames_, student_.output_frame_hop(), data.class_names.size(),
                  derive_seed(cfg.seed, std::string("batches/") + to_string(opt.stage))),
        aug_rng_(derive_seed(cfg.seed, std::string("augment/") + to_string(opt.stage))) {
    for (const auto& c : data.clips)
      if (c.samples.size() != data.clips[0].samples.size())
        throw ValidationError("all clips must have the same length (clip '" + c.id + "' differs)");
    for (std::size_t i = 0; i < data.clips.size(); ++i)
      (data.clips[i].split == Split::Validation ? valid_ : train_).push_back(i);
    if (valid_.empty()) throw ValidationError("validation split is empty");
    spe_ = composer_.steps_per_epoch();
    if (cfg.train.max_steps_per_epoch) spe_ = std::min(spe_, *cfg.train.max_steps_per_epoch);
    total_ = sc_.total_epochs * spe_;
    warmup_ = static_cast<std::size_t>(std::llround(sc_.r_eps * static_cast<double>(spe_)));
    if (sc_.cosine_decay && total_ <= warmup_) throw ConfigError("stage: total steps must exceed warm-up steps");
  }

  TrainResult run() {
    initialize();
    fs::create_directories(opt_.out_dir / "checkpoints");
    {
      std::ofstream f(opt_.out_dir / "config.json");
      f << to_json(cfg_) << '\n';
    }
    log_.open(opt_.out_dir / "metrics.jsonl", std::ios::app);
    std::vector<Var> vars;
    for (const auto& p : student_.params()) vars.push_back(p.var);
    Adam adam(vars, cfg_.train.adam);
    if (resume_) restore_optimizer(adam, *resume_);
    resume_.reset();
    if (opt_.verbose)
      std::fprintf(stderr, "[%s] %zu steps/epoch, %zu epochs, %zu params\n", to_string(opt_.stage), spe_,
                   sc_.total_epochs, student_.parameter_count());

    TrainResult res;
    while (!p_.completed && p_.step < total_) {
      if (opt_.stop_after_steps && p_.step >= *opt_.stop_after_steps) {
        save(adam, last_path());
        res.interrupted = true;
        return finish(res);
      }
      train_step(adam);
      if (p_.step % spe_ == 0) {
        end_epoch(adam);
        if (p_.early_stopped) break;
      }
    }
    p_.completed = true;
    save(adam, last_path());
    return finish(res);
  }

 private:
  static ModelSpec with_classes(ModelSpec s, std::size_t n) {
    s.n_classes = n;
    return s;
  }

  fs::path last_path() const { return opt_.out_dir / "checkpoints" / "last.ckpt"; }
  fs::path best_path() const { return opt_.out_dir / "checkpoints" / "best.ckpt"; }

  TrainResult finish(TrainResult res) const {
    res.history = p_.history;
    res.best_metric = p_.best_metric;
    res.best_epoch = p_.best_epoch;
    res.steps = p_.step;
    res.early_stopped = p_.early_stopped;
    res.best_checkpoint = best_path();
    res.last_checkpoint = last_path();
    return res;
  }

  void initialize() {
    if (!opt_.resume.empty()) {
      resume_ = checked_load(opt_.resume);
      const json meta = json::parse(resume_->meta_json);
      if (meta.at("stage").get<std::string>() != to_string(opt_.stage))
        throw ConfigError("resume checkpoint belongs to stage '" + meta.at("stage").get<std::string>() + "'");
      if (meta.at("config") != comparable_config(cfg_))
        throw ConfigError("resume checkpoint was written with a different configuration");
      get_model(*resume_, student_, "student/");
      get_model(*resume_, teacher_, "teacher/");
      student_.stats() = teacher_.stats() = stats_from(meta.at("stats"));
      composer_.load_state(meta.at("composer").get<std::string>());
      load_rng(aug_rng_, meta.at("augment_rng").get<std::string>());
      const json& pr = meta.at("progress");
      p_.step = pr.at("step");
      p_.best_metric = pr.at("best_metric");
      p_.best_epoch = pr.at("best_epoch");
      p_.since_best = pr.at("since_best");
      p_.loss_sum = pr.at("loss_sum");
      p_.loss_count = pr.at("loss_count");
      p_.completed = pr.at("completed");
      p_.early_stopped = pr.at("early_stopped");
      for (const auto& r : pr.at("history")) p_.history.push_back(record_from(r));
    } else {
      bool warm = false;
      if (opt_.stage == Stage::Finetune) {
        if (!opt_.warm_start.empty()) {
          Checkpoint ck = checked_load(opt_.warm_start);
          get_model(ck, student_, "student/");
          student_.stats() = stats_from(json::parse(ck.meta_json).at("stats"));
          warm = true;
        } else if (!opt_.allow_cold_start) {
          throw ConfigError("fine-tuning needs a stage-1 checkpoint (--warm-start) or --allow-cold-start");
        }
      }
      if (!warm) {
        student_.stats() = bank_.fit_stats(train_);
        if (cfg_.model.encoder.init == "checkpoint")
          get_model(load_checkpoint(cfg_.model.encoder.checkpoint), student_, "student/", true);
      }
      teacher_.copy_from(student_);
    }
    student_.set_encoder_frozen(sc_.encoder_frozen);
    teacher_.set_encoder_frozen(true);
    ict_enabled_ = opt_.stage == Stage::Finetune && sc_.r_ict_max.has_value();
    if (sc_.encoder_frozen) build_encoder_cache();
  }

  // With the encoder frozen its output on an unaugmented clip never changes,
  // and student and teacher share the same encoder weights.
  void build_encoder_cache() {
    ag::NoGradGuard ng;
    enc_cache_.assign(data_.clips.size(), Tensor());
    for (std::size_t i = 0; i < data_.clips.size(); ++i) {
      const Tensor& m = bank_.encoder(i);
      enc_cache_[i] = student_.encoder_forward(m.reshaped({1, m.dim(0), m.dim(1)})).value();
      const auto& s = enc_cache_[i].shape();
      enc_cache_[i].reshape({s[1], s[2]});
    }
  }

  Var encode(const SedModel& m, const Tensor& enc_mel, const std::vector<std::size_t>* cached_clips) const {
    if (cached_clips && !enc_cache_.empty()) return Var(stack(enc_cache_, *cached_clips));
    return m.encoder_forward(enc_mel);
  }

  std::vector<double> learning_rates() const {
    const std::size_t s = p_.step + 1;
    auto sched = [&](double base) { return lr_schedule(s, total_, warmup_, base, sc_.cosine_decay); };
    const std::size_t n = spec_.encoder.n_blocks;
    const double enc = sc_.alpha_encoder.value_or(0.0);
    std::vector<double> block(n, enc);
    double embed = enc;
    if (sc_.llrd_factor) {
      block = llrd_rates(enc, n, *sc_.llrd_factor);
      embed = llrd_embedding_rate(enc, n, *sc_.llrd_factor);
    }
    const double cnn = sched(sc_.alpha_cnn), rnn = sched(sc_.alpha_rnn), emb = sched(embed);
    std::vector<double> blocks(n);
    for (std::size_t i = 0; i < n; ++i) blocks[i] = sched(block[i]);
    std::vector<double> lr;
    for (const auto& p : student_.params()) {
      switch (p.group) {
        case ParamGroup::Cnn: lr.push_back(cnn); break;
        case ParamGroup::Rnn: lr.push_back(rnn); break;
        case ParamGroup::EncoderEmbed: lr.push_back(emb); break;
        case ParamGroup::EncoderBlock: lr.push_back(blocks.at(static_cast<std::size_t>(p.block))); break;
      }
    }
    return lr;
  }

  void train_step(Adam& adam) {
    CompositeBatch batch = composer_.next();
    const AugmentationDraw draw =
        draw_augmentations(aug_rng_, cfg_.augment, opt_.stage == Stage::Finetune, mixup_groups(batch));
    const bool ict = ict_enabled_ && draw.use_mixup;

    Tensor cnn_clean = bank_.stack_cnn(batch.clip_index);
    Tensor enc_clean = bank_.stack_encoder(batch.clip_index);
    CompositeBatch used = batch;
    Tensor cnn_in = cnn_clean, enc_in = enc_clean;
    if (draw.use_mixup) {
      mixup(used, draw.mix_lambda, draw.permutation);
      cnn_in = cnn_ex_.batch(used.waveforms).values;
      enc_in = enc_ex_.batch(used.waveforms).values;
    }
    if (draw.use_fw) {
      auto warp = [&](const Tensor& t) {
        MelSpectrogram m;
        m.origin = Branch::Encoder;
        m.values = t;
        return frequency_warp(m, draw.fw_factor).values;
      };
      enc_in = warp(enc_in);
      if (ict) enc_clean = warp(enc_clean);
    }
    const bool student_clean = !draw.use_mixup && !draw.use_fw;
    const bool teacher_clean = ict ? !draw.use_fw : student_clean;

    Var enc_s = encode(student_, enc_in, student_clean ? &batch.clip_index : nullptr);
    PredictionPair ps = student_.heads_forward(student_.cnn_forward(cnn_in), enc_s);

    PredictionValues tv;
    {
      ag::NoGradGuard ng;
      const Tensor& tc = ict ? cnn_clean : cnn_in;
      const Tensor& te = ict ? enc_clean : enc_in;
      Var enc_t = (sc_.encoder_frozen && !ict) ? Var(enc_s.value())
                                               : encode(teacher_, te, teacher_clean ? &batch.clip_index : nullptr);
      tv = values_of(teacher_.heads_forward(teacher_.cnn_forward(tc), enc_t));
    }

    const double epoch = static_cast<double>(p_.step) / static_cast<double>(spe_);
    const double r_mt = ramp_weight(epoch, sc_.r_eps, sc_.r_mt_max);
    const double r_ict = sc_.r_ict_max ? ramp_weight(epoch, sc_.r_eps, *sc_.r_ict_max) : 0.0;
    LossOptions lo;
    lo.ict_enabled = ict_enabled_;
    lo.supervised = cfg_.train.supervised;
    lo.consistency_unlabeled_only = cfg_.train.consistency_unlabeled_only;
    LossBreakdown L = composite_loss(ps, tv, used, draw, r_mt, r_ict, lo);
    if (!std::isfinite(L.total))
      throw DivergenceError("non-finite loss at step " + std::to_string(p_.step) + " (bce=" + std::to_string(L.l_bce) +
                            ", mt=" + std::to_string(L.l_mt) + ", ict=" + std::to_string(L.l_ict) + ")");

    adam.zero_grad();
    ag::backward(L.graph);
    const double gnorm = adam.clip_grad_norm(cfg_.train.clip_norm);
    if (!std::isfinite(gnorm)) throw DivergenceError("non-finite gradient at step " + std::to_string(p_.step));
    const std::vector<double> lr = learning_rates();
    adam.step(lr);
    ema_update(student_, teacher_, ema_decay(p_.step, cfg_.train.ema_max_decay));

    p_.loss_sum += L.total;
    ++p_.loss_count;
    if (p_.step % cfg_.train.log_every == 0) {
      json rec{{"type", "step"},       {"stage", to_string(opt_.stage)}, {"step", p_.step},   {"epoch", epoch},
               {"l_bce", L.l_bce},     {"l_mt", L.l_mt},                 {"l_ict", L.l_ict},  {"r_mt", L.r_mt},
               {"r_ict", L.r_ict},     {"total", L.total},               {"ict_active", L.ict_active},
               {"mixup", draw.use_mixup}, {"freq_warp", draw.use_fw},    {"grad_norm", gnorm}};
      json lrs;
      for (std::size_t i = 0; i < lr.size(); ++i) {
        const auto& p = student_.params()[i];
        if (!p.var.requires_grad()) continue;
        const std::string key = p.group == ParamGroup::EncoderBlock ? "encoder_block" + std::to_string(p.block)
                                                                     : std::string(to_string(p.group));
        lrs[key] = lr[i];
      }
      rec["lr"] = lrs;
      log_ << rec.dump() << '\n';
    }
    ++p_.step;
  }

  std::vector<ClipPosteriors> predict_cached(const SedModel& m, const std::vector<std::size_t>& clips) const {
    ag::NoGradGuard ng;
    std::vector<ClipPosteriors> out;
    const std::size_t B = cfg_.train.eval_batch;
    for (std::size_t s = 0; s < clips.size(); s += B) {
      std::vector<std::size_t> chunk(clips.begin() + static_cast<long>(s),
                                     clips.begin() + static_cast<long>(std::min(clips.size(), s + B)));
      Var enc = encode(m, bank_.stack_encoder(chunk), &chunk);
      const Tensor strong = m.heads_forward(m.cnn_forward(bank_.stack_cnn(chunk)), enc).strong.value();
      const std::size_t T = strong.dim(1), C = strong.dim(2);
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        const auto& clip = data_.clips[chunk[i]];
        Tensor st({T, C});
        std::copy_n(strong.data() + i * T * C, T * C, st.data());
        out.push_back({clip.id, std::move(st), clip.duration});
      }
    }
    return out;
  }

  void end_epoch(Adam& adam) {
    EpochRecord r;
    r.epoch = p_.step / spe_;
    r.mean_loss = p_.loss_count ? p_.loss_sum / static_cast<double>(p_.loss_count) : 0.0;
    const auto truth = data_.truth(Split::Validation);
    const double hop = student_.output_frame_hop();
    EvalReport rs = evaluate_posteriors(predict_cached(student_, valid_), truth, spec_.n_classes, hop, cfg_.eval);
    EvalReport rt = evaluate_posteriors(predict_cached(teacher_, valid_), truth, spec_.n_classes, hop, cfg_.eval);
    r.metric = rs.metric();
    r.psds1 = rs.psds1.score;
    r.psds2 = rs.psds2.score;
    r.event_f1 = rs.f1.f1;
    r.teacher_metric = rt.metric();
    p_.history.push_back(r);
    p_.loss_sum = 0.0;
    p_.loss_count = 0;
    const bool improved = r.metric > p_.best_metric;
    if (improved) {
      p_.best_metric = r.metric;
      p_.best_epoch = r.epoch;
      p_.since_best = 0;
    } else {
      ++p_.since_best;
    }
    if (sc_.patience > 0 && p_.since_best >= sc_.patience) p_.early_stopped = true;
    json rec = record_json(r);
    rec["type"] = "epoch";
    rec["stage"] = to_string(opt_.stage);
    rec["best_metric"] = p_.best_metric;
    log_ << rec.dump() << '\n';
    log_.flush();
    if (opt_.verbose)
      std::fprintf(stderr, "[%s] epoch %zu loss %.4f psds1 %.3f psds2 %.3f f1 %.3f teacher %.3f%s\n",
                   to_string(opt_.stage), r.epoch, r.mean_loss, r.psds1, r.psds2, r.event_f1, r.teacher_metric,
                   improved ? " *" : "");
    if (improved) save(adam, best_path());
    save(adam, last_path());
  }

  void save(Adam& adam, const fs::path& path) const {
    Checkpoint ck;
    put_model(ck, student_, "student/");
    put_model(ck, teacher_, "teacher/");
    for (std::size_t i = 0; i < student_.params().size(); ++i) {
      ck.tensors.push_back({"adam/m/" + student_.params()[i].name, adam.first_moments()[i]});
      ck.tensors.push_back({"adam/v/" + student_.params()[i].name, adam.second_moments()[i]});
    }
    json hist = json::array();
    for (const auto& r : p_.history) hist.push_back(record_json(r));
    json meta{{"format", kRunFormat},
              {"stage", to_string(opt_.stage)},
              {"class_names", data_.class_names},
              {"config", comparable_config(cfg_)},
              {"stats", stats_json(student_.stats())},
              {"composer", composer_.save_state()},
              {"augment_rng", save_rng(aug_rng_)},
              {"adam_steps", adam.steps()},
              {"steps_per_epoch", spe_},
              {"total_steps", total_},
              {"progress",
               {{"step", p_.step},
                {"best_metric", p_.best_metric},
                {"best_epoch", p_.best_epoch},
                {"since_best", p_.since_best},
                {"loss_sum", p_.loss_sum},
                {"loss_count", p_.loss_count},
                {"completed", p_.completed},
                {"early_stopped", p_.early_stopped},
                {"history", hist}}}};
    ck.meta_json = meta.dump();
    save_checkpoint(ck, path);
  }

  void restore_optimizer(Adam& adam, const Checkpoint& ck) {
    for (std::size_t i = 0; i < student_.params().size(); ++i) {
      adam.first_moments()[i] = ck.tensor("adam/m/" + student_.params()[i].name);
      adam.second_moments()[i] = ck.tensor("adam/v/" + student_.params()[i].name);
    }
    adam.set_steps(json::parse(ck.meta_json).at("adam_steps").get<std::size_t>());
  }

  RunConfig cfg_;
  const Dataset& data_;
  TrainOptions opt_;
  StageConfig sc_;
  ModelSpec spec_;
  FeatureBank bank_;
  SedModel student_, teacher_;
  LogMelExtractor cnn_ex_, enc_ex_;
  std::size_t frames_;
  BatchComposer composer_;
  Rng aug_rng_;
  std::vector<std::size_t> train_, valid_;
  std::size_t spe_ = 1, total_ = 1, warmup_ = 0;
  bool ict_enabled_ = false;
  std::vector<Tensor> enc_cache_;
  std::optional<Checkpoint> resume_;
  Progress p_;
  std::ofstream log_;
};

}  // namespace

TrainResult train_stage(const RunConfig& cfg, const Dataset& data, const TrainOptions& opt) {
  if (opt.out_dir.empty()) throw ConfigError("train: output directory not set");
  StageRunner runner(cfg, data, opt);
  return runner.run();
}

RunConfig checkpoint_config(const Checkpoint& ckpt) {
  const json meta = json::parse(ckpt.meta_json);
  if (meta.value("format", "") != kRunFormat) throw ValidationError("not a training checkpoint");
  return parse_run_config(meta.at("config").dump());
}

std::unique_ptr<SedModel> load_model(const fs::path& checkpoint, const std::string& which) {
  if (which != "student" && which != "teacher") throw ConfigError("model must be 'student' or 'teacher'");
  Checkpoint ck = checked_load(checkpoint.string());
  const json meta = json::parse(ck.meta_json);
  RunConfig cfg = checkpoint_config(ck);
  ModelSpec spec = cfg.model;
  spec.n_classes = meta.at("class_names").size();
  auto m = std::make_unique<SedModel>(spec, cfg.features, 0);
  get_model(ck, *m, which + "/");
  m->stats() = stats_from(meta.at("stats"));
  return m;
}

std::vector<ClipPosteriors> predict(const SedModel& model, const Dataset& data, const FeatureBank& bank,
                                    const std::vector<std::size_t>& clips, std::size_t batch) {
  ag::NoGradGuard ng;
  std::vector<ClipPosteriors> out;
  for (std::size_t s = 0; s < clips.size(); s += batch) {
    std::vector<std::size_t> chunk(clips.begin() + static_cast<long>(s),
                                   clips.begin() + static_cast<long>(std::min(clips.size(), s + batch)));
    const Tensor strong = model.forward(bank.stack_cnn(chunk), bank.stack_encoder(chunk)).strong.value();
    const std::size_t T = strong.dim(1), C = strong.dim(2);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      Tensor st({T, C});
      std::copy_n(strong.data() + i * T * C, T * C, st.data());
      out.push_back({data.clips[chunk[i]].id, std::move(st), data.clips[chunk[i]].duration});
    }
  }
  return out;
}

EvalReport evaluate_split(const SedModel& model, const Dataset& data, const FeatureBank& bank, Split split,
                          const EvalConfig& cfg, std::size_t batch) {
  const auto idx = data.indices(split);
  if (idx.empty()) throw ValidationError(std::string("split '") + to_string(split) + "' is empty");
  return evaluate_posteriors(predict(model, data, bank, idx, batch), data.truth(split), model.spec().n_classes,
                             model.output_frame_hop(), cfg);
}

}  // namespace sedtune
