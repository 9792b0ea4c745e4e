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

#include "sedtune/config.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <type_traits>

#include "sedtune/error.hpp"

namespace sedtune {

using nlohmann::json;

namespace {

template <class T>
struct is_vector : std::false_type {};
template <class T>
struct is_vector<std::vector<T>> : std::true_type {};

const char* json_type(const json& j) { return j.type_name(); }

template <class T>
T convert(const json& j, const std::string& path) {
  auto fail = [&](const char* want) {
    throw ConfigError(path + ": expected " + want + ", got " + json_type(j) + " " + j.dump());
  };
  if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) fail("boolean");
    return j.get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!j.is_number_integer()) fail("integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (j.is_number_unsigned()) return static_cast<T>(j.get<std::uint64_t>());
      if (j.get<std::int64_t>() < 0) fail("non-negative integer");
      return static_cast<T>(j.get<std::int64_t>());
    } else {
      return static_cast<T>(j.get<std::int64_t>());
    }
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!j.is_number()) fail("number");
    return j.get<double>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!j.is_string()) fail("string");
    return j.get<std::string>();
  } else if constexpr (is_vector<T>::value) {
    if (!j.is_array()) fail("array");
    T out;
    for (std::size_t i = 0; i < j.size(); ++i)
      out.push_back(convert<typename T::value_type>(j[i], path + "[" + std::to_string(i) + "]"));
    return out;
  }
}

// Reads the keys of one JSON object and rejects anything left unread.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError((path_.empty() ? "config" : path_) + ": expected object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (j_.contains(key)) out = convert<T>(j_.at(key), name(key));
  }

  template <class T>
  void opt(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) out.reset();
    else out = convert<T>(j_.at(key), name(key));
  }

  Reader sub(const char* key) {
    seen_.insert(key);
    static const json kEmpty = json::object();
    return Reader(j_.contains(key) ? j_.at(key) : kEmpty, name(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + name(it.key()) + "'");
  }

 private:
  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_stft(Reader r, StftConfig& s) {
  r.get("win_length", s.win_length);
  r.get("n_fft", s.n_fft);
  r.get("hop", s.hop);
  r.get("pad_tail", s.pad_tail);
  r.finish();
}

json stft_json(const StftConfig& s) {
  return {{"win_length", s.win_length}, {"n_fft", s.n_fft}, {"hop", s.hop}, {"pad_tail", s.pad_tail}};
}

void read_stage(Reader r, StageConfig& s) {
  r.get("alpha_cnn", s.alpha_cnn);
  r.get("alpha_rnn", s.alpha_rnn);
  r.opt("alpha_encoder", s.alpha_encoder);
  r.get("r_mt_max", s.r_mt_max);
  r.opt("r_ict_max", s.r_ict_max);
  r.get("r_eps", s.r_eps);
  r.get("total_epochs", s.total_epochs);
  r.opt("llrd_factor", s.llrd_factor);
  r.get("encoder_frozen", s.encoder_frozen);
  r.get("cosine_decay", s.cosine_decay);
  r.get("patience", s.patience);
  r.finish();
}

json nullable(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json stage_json(const StageConfig& s) {
  return {{"alpha_cnn", s.alpha_cnn},
          {"alpha_rnn", s.alpha_rnn},
          {"alpha_encoder", nullable(s.alpha_encoder)},
          {"r_mt_max", s.r_mt_max},
          {"r_ict_max", nullable(s.r_ict_max)},
          {"r_eps", s.r_eps},
          {"total_epochs", s.total_epochs},
          {"llrd_factor", nullable(s.llrd_factor)},
          {"encoder_frozen", s.encoder_frozen},
          {"cosine_decay", s.cosine_decay},
          {"patience", s.patience}};
}

void read_psds(Reader r, PsdsParams& p) {
  r.get("dtc", p.dtc);
  r.get("gtc", p.gtc);
  r.opt("cttc", p.cttc);
  r.get("alpha_ct", p.alpha_ct);
  r.get("alpha_st", p.alpha_st);
  r.get("e_max", p.e_max);
  r.get("thresholds", p.thresholds);
  r.finish();
}

json psds_json(const PsdsParams& p) {
  return {{"dtc", p.dtc},           {"gtc", p.gtc},     {"cttc", nullable(p.cttc)}, {"alpha_ct", p.alpha_ct},
          {"alpha_st", p.alpha_st}, {"e_max", p.e_max}, {"thresholds", p.thresholds}};
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return json(text);
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' must look like key.path=value");
  const std::string path = assignment.substr(0, eq);
  json* node = &doc;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ConfigError("override '" + assignment + "' has an empty path component");
    parts.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override '" + path + "': '" + parts[i] + "' is not an object");
    if (!node->contains(parts[i])) (*node)[parts[i]] = json::object();
    node = &(*node)[parts[i]];
  }
  if (!node->is_object()) throw ConfigError("override '" + path + "': parent is not an object");
  (*node)[parts.back()] = parse_value(assignment.substr(eq + 1));
}

}  // namespace

void RunConfig::validate() const {
  frozen.validate();
  finetune.validate();
  eval.psds1.validate();
  eval.psds2.validate();
  if (!frozen.encoder_frozen) throw ConfigError("stages.frozen.encoder_frozen must be true");
  if (finetune.encoder_frozen) throw ConfigError("stages.finetune.encoder_frozen must be false");
  if (batch.total() == 0) throw ConfigError("batch: at least one stream needs a positive size");
  if (!(augment.p_mixup >= 0 && augment.p_mixup <= 1 && augment.p_fw >= 0 && augment.p_fw <= 1))
    throw ConfigError("augment: probabilities must lie in [0, 1]");
  if (!(augment.beta_alpha > 0)) throw ConfigError("augment.beta_alpha must be positive");
  if (!(augment.fw_min > 0 && augment.fw_min <= augment.fw_max)) throw ConfigError("augment: need 0 < fw_min <= fw_max");
  if (features.n_mels == 0 || !(features.f_max > features.f_min) || features.f_max > features.sample_rate / 2.0)
    throw ConfigError("features: need n_mels > 0 and f_min < f_max <= sample_rate / 2");
  if (features.patch_size == 0 || features.n_mels % features.patch_size != 0)
    throw ConfigError("features.n_mels must be a multiple of features.patch_size");
  if (features.frame_token_frames == 0) throw ConfigError("features.frame_token_frames must be positive");
  if (features.sample_rate != corpus.generator.sample_rate)
    throw ConfigError("features.sample_rate must equal corpus.generator.sample_rate");
  for (const auto* s : {&features.cnn, &features.encoder})
    if (s->hop == 0 || s->win_length == 0 || s->n_fft < s->win_length)
      throw ConfigError("features: need hop > 0 and n_fft >= win_length > 0");
  for (std::size_t m : eval.median_len)
    if (m == 0 || m % 2 == 0) throw ConfigError("eval.median_len entries must be odd and positive");
  if (eval.median_len.empty()) throw ConfigError("eval.median_len must not be empty");
  if (!(eval.f1_threshold > 0 && eval.f1_threshold < 1)) throw ConfigError("eval.f1_threshold must lie in (0, 1)");
  if (!(eval.f1_collar >= 0)) throw ConfigError("eval.f1_collar must be >= 0");
  if (!(train.ema_max_decay >= 0 && train.ema_max_decay <= 1)) throw ConfigError("train.ema_max_decay must lie in [0, 1]");
  if (!(train.clip_norm >= 0)) throw ConfigError("train.clip_norm must be >= 0");
  if (train.eval_batch == 0 || train.log_every == 0) throw ConfigError("train.eval_batch and train.log_every must be positive");
  if (train.max_steps_per_epoch && *train.max_steps_per_epoch == 0)
    throw ConfigError("train.max_steps_per_epoch must be positive when set");
  // Constructing the model checks widths and pooling.
  ModelSpec probe = model;
  SedModel check(probe, features, 0);
}

RunConfig parse_run_config(const std::string& json_text, const std::vector<std::string>& overrides) {
  json doc;
  try {
    doc = json_text.empty() ? json::object() : json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  for (const auto& o : overrides) apply_override(doc, o);

  RunConfig c;
  Reader root(doc, "");
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);
  {
    Reader r = root.sub("corpus");
    r.get("manifest", c.corpus.manifest);
    r.get("data_dir", c.corpus.data_dir);
    Reader g = r.sub("generator");
    auto& s = c.corpus.generator;
    g.get("n_classes", s.n_classes);
    g.get("strong", s.strong);
    g.get("weak", s.weak);
    g.get("unlabeled", s.unlabeled);
    g.get("clip_seconds", s.clip_seconds);
    g.get("seed", s.seed);
    g.get("validation_fraction", s.validation_fraction);
    g.get("min_events", s.min_events);
    g.get("max_events", s.max_events);
    g.get("min_event_seconds", s.min_event_seconds);
    g.get("max_event_seconds", s.max_event_seconds);
    g.get("noise_db", s.noise_db);
    g.get("event_peak", s.event_peak);
    g.get("sample_rate", s.sample_rate);
    g.finish();
    r.finish();
  }
  {
    Reader r = root.sub("features");
    auto& f = c.features;
    r.get("sample_rate", f.sample_rate);
    r.get("n_mels", f.n_mels);
    r.get("f_min", f.f_min);
    r.get("f_max", f.f_max);
    r.get("log_eps", f.log_eps);
    read_stft(r.sub("cnn"), f.cnn);
    read_stft(r.sub("encoder"), f.encoder);
    r.get("frame_token_frames", f.frame_token_frames);
    r.get("patch_size", f.patch_size);
    r.finish();
  }
  {
    Reader r = root.sub("augment");
    auto& a = c.augment;
    r.get("p_mixup", a.p_mixup);
    r.get("p_fw", a.p_fw);
    r.get("beta_alpha", a.beta_alpha);
    r.get("fw_min", a.fw_min);
    r.get("fw_max", a.fw_max);
    r.finish();
  }
  {
    Reader r = root.sub("model");
    auto& m = c.model;
    Reader cnn = r.sub("cnn");
    cnn.get("channels", m.cnn.channels);
    cnn.get("time_pool", m.cnn.time_pool);
    cnn.get("freq_pool", m.cnn.freq_pool);
    cnn.get("activation", m.cnn.activation);
    cnn.finish();
    Reader enc = r.sub("encoder");
    std::string kind = to_string(m.encoder.kind);
    enc.get("kind", kind);
    try {
      m.encoder.kind = encoder_kind_from_string(kind);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("model.encoder.kind: ") + e.what());
    }
    enc.get("n_blocks", m.encoder.n_blocks);
    enc.get("width", m.encoder.width);
    enc.get("n_heads", m.encoder.n_heads);
    enc.get("mlp_ratio", m.encoder.mlp_ratio);
    enc.get("init", m.encoder.init);
    enc.get("checkpoint", m.encoder.checkpoint);
    enc.finish();
    if (m.encoder.init != "random" && m.encoder.init != "checkpoint")
      throw ConfigError("model.encoder.init must be 'random' or 'checkpoint'");
    if (m.encoder.init == "checkpoint" && m.encoder.checkpoint.empty())
      throw ConfigError("model.encoder.checkpoint is required when init is 'checkpoint'");
    r.get("merge_width", m.merge_width);
    r.get("rnn_hidden", m.rnn_hidden);
    r.get("rnn_layers", m.rnn_layers);
    r.finish();
    c.model.n_classes = static_cast<std::size_t>(std::max(c.corpus.generator.n_classes, 1));
  }
  {
    Reader r = root.sub("batch");
    r.get("strong_real", c.batch.strong_real);
    r.get("strong_synth", c.batch.strong_synth);
    r.get("weak", c.batch.weak);
    r.get("unlabeled", c.batch.unlabeled);
    r.finish();
  }
  {
    Reader r = root.sub("train");
    auto& t = c.train;
    r.get("ema_max_decay", t.ema_max_decay);
    r.get("clip_norm", t.clip_norm);
    Reader a = r.sub("adam");
    a.get("beta1", t.adam.beta1);
    a.get("beta2", t.adam.beta2);
    a.get("eps", t.adam.eps);
    a.finish();
    r.get("supervised", t.supervised);
    r.get("consistency_unlabeled_only", t.consistency_unlabeled_only);
    r.get("eval_batch", t.eval_batch);
    r.opt("max_steps_per_epoch", t.max_steps_per_epoch);
    r.get("log_every", t.log_every);
    r.finish();
  }
  {
    c.frozen = stage_config_defaults(Stage::Frozen, c.model.encoder.kind);
    c.finetune = stage_config_defaults(Stage::Finetune, c.model.encoder.kind);
    Reader r = root.sub("stages");
    read_stage(r.sub("frozen"), c.frozen);
    read_stage(r.sub("finetune"), c.finetune);
    r.finish();
  }
  {
    Reader r = root.sub("eval");
    read_psds(r.sub("psds1"), c.eval.psds1);
    read_psds(r.sub("psds2"), c.eval.psds2);
    r.get("median_len", c.eval.median_len);
    r.get("f1_threshold", c.eval.f1_threshold);
    r.get("f1_collar", c.eval.f1_collar);
    r.finish();
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path.string());
  std::string text((std::istreambuf_iterator<char>(f)), {});
  return parse_run_config(text, overrides);
}

namespace {

json to_json_doc(const RunConfig& c) {
  const auto& g = c.corpus.generator;
  const auto& f = c.features;
  const auto& m = c.model;
  const auto& t = c.train;
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["corpus"] = {{"manifest", c.corpus.manifest},
                 {"data_dir", c.corpus.data_dir},
                 {"generator",
                  {{"n_classes", g.n_classes},
                   {"strong", g.strong},
                   {"weak", g.weak},
                   {"unlabeled", g.unlabeled},
                   {"clip_seconds", g.clip_seconds},
                   {"seed", g.seed},
                   {"validation_fraction", g.validation_fraction},
                   {"min_events", g.min_events},
                   {"max_events", g.max_events},
                   {"min_event_seconds", g.min_event_seconds},
                   {"max_event_seconds", g.max_event_seconds},
                   {"noise_db", g.noise_db},
                   {"event_peak", g.event_peak},
                   {"sample_rate", g.sample_rate}}}};
  j["features"] = {{"sample_rate", f.sample_rate},
                   {"n_mels", f.n_mels},
                   {"f_min", f.f_min},
                   {"f_max", f.f_max},
                   {"log_eps", f.log_eps},
                   {"cnn", stft_json(f.cnn)},
                   {"encoder", stft_json(f.encoder)},
                   {"frame_token_frames", f.frame_token_frames},
                   {"patch_size", f.patch_size}};
  j["augment"] = {{"p_mixup", c.augment.p_mixup},
                  {"p_fw", c.augment.p_fw},
                  {"beta_alpha", c.augment.beta_alpha},
                  {"fw_min", c.augment.fw_min},
                  {"fw_max", c.augment.fw_max}};
  j["model"] = {{"cnn",
                 {{"channels", m.cnn.channels},
                  {"time_pool", m.cnn.time_pool},
                  {"freq_pool", m.cnn.freq_pool},
                  {"activation", m.cnn.activation}}},
                {"encoder",
                 {{"kind", to_string(m.encoder.kind)},
                  {"n_blocks", m.encoder.n_blocks},
                  {"width", m.encoder.width},
                  {"n_heads", m.encoder.n_heads},
                  {"mlp_ratio", m.encoder.mlp_ratio},
                  {"init", m.encoder.init},
                  {"checkpoint", m.encoder.checkpoint}}},
                {"merge_width", m.merge_width},
                {"rnn_hidden", m.rnn_hidden},
                {"rnn_layers", m.rnn_layers}};
  j["batch"] = {{"strong_real", c.batch.strong_real},
                {"strong_synth", c.batch.strong_synth},
                {"weak", c.batch.weak},
                {"unlabeled", c.batch.unlabeled}};
  j["train"] = {{"ema_max_decay", t.ema_max_decay},
                {"clip_norm", t.clip_norm},
                {"adam", {{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}}},
                {"supervised", t.supervised},
                {"consistency_unlabeled_only", t.consistency_unlabeled_only},
                {"eval_batch", t.eval_batch},
                {"max_steps_per_epoch", t.max_steps_per_epoch ? json(*t.max_steps_per_epoch) : json(nullptr)},
                {"log_every", t.log_every}};
  j["stages"] = {{"frozen", stage_json(c.frozen)}, {"finetune", stage_json(c.finetune)}};
  j["eval"] = {{"psds1", psds_json(c.eval.psds1)},
               {"psds2", psds_json(c.eval.psds2)},
               {"median_len", c.eval.median_len},
               {"f1_threshold", c.eval.f1_threshold},
               {"f1_collar", c.eval.f1_collar}};
  return j;
}

const std::set<std::string> kNullableNumbers{"alpha_encoder", "r_ict_max", "llrd_factor", "cttc"};
const std::set<std::string> kNullableIntegers{"max_steps_per_epoch"};

json schema_of(const std::string& key, const json& v) {
  if (kNullableNumbers.count(key)) return {{"type", json::array({"number", "null"})}};
  if (kNullableIntegers.count(key)) return {{"type", json::array({"integer", "null"})}, {"minimum", 1}};
  if (v.is_object()) {
    json props = json::object();
    for (auto it = v.begin(); it != v.end(); ++it) props[it.key()] = schema_of(it.key(), it.value());
    return {{"type", "object"}, {"additionalProperties", false}, {"properties", props}};
  }
  if (v.is_array()) {
    const bool ints = !v.empty() && v.front().is_number_integer();
    return {{"type", "array"}, {"items", {{"type", ints ? "integer" : "number"}}}};
  }
  if (v.is_boolean()) return {{"type", "boolean"}};
  if (v.is_number_unsigned()) return {{"type", "integer"}, {"minimum", 0}};
  if (v.is_number_integer()) return {{"type", "integer"}};
  if (v.is_number()) return {{"type", "number"}};
  return {{"type", "string"}};
}

}  // namespace

std::string to_json(const RunConfig& cfg) { return to_json_doc(cfg).dump(2); }

std::string config_schema() {
  json s = schema_of("", to_json_doc(RunConfig{}));
  s["$schema"] = "https://json-schema.org/draft/2020-12/schema";
  s["title"] = "sedtune run configuration";
  s["properties"]["model"]["properties"]["encoder"]["properties"]["kind"]["enum"] = {"frame", "patch"};
  s["properties"]["model"]["properties"]["encoder"]["properties"]["init"]["enum"] = {"random", "checkpoint"};
  s["properties"]["model"]["properties"]["cnn"]["properties"]["activation"]["enum"] = {"relu", "gelu"};
  return s.dump(2);
}

}  // namespace sedtune
