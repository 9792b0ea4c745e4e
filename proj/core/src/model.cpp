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

#include "sedtune/model.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>

#include "sedtune/error.hpp"
#include "sedtune/ops.hpp"

namespace sedtune {

using ag::Var;

const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::Cnn: return "cnn";
    case ParamGroup::Rnn: return "rnn";
    case ParamGroup::EncoderEmbed: return "encoder_embed";
    case ParamGroup::EncoderBlock: return "encoder_block";
  }
  return "?";
}

double EncoderSpec::token_resolution(const FeatureConfig& f) const {
  const double hop = static_cast<double>(f.encoder.hop) / f.sample_rate;
  return hop * static_cast<double>(kind == EncoderKind::FrameWise ? f.frame_token_frames : f.patch_size);
}

Tensor sinusoidal_positions(std::size_t positions, std::size_t width) {
  Tensor pe({positions, width});
  for (std::size_t p = 0; p < positions; ++p)
    for (std::size_t i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      pe[p * width + i] = (i % 2 == 0) ? std::sin(p * freq) : std::cos(p * freq);
    }
  return pe;
}

Var adaptive_pool_align(const Var& seq, std::size_t target_len) {
  if (target_len == 0) throw ContractError("adaptive_pool_align: target length must be positive");
  return ag::adaptive_avg_pool_time(seq, target_len);
}

namespace {

enum class Init { Zeros, Ones, He, Xavier, Recurrent, Small };

void fill_init(Tensor& t, Init init, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  switch (init) {
    case Init::Zeros: t.fill(0.0); break;
    case Init::Ones: t.fill(1.0); break;
    case Init::He: {
      const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (auto& v : t.values()) v = normal(rng, 0.0, sd);
      break;
    }
    case Init::Xavier: {
      const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      for (auto& v : t.values()) v = uniform(rng, -a, a);
      break;
    }
    case Init::Recurrent: {
      const double a = 1.0 / std::sqrt(static_cast<double>(fan_out));
      for (auto& v : t.values()) v = uniform(rng, -a, a);
      break;
    }
    case Init::Small:
      for (auto& v : t.values()) v = normal(rng, 0.0, 0.02);
      break;
  }
}

}  // namespace

SedModel::SedModel(const ModelSpec& spec, const FeatureConfig& features, std::uint64_t seed)
    : spec_(spec), features_(features), init_rng_(seed) {
  const auto& c = spec.cnn;
  if (c.channels.empty() || c.channels.size() != c.time_pool.size() || c.channels.size() != c.freq_pool.size())
    throw ConfigError("cnn: channels, time_pool and freq_pool must be non-empty and equally long");
  if (c.activation != "relu" && c.activation != "gelu") throw ConfigError("cnn.activation must be relu or gelu");
  const auto& e = spec.encoder;
  if (e.width == 0 || e.n_heads == 0 || e.width % e.n_heads != 0)
    throw ConfigError("encoder.width must be a positive multiple of encoder.n_heads");
  if (e.n_blocks == 0) throw ConfigError("encoder.n_blocks must be >= 1");
  if (spec.n_classes == 0 || spec.rnn_hidden == 0 || spec.rnn_layers == 0 || spec.merge_width == 0)
    throw ConfigError("model widths must be positive");

  auto make = [&](const std::string& name, Shape shape, ParamGroup g, int block, Init init, std::size_t fan_in,
                  std::size_t fan_out) {
    Var v = add_param(name, std::move(shape), g, block);
    fill_init(v.mutable_value(), init, fan_in, fan_out, init_rng_);
  };

  std::size_t cin = 1;
  for (std::size_t b = 0; b < c.channels.size(); ++b) {
    const std::string pre = "cnn." + std::to_string(b) + ".";
    const std::size_t co = c.channels[b];
    make(pre + "conv.w", {9 * cin, co}, ParamGroup::Cnn, -1, Init::He, 9 * cin, co);
    make(pre + "conv.b", {co}, ParamGroup::Cnn, -1, Init::Zeros, 0, 0);
    make(pre + "norm.g", {co}, ParamGroup::Cnn, -1, Init::Ones, 0, 0);
    make(pre + "norm.b", {co}, ParamGroup::Cnn, -1, Init::Zeros, 0, 0);
    cin = co;
  }

  const std::size_t D = e.width;
  const TokenGrid grid = token_grid(e.kind, features.patch_size * 4, features);
  make("encoder.embed.w", {grid.dim, D}, ParamGroup::EncoderEmbed, -1, Init::Xavier, grid.dim, D);
  make("encoder.embed.b", {D}, ParamGroup::EncoderEmbed, -1, Init::Zeros, 0, 0);
  if (e.kind == EncoderKind::PatchWise)
    make("encoder.freq_embed", {grid.per_column, D}, ParamGroup::EncoderEmbed, -1, Init::Small, 0, 0);
  const std::size_t M = D * e.mlp_ratio;
  for (std::size_t i = 0; i < e.n_blocks; ++i) {
    const std::string pre = "encoder.block" + std::to_string(i) + ".";
    const int blk = static_cast<int>(i);
    make(pre + "ln1.g", {D}, ParamGroup::EncoderBlock, blk, Init::Ones, 0, 0);
    make(pre + "ln1.b", {D}, ParamGroup::EncoderBlock, blk, Init::Zeros, 0, 0);
    make(pre + "attn.qkv.w", {D, 3 * D}, ParamGroup::EncoderBlock, blk, Init::Xavier, D, D);
    make(pre + "attn.qkv.b", {3 * D}, ParamGroup::EncoderBlock, blk, Init::Zeros, 0, 0);
    make(pre + "attn.proj.w", {D, D}, ParamGroup::EncoderBlock, blk, Init::Xavier, D, D);
    make(pre + "attn.proj.b", {D}, ParamGroup::EncoderBlock, blk, Init::Zeros, 0, 0);
    make(pre + "ln2.g", {D}, ParamGroup::EncoderBlock, blk, Init::Ones, 0, 0);
    make(pre + "ln2.b", {D}, ParamGroup::EncoderBlock, blk, Init::Zeros, 0, 0);
    make(pre + "mlp.fc1.w", {D, M}, ParamGroup::EncoderBlock, blk, Init::Xavier, D, M);
    make(pre + "mlp.fc1.b", {M}, ParamGroup::EncoderBlock, blk, Init::Zeros, 0, 0);
    make(pre + "mlp.fc2.w", {M, D}, ParamGroup::EncoderBlock, blk, Init::Xavier, M, D);
    make(pre + "mlp.fc2.b", {D}, ParamGroup::EncoderBlock, blk, Init::Zeros, 0, 0);
  }
  const int last = static_cast<int>(e.n_blocks) - 1;
  make("encoder.final_ln.g", {D}, ParamGroup::EncoderBlock, last, Init::Ones, 0, 0);
  make("encoder.final_ln.b", {D}, ParamGroup::EncoderBlock, last, Init::Zeros, 0, 0);

  const std::size_t dc = cnn_width(features.n_mels);
  make("merge.w", {dc + D, spec.merge_width}, ParamGroup::Rnn, -1, Init::Xavier, dc + D, spec.merge_width);
  make("merge.b", {spec.merge_width}, ParamGroup::Rnn, -1, Init::Zeros, 0, 0);
  const std::size_t H = spec.rnn_hidden;
  std::size_t din = spec.merge_width;
  for (std::size_t l = 0; l < spec.rnn_layers; ++l) {
    for (const char* dir : {"fwd", "bwd"}) {
      const std::string pre = "rnn." + std::to_string(l) + "." + dir + ".";
      make(pre + "wx", {din, 3 * H}, ParamGroup::Rnn, -1, Init::Recurrent, din, H);
      make(pre + "wh", {H, 3 * H}, ParamGroup::Rnn, -1, Init::Recurrent, H, H);
      make(pre + "bx", {3 * H}, ParamGroup::Rnn, -1, Init::Recurrent, 0, H);
      make(pre + "bh", {3 * H}, ParamGroup::Rnn, -1, Init::Recurrent, 0, H);
    }
    din = 2 * H;
  }
  const std::size_t C = spec.n_classes;
  make("head.strong.w", {2 * H, C}, ParamGroup::Rnn, -1, Init::Xavier, 2 * H, C);
  make("head.strong.b", {C}, ParamGroup::Rnn, -1, Init::Zeros, 0, 0);
  make("head.attn.w", {2 * H, C}, ParamGroup::Rnn, -1, Init::Xavier, 2 * H, C);
  make("head.attn.b", {C}, ParamGroup::Rnn, -1, Init::Zeros, 0, 0);
}

Var SedModel::add_param(const std::string& name, Shape shape, ParamGroup group, int block) {
  if (index_.count(name)) throw ContractError("duplicate parameter " + name);
  Var v(Tensor(std::move(shape)), true);
  index_[name] = params_.size();
  params_.push_back({name, v, group, block});
  return v;
}

const Param& SedModel::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter " + name);
  return params_[it->second];
}

const Var& SedModel::p(const std::string& name) const { return param(name).var; }

std::size_t SedModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& q : params_) n += q.var.value().size();
  return n;
}

void SedModel::set_encoder_frozen(bool frozen) {
  encoder_frozen_ = frozen;
  for (auto& q : params_)
    if (q.group == ParamGroup::EncoderEmbed || q.group == ParamGroup::EncoderBlock) q.var.set_requires_grad(!frozen);
}

std::size_t SedModel::cnn_time_stride() const {
  return std::accumulate(spec_.cnn.time_pool.begin(), spec_.cnn.time_pool.end(), std::size_t{1},
                         std::multiplies<>());
}

std::size_t SedModel::cnn_output_frames(std::size_t t) const {
  for (std::size_t p : spec_.cnn.time_pool) t /= p;
  return t;
}

std::size_t SedModel::cnn_width(std::size_t f) const {
  for (std::size_t p : spec_.cnn.freq_pool) f /= p;
  if (f == 0) throw ConfigError("cnn frequency pooling exceeds the number of mel bins");
  return f * spec_.cnn.channels.back();
}

double SedModel::output_frame_hop() const {
  return static_cast<double>(features_.cnn.hop) / features_.sample_rate * static_cast<double>(cnn_time_stride());
}

namespace {

Tensor standardized(const Tensor& x, double mean, double sd) {
  Tensor out(x.shape());
  const double inv = 1.0 / sd;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) * inv;
  return out;
}

}  // namespace

Var SedModel::cnn_forward(const Tensor& cnn_mel) const {
  if (cnn_mel.rank() != 3) throw ContractError("cnn_forward: expected [N, T, F] log-mel");
  const std::size_t N = cnn_mel.dim(0), T = cnn_mel.dim(1), F = cnn_mel.dim(2);
  if (cnn_output_frames(T) == 0) throw ContractError("cnn_forward: input shorter than the CNN time stride");
  const std::size_t dc = cnn_width(F);
  Var x(standardized(cnn_mel, stats_.cnn_mean, stats_.cnn_std).reshaped({N, T, F, 1}));
  const bool gelu = spec_.cnn.activation == "gelu";
  for (std::size_t b = 0; b < spec_.cnn.channels.size(); ++b) {
    const std::string pre = "cnn." + std::to_string(b) + ".";
    x = ag::conv3x3(x, p(pre + "conv.w"), p(pre + "conv.b"));
    x = ag::layer_norm(x, x.dim(2) * x.dim(3), p(pre + "norm.g"), p(pre + "norm.b"));
    x = gelu ? ag::gelu(x) : ag::relu(x);
    x = ag::avg_pool2d(x, spec_.cnn.time_pool[b], spec_.cnn.freq_pool[b]);
  }
  return ag::reshape(x, {N, x.dim(1), dc});
}

Var SedModel::encoder_tokens_var(const Tensor& enc_mel) const {
  if (enc_mel.rank() != 3) throw ContractError("encoder_forward: expected [N, T, F] log-mel");
  if (enc_mel.dim(2) != features_.n_mels) throw ContractError("encoder_forward: token width mismatch");
  MelSpectrogram m;
  m.origin = Branch::Encoder;
  m.values = standardized(enc_mel, stats_.enc_mean, stats_.enc_std);
  return Var(encoder_tokens(m, spec_.encoder.kind, features_));
}

Var SedModel::transformer(Var x) const {
  const auto& e = spec_.encoder;
  const std::size_t L = x.dim(1), D = e.width;
  x = ag::linear(x, p("encoder.embed.w"), p("encoder.embed.b"));
  if (e.kind == EncoderKind::FrameWise) {
    x = ag::add_constant(x, sinusoidal_positions(L, D));
  } else {
    const std::size_t P = features_.n_mels / features_.patch_size;
    const Tensor pe = sinusoidal_positions(L / P, D);
    Tensor table({L, D});
    for (std::size_t l = 0; l < L; ++l) std::copy_n(pe.data() + (l / P) * D, D, table.data() + l * D);
    x = ag::add_constant(x, table);
    x = ag::add_broadcast(x, p("encoder.freq_embed"));
  }
  for (std::size_t i = 0; i < e.n_blocks; ++i) {
    const std::string pre = "encoder.block" + std::to_string(i) + ".";
    Var h = ag::layer_norm(x, D, p(pre + "ln1.g"), p(pre + "ln1.b"));
    h = ag::self_attention(ag::linear(h, p(pre + "attn.qkv.w"), p(pre + "attn.qkv.b")), e.n_heads);
    x = ag::add(x, ag::linear(h, p(pre + "attn.proj.w"), p(pre + "attn.proj.b")));
    h = ag::layer_norm(x, D, p(pre + "ln2.g"), p(pre + "ln2.b"));
    h = ag::gelu(ag::linear(h, p(pre + "mlp.fc1.w"), p(pre + "mlp.fc1.b")));
    x = ag::add(x, ag::linear(h, p(pre + "mlp.fc2.w"), p(pre + "mlp.fc2.b")));
  }
  return ag::layer_norm(x, D, p("encoder.final_ln.g"), p("encoder.final_ln.b"));
}

Var SedModel::encoder_token_states(const Tensor& enc_mel) const {
  std::optional<ag::NoGradGuard> guard;
  if (encoder_frozen_) guard.emplace();
  return transformer(encoder_tokens_var(enc_mel));
}

Var SedModel::encoder_forward(const Tensor& enc_mel) const {
  Var h = encoder_token_states(enc_mel);
  if (spec_.encoder.kind == EncoderKind::PatchWise)
    h = ag::group_mean(h, features_.n_mels / features_.patch_size);
  return h;
}

PredictionPair SedModel::heads_forward(const Var& cnn_seq, const Var& enc_seq) const {
  if (cnn_seq.shape().size() != 3 || enc_seq.shape().size() != 3 || cnn_seq.dim(0) != enc_seq.dim(0))
    throw ContractError("heads_forward: branch outputs must be [N, T, D] with equal N");
  const std::size_t T = cnn_seq.dim(1);
  Var aligned = adaptive_pool_align(enc_seq, T);
  Var x = ag::linear(ag::concat_last(cnn_seq, aligned), p("merge.w"), p("merge.b"));
  for (std::size_t l = 0; l < spec_.rnn_layers; ++l) {
    const std::string pre = "rnn." + std::to_string(l) + ".";
    Var f = ag::gru(x, p(pre + "fwd.wx"), p(pre + "fwd.wh"), p(pre + "fwd.bx"), p(pre + "fwd.bh"), false);
    Var b = ag::gru(x, p(pre + "bwd.wx"), p(pre + "bwd.wh"), p(pre + "bwd.bx"), p(pre + "bwd.bh"), true);
    x = ag::concat_last(f, b);
  }
  Var logits = ag::linear(x, p("head.strong.w"), p("head.strong.b"));
  Var scores = ag::linear(x, p("head.attn.w"), p("head.attn.b"));
  PredictionPair out;
  out.strong = ag::sigmoid(logits);
  out.weak = ag::sigmoid(ag::attention_pool(logits, scores));
  out.frame_hop = output_frame_hop();
  return out;
}

PredictionPair SedModel::forward(const Tensor& cnn_mel, const Tensor& enc_mel) const {
  return heads_forward(cnn_forward(cnn_mel), encoder_forward(enc_mel));
}

void SedModel::copy_from(const SedModel& other) {
  if (other.params_.size() != params_.size()) throw ContractError("copy_from: parameter trees differ");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name != other.params_[i].name || params_[i].var.shape() != other.params_[i].var.shape())
      throw ContractError("copy_from: parameter trees differ at " + params_[i].name);
    params_[i].var.mutable_value() = other.params_[i].var.value();
  }
  stats_ = other.stats_;
}

std::vector<EmbeddingRow> export_frame_embeddings(const SedModel& model, const std::vector<AnnotatedClip>& clips,
                                                  const std::vector<std::string>& class_names, Rng& rng) {
  if (clips.empty()) throw ValidationError("export_frame_embeddings: no clips");
  ag::NoGradGuard no_grad;
  LogMelExtractor enc(model.features(), Branch::Encoder);
  LogMelExtractor cnn(model.features(), Branch::Cnn);
  std::vector<EmbeddingRow> rows;
  for (const auto& clip : clips) {
    MelSpectrogram mel = enc(clip.samples);
    const std::size_t T = model.cnn_output_frames(cnn.frame_count(clip.samples.size()));
    if (T == 0) throw ValidationError("export_frame_embeddings: clip '" + clip.id + "' too short");
    Var seq = model.encoder_forward(mel.values.reshaped({1, mel.frames(), mel.n_mels}));
    Var aligned = adaptive_pool_align(seq, T);
    const std::size_t k = uniform_index(rng, T);
    const std::size_t D = aligned.dim(2);
    EmbeddingRow row;
    row.clip_id = clip.id;
    row.frame = k;
    row.values.assign(aligned.value().data() + k * D, aligned.value().data() + (k + 1) * D);
    std::set<std::string> ctx;
    const double hop = model.output_frame_hop();
    if (clip.kind == Supervision::Strong) {
      for (const auto& e : clip.events)
        if (std::lround(e.onset / hop) <= static_cast<long>(k) && static_cast<long>(k) < std::lround(e.offset / hop))
          ctx.insert(class_names.at(static_cast<std::size_t>(e.class_id)));
    } else if (clip.kind == Supervision::Weak) {
      for (int t : clip.tags) ctx.insert(class_names.at(static_cast<std::size_t>(t)));
    }
    if (clip.kind == Supervision::Unlabeled) {
      row.context = "unlabeled";
    } else if (ctx.empty()) {
      row.context = "none";
    } else {
      for (const auto& c : ctx) row.context += (row.context.empty() ? "" : ",") + c;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_embeddings_tsv(const std::vector<EmbeddingRow>& rows, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "clip_id\tcontext\tframe";
  const std::size_t D = rows.empty() ? 0 : rows.front().values.size();
  for (std::size_t i = 0; i < D; ++i) f << "\te" << i;
  f << '\n';
  f.precision(9);
  for (const auto& r : rows) {
    f << r.clip_id << '\t' << r.context << '\t' << r.frame;
    for (double v : r.values) f << '\t' << v;
    f << '\n';
  }
}

InputStats fit_input_stats(const std::vector<AnnotatedClip>& clips, const FeatureConfig& features) {
  if (clips.empty()) throw ValidationError("fit_input_stats: no clips");
  LogMelExtractor cnn(features, Branch::Cnn), enc(features, Branch::Encoder);
  auto moments = [&](LogMelExtractor& ex, double& mean, double& sd) {
    double s = 0, s2 = 0;
    std::size_t n = 0;
    for (const auto& c : clips) {
      MelSpectrogram m = ex(c.samples);
      for (double v : m.values.values()) {
        s += v;
        s2 += v * v;
      }
      n += m.values.size();
    }
    mean = s / static_cast<double>(n);
    sd = std::sqrt(std::max(s2 / static_cast<double>(n) - mean * mean, 1e-12));
  };
  InputStats st;
  moments(cnn, st.cnn_mean, st.cnn_std);
  moments(enc, st.enc_mean, st.enc_std);
  return st;
}

}  // namespace sedtune
