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

#include "sedtune/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sedtune/error.hpp"

namespace sedtune {

namespace fs = std::filesystem;

const char* to_string(Supervision kind) {
  switch (kind) {
    case Supervision::Strong: return "strong";
    case Supervision::Weak: return "weak";
    case Supervision::Unlabeled: return "unlabeled";
  }
  return "?";
}

const char* to_string(Split split) {
  switch (split) {
    case Split::StrongReal: return "strong_real";
    case Split::StrongSynth: return "strong_synth";
    case Split::Weak: return "weak";
    case Split::Unlabeled: return "unlabeled";
    case Split::Validation: return "validation";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  for (Split sp : {Split::StrongReal, Split::StrongSynth, Split::Weak, Split::Unlabeled, Split::Validation})
    if (s == to_string(sp)) return sp;
  throw ValidationError("unknown split '" + s + "'");
}

Supervision supervision_of(Split split) {
  switch (split) {
    case Split::StrongReal:
    case Split::StrongSynth:
    case Split::Validation: return Supervision::Strong;
    case Split::Weak: return Supervision::Weak;
    case Split::Unlabeled: return Supervision::Unlabeled;
  }
  return Supervision::Unlabeled;
}

void validate_clip(const AnnotatedClip& clip, std::size_t n_classes) {
  const std::string where = "clip '" + clip.id + "': ";
  const double expected = clip.sample_rate > 0 ? clip.samples.size() / static_cast<double>(clip.sample_rate) : -1;
  if (std::abs(expected - clip.duration) > 1e-9) throw ValidationError(where + "duration does not match sample count");
  if (clip.kind != Supervision::Strong && !clip.events.empty())
    throw ValidationError(where + "only strong clips carry events");
  if (clip.kind != Supervision::Weak && !clip.tags.empty())
    throw ValidationError(where + "only weak clips carry tags");
  for (const auto& e : clip.events) {
    if (e.class_id < 0 || static_cast<std::size_t>(e.class_id) >= n_classes)
      throw ValidationError(where + "class id out of range");
    if (!(e.onset >= 0.0 && e.onset < e.offset)) throw ValidationError(where + "event onset must precede offset");
    if (e.offset > clip.duration + 1e-6) throw ValidationError(where + "event extends past clip end");
  }
  for (int t : clip.tags)
    if (t < 0 || static_cast<std::size_t>(t) >= n_classes) throw ValidationError(where + "tag out of range");
}

std::size_t CorpusManifest::count(Split split) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.split == split; }));
}

int CorpusManifest::class_index(const std::string& name) const {
  auto it = std::find(class_names.begin(), class_names.end(), name);
  return it == class_names.end() ? -1 : static_cast<int>(it - class_names.begin());
}

// ---------------------------------------------------------------------------
// Primitives

namespace {

constexpr int kKinds = 5;
constexpr int kVariants = 4;
constexpr double kTwoPi = 6.283185307179586;

const double kTone[kVariants] = {600, 1500, 3200, 6000};
const double kChirp[kVariants][2] = {{300, 1200}, {2000, 800}, {1000, 4000}, {5000, 2500}};
const double kNoise[kVariants][2] = {{2500, 4500}, {500, 1200}, {5000, 7000}, {1200, 2500}};
const double kAm[kVariants][2] = {{1000, 4}, {2200, 8}, {4200, 12}, {800, 6}};
const double kHarmonic[kVariants] = {220, 350, 500, 150};
constexpr int kHarmonics = 6;
constexpr int kNoisePartials = 48;

std::string fmt_hz(double f) { return std::to_string(static_cast<int>(std::lround(f))); }

}  // namespace

std::pair<double, double> ClassPrimitive::band() const {
  switch (kind) {
    case Kind::Tone: return {f_a - 50, f_a + 50};
    case Kind::Chirp: return {std::min(f_a, f_b), std::max(f_a, f_b)};
    case Kind::NoiseBurst: return {f_a, f_b};
    case Kind::AmTone: return {f_a - 50, f_a + 50};
    case Kind::HarmonicStack: return {f_a - 30, kHarmonics * f_a + 30};
  }
  return {0, 0};
}

std::size_t max_toy_classes() { return kKinds * kVariants; }

ClassPrimitive class_primitive(int class_id) {
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= max_toy_classes())
    throw ConfigError("toy generator supports at most " + std::to_string(max_toy_classes()) + " classes");
  const int v = class_id / kKinds;
  ClassPrimitive p{};
  switch (class_id % kKinds) {
    case 0:
      p = {ClassPrimitive::Kind::Tone, kTone[v], 0, "tone_" + fmt_hz(kTone[v])};
      break;
    case 1:
      p = {ClassPrimitive::Kind::Chirp, kChirp[v][0], kChirp[v][1],
           "chirp_" + fmt_hz(kChirp[v][0]) + "_" + fmt_hz(kChirp[v][1])};
      break;
    case 2:
      p = {ClassPrimitive::Kind::NoiseBurst, kNoise[v][0], kNoise[v][1],
           "noise_" + fmt_hz(kNoise[v][0]) + "_" + fmt_hz(kNoise[v][1])};
      break;
    case 3:
      p = {ClassPrimitive::Kind::AmTone, kAm[v][0], kAm[v][1],
           "am_" + fmt_hz(kAm[v][0]) + "_" + fmt_hz(kAm[v][1])};
      break;
    default:
      p = {ClassPrimitive::Kind::HarmonicStack, kHarmonic[v], 0, "harmonic_" + fmt_hz(kHarmonic[v])};
      break;
  }
  return p;
}

std::vector<float> render_event(const ClassPrimitive& p, double seconds, int sample_rate, double peak, Rng& rng) {
  const std::size_t n = static_cast<std::size_t>(std::lround(seconds * sample_rate));
  std::vector<double> s(n, 0.0);
  const double sr = sample_rate;
  switch (p.kind) {
    case ClassPrimitive::Kind::Tone: {
      const double ph = uniform(rng, 0, kTwoPi);
      for (std::size_t i = 0; i < n; ++i) s[i] = std::sin(kTwoPi * p.f_a * (i / sr) + ph);
      break;
    }
    case ClassPrimitive::Kind::Chirp: {
      const double ph = uniform(rng, 0, kTwoPi);
      const double k = (p.f_b - p.f_a) / std::max(seconds, 1e-9);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = i / sr;
        s[i] = std::sin(kTwoPi * (p.f_a * t + 0.5 * k * t * t) + ph);
      }
      break;
    }
    case ClassPrimitive::Kind::NoiseBurst: {
      for (int q = 0; q < kNoisePartials; ++q) {
        const double f = uniform(rng, p.f_a, p.f_b);
        const double ph = uniform(rng, 0, kTwoPi);
        for (std::size_t i = 0; i < n; ++i) s[i] += std::sin(kTwoPi * f * (i / sr) + ph);
      }
      break;
    }
    case ClassPrimitive::Kind::AmTone: {
      const double ph = uniform(rng, 0, kTwoPi);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = i / sr;
        s[i] = (0.55 + 0.45 * std::sin(kTwoPi * p.f_b * t)) * std::sin(kTwoPi * p.f_a * t + ph);
      }
      break;
    }
    case ClassPrimitive::Kind::HarmonicStack: {
      for (int h = 1; h <= kHarmonics; ++h) {
        const double ph = uniform(rng, 0, kTwoPi);
        for (std::size_t i = 0; i < n; ++i) s[i] += std::sin(kTwoPi * h * p.f_a * (i / sr) + ph) / h;
      }
      break;
    }
  }
  double mx = 0.0;
  for (double v : s) mx = std::max(mx, std::abs(v));
  const double g = mx > 0 ? peak / mx : 0.0;
  // 10 ms raised-cosine fades.
  const std::size_t fade = std::min<std::size_t>(static_cast<std::size_t>(0.01 * sr), n / 2);
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double w = 1.0;
    if (fade > 0 && i < fade) w = 0.5 - 0.5 * std::cos(M_PI * i / fade);
    if (fade > 0 && i >= n - fade) w = 0.5 - 0.5 * std::cos(M_PI * (n - 1 - i) / fade);
    out[i] = static_cast<float>(s[i] * g * w);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthesis

namespace {

float quantize16(double x) {
  const double q = std::clamp(std::round(x * 32768.0), -32768.0, 32767.0);
  return static_cast<float>(q / 32768.0);
}

AnnotatedClip synthesize_clip(const GeneratorSpec& spec, Split split, std::size_t index) {
  Rng rng(derive_seed(spec.seed, std::string("clip/") + to_string(split) + "/" + std::to_string(index)));
  const int sr = spec.sample_rate;
  const std::size_t n = static_cast<std::size_t>(std::lround(spec.clip_seconds * sr));
  const double noise_std = spec.event_peak * std::pow(10.0, spec.noise_db / 20.0);
  std::vector<double> mix(n);
  for (auto& v : mix) v = normal(rng, 0.0, noise_std);

  const int n_events = spec.min_events + static_cast<int>(uniform_index(rng, spec.max_events - spec.min_events + 1));
  std::vector<EventAnnotation> events;
  for (int e = 0; e < n_events; ++e) {
    for (int attempt = 0; attempt < 20; ++attempt) {
      const int cls = static_cast<int>(uniform_index(rng, spec.n_classes));
      const double dur = std::min(uniform(rng, spec.min_event_seconds, spec.max_event_seconds), spec.clip_seconds);
      double onset = uniform(rng, 0.0, spec.clip_seconds - dur);
      onset = std::round(onset * 1000.0) / 1000.0;
      double offset = std::min(std::round((onset + dur) * 1000.0) / 1000.0, spec.clip_seconds);
      if (offset <= onset) continue;
      const bool clash = std::any_of(events.begin(), events.end(), [&](const EventAnnotation& o) {
        return o.class_id == cls && onset < o.offset && o.onset < offset;
      });
      if (clash) continue;
      const std::size_t s0 = static_cast<std::size_t>(std::lround(onset * sr));
      const std::size_t s1 = std::min(n, static_cast<std::size_t>(std::lround(offset * sr)));
      auto wave = render_event(class_primitive(cls), (s1 - s0) / static_cast<double>(sr), sr, spec.event_peak, rng);
      for (std::size_t i = 0; i < wave.size() && s0 + i < n; ++i) mix[s0 + i] += wave[i];
      events.push_back({cls, onset, offset});
      break;
    }
  }
  std::sort(events.begin(), events.end(), [](const EventAnnotation& a, const EventAnnotation& b) {
    return std::tie(a.onset, a.class_id, a.offset) < std::tie(b.onset, b.class_id, b.offset);
  });

  AnnotatedClip clip;
  char name[64];
  std::snprintf(name, sizeof name, "%s_%04zu.wav", to_string(split), index);
  clip.id = name;
  clip.sample_rate = sr;
  clip.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) clip.samples[i] = quantize16(mix[i]);
  clip.duration = n / static_cast<double>(sr);
  clip.split = split;
  clip.kind = supervision_of(split);
  if (clip.kind == Supervision::Strong) {
    clip.events = std::move(events);
  } else if (clip.kind == Supervision::Weak) {
    std::set<int> tags;
    for (const auto& e : events) tags.insert(e.class_id);
    clip.tags.assign(tags.begin(), tags.end());
  }
  return clip;
}

}  // namespace

SynthesizedCorpus synthesize_toy_corpus(const GeneratorSpec& spec) {
  if (spec.n_classes < 2) throw ConfigError("generator needs at least 2 classes");
  if (static_cast<std::size_t>(spec.n_classes) > max_toy_classes())
    throw ConfigError("n_classes=" + std::to_string(spec.n_classes) + " exceeds the " +
                      std::to_string(max_toy_classes()) + " available class primitives");
  if (!(spec.clip_seconds > 0)) throw ConfigError("clip_seconds must be positive");
  if (spec.strong < 0 || spec.weak < 0 || spec.unlabeled < 0) throw ConfigError("clip counts must be >= 0");
  if (spec.min_events < 0 || spec.max_events < spec.min_events) throw ConfigError("invalid event count range");
  if (!(spec.min_event_seconds > 0 && spec.max_event_seconds >= spec.min_event_seconds))
    throw ConfigError("invalid event duration range");
  if (!(spec.validation_fraction >= 0 && spec.validation_fraction <= 1))
    throw ConfigError("validation_fraction must lie in [0,1]");
  if (spec.sample_rate <= 0) throw ConfigError("sample_rate must be positive");

  SynthesizedCorpus out;
  out.manifest.sample_rate = spec.sample_rate;
  for (int c = 0; c < spec.n_classes; ++c) out.manifest.class_names.push_back(class_primitive(c).name);

  const std::size_t n_val = static_cast<std::size_t>(std::lround(spec.strong * spec.validation_fraction));
  const std::size_t n_train = static_cast<std::size_t>(spec.strong) - n_val;
  std::vector<Split> plan(n_val, Split::Validation);
  plan.insert(plan.end(), (n_train + 1) / 2, Split::StrongReal);
  plan.insert(plan.end(), n_train / 2, Split::StrongSynth);
  plan.insert(plan.end(), static_cast<std::size_t>(spec.weak), Split::Weak);
  plan.insert(plan.end(), static_cast<std::size_t>(spec.unlabeled), Split::Unlabeled);

  std::map<Split, std::size_t> counters;
  for (Split sp : plan) {
    AnnotatedClip clip = synthesize_clip(spec, sp, counters[sp]++);
    ManifestEntry e;
    e.audio_path = std::string("audio/") + to_string(sp) + "/" + clip.id;
    e.split = sp;
    e.events = clip.events;
    e.tags = clip.tags;
    out.manifest.entries.push_back(std::move(e));
    out.clips.push_back(std::move(clip));
  }
  return out;
}

void write_corpus(const SynthesizedCorpus& corpus, const fs::path& dir) {
  for (std::size_t i = 0; i < corpus.clips.size(); ++i) {
    const fs::path p = dir / corpus.manifest.entries[i].audio_path;
    fs::create_directories(p.parent_path());
    write_wav(p, corpus.clips[i].samples, corpus.clips[i].sample_rate);
  }
  write_manifest(corpus.manifest, dir);
}

// ---------------------------------------------------------------------------
// Manifest TSV

namespace {

constexpr const char* kManifestFile = "corpus.tsv";
constexpr const char* kSplitHeader = "split\tkind\tannotations\taudio_dir";
constexpr const char* kStrongHeader = "filename\tonset\toffset\tevent_label";
constexpr const char* kWeakHeader = "filename\tevent_labels";
constexpr const char* kUnlabeledHeader = "filename";

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

double parse_seconds(const std::string& s, std::size_t line) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ParseError("bad number '" + s + "'", line);
  return v;
}

std::string fmt_time(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", t);
  return buf;
}

std::string split_dir(Split sp) { return std::string("audio/") + to_string(sp); }

std::string basename_of(const std::string& path) {
  auto pos = path.find_last_of('/');
  return pos == std::string::npos ? path : path.substr(pos + 1);
}

}  // namespace

void write_manifest(const CorpusManifest& m, const fs::path& dir) {
  fs::create_directories(dir / "metadata");
  std::set<std::string> seen;
  for (const auto& name : m.class_names) {
    if (!seen.insert(name).second) throw ValidationError("duplicate class name '" + name + "'");
    if (name.find_first_of(",\t\n") != std::string::npos) throw ValidationError("class name contains a separator");
  }
  std::ofstream idx(dir / kManifestFile);
  idx << "# sedtune corpus manifest v1\n# sample_rate=" << m.sample_rate << "\n# classes=";
  for (std::size_t c = 0; c < m.class_names.size(); ++c) idx << (c ? "," : "") << m.class_names[c];
  idx << "\n" << kSplitHeader << "\n";
  for (Split sp : {Split::Validation, Split::StrongReal, Split::StrongSynth, Split::Weak, Split::Unlabeled}) {
    if (m.count(sp) == 0) continue;
    const std::string meta = std::string("metadata/") + to_string(sp) + ".tsv";
    idx << to_string(sp) << '\t' << to_string(supervision_of(sp)) << '\t' << meta << '\t' << split_dir(sp) << '\n';
    std::ofstream f(dir / meta);
    const Supervision kind = supervision_of(sp);
    f << (kind == Supervision::Strong ? kStrongHeader : kind == Supervision::Weak ? kWeakHeader : kUnlabeledHeader)
      << '\n';
    for (const auto& e : m.entries) {
      if (e.split != sp) continue;
      const std::string file = basename_of(e.audio_path);
      if (kind == Supervision::Strong) {
        if (e.events.empty()) f << file << "\t\t\t\n";
        for (const auto& ev : e.events)
          f << file << '\t' << fmt_time(ev.onset) << '\t' << fmt_time(ev.offset) << '\t'
            << m.class_names.at(static_cast<std::size_t>(ev.class_id)) << '\n';
      } else if (kind == Supervision::Weak) {
        f << file << '\t';
        for (std::size_t i = 0; i < e.tags.size(); ++i)
          f << (i ? "," : "") << m.class_names.at(static_cast<std::size_t>(e.tags[i]));
        f << '\n';
      } else {
        f << file << '\n';
      }
    }
    if (!f) throw std::runtime_error("failed writing " + (dir / meta).string());
  }
  if (!idx) throw std::runtime_error("failed writing manifest in " + dir.string());
}

namespace {

void read_annotations(CorpusManifest& m, Split sp, const fs::path& file, const std::string& audio_dir) {
  std::ifstream in(file);
  if (!in) throw ParseError("cannot open annotation file " + file.string());
  const Supervision kind = supervision_of(sp);
  const std::string expected_header =
      kind == Supervision::Strong ? kStrongHeader : kind == Supervision::Weak ? kWeakHeader : kUnlabeledHeader;
  const std::size_t arity = kind == Supervision::Strong ? 4 : kind == Supervision::Weak ? 2 : 1;
  std::string line;
  std::size_t ln = 0;
  if (!std::getline(in, line) || strip_cr(line) != expected_header)
    throw ParseError(file.string() + ": expected header '" + expected_header + "'", 1);
  ++ln;
  std::map<std::string, std::size_t> by_name;
  while (std::getline(in, line)) {
    ++ln;
    line = strip_cr(line);
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (cols.size() != arity)
      throw ParseError(file.string() + ": expected " + std::to_string(arity) + " columns, got " +
                           std::to_string(cols.size()),
                       ln);
    const std::string& name = cols[0];
    if (name.empty()) throw ParseError(file.string() + ": empty filename", ln);
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      ManifestEntry e;
      e.audio_path = audio_dir + "/" + name;
      e.split = sp;
      m.entries.push_back(std::move(e));
      it = by_name.emplace(name, m.entries.size() - 1).first;
    }
    ManifestEntry& e = m.entries[it->second];
    if (kind == Supervision::Strong) {
      if (cols[1].empty() && cols[2].empty() && cols[3].empty()) continue;  // negative clip
      EventAnnotation ev;
      ev.onset = parse_seconds(cols[1], ln);
      ev.offset = parse_seconds(cols[2], ln);
      ev.class_id = m.class_index(cols[3]);
      if (ev.class_id < 0) throw ValidationError(file.string() + ": unknown class '" + cols[3] + "' on line " + std::to_string(ln));
      if (!(ev.onset >= 0.0 && ev.onset < ev.offset))
        throw ValidationError(file.string() + ": onset must precede offset on line " + std::to_string(ln));
      e.events.push_back(ev);
    } else if (kind == Supervision::Weak) {
      std::set<int> tags(e.tags.begin(), e.tags.end());
      std::stringstream ss(cols[1]);
      std::string tag;
      while (std::getline(ss, tag, ',')) {
        if (tag.empty()) continue;
        const int c = m.class_index(tag);
        if (c < 0) throw ValidationError(file.string() + ": unknown class '" + tag + "' on line " + std::to_string(ln));
        tags.insert(c);
      }
      e.tags.assign(tags.begin(), tags.end());
    }
  }
}

}  // namespace

CorpusManifest load_manifest(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / kManifestFile : path;
  std::ifstream in(file);
  if (!in) throw ParseError("cannot open manifest " + file.string());
  CorpusManifest m;
  m.root = file.parent_path();
  std::string line;
  std::size_t ln = 0;
  bool header_seen = false;
  bool rate_seen = false;
  while (std::getline(in, line)) {
    ++ln;
    line = strip_cr(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(1, eq - 1);
      key.erase(0, key.find_first_not_of(' '));
      const std::string val = line.substr(eq + 1);
      if (key == "sample_rate") {
        m.sample_rate = static_cast<int>(parse_seconds(val, ln));
        rate_seen = true;
      } else if (key == "classes") {
        std::stringstream ss(val);
        std::string c;
        std::set<std::string> seen;
        while (std::getline(ss, c, ',')) {
          if (!seen.insert(c).second) throw ValidationError("duplicate class name '" + c + "'");
          m.class_names.push_back(c);
        }
      }
      continue;
    }
    if (!header_seen) {
      if (line != kSplitHeader) throw ParseError(file.string() + ": expected header '" + std::string(kSplitHeader) + "'", ln);
      header_seen = true;
      continue;
    }
    auto cols = split_tabs(line);
    if (cols.size() != 4) throw ParseError(file.string() + ": expected 4 columns, got " + std::to_string(cols.size()), ln);
    const Split sp = split_from_string(cols[0]);
    if (cols[1] != to_string(supervision_of(sp)))
      throw ValidationError(file.string() + ": split '" + cols[0] + "' cannot carry kind '" + cols[1] + "'");
    read_annotations(m, sp, m.root / cols[2], cols[3]);
  }
  if (!header_seen) throw ParseError(file.string() + ": missing split table");
  if (!rate_seen) throw ParseError(file.string() + ": missing sample_rate");
  if (m.class_names.empty()) throw ParseError(file.string() + ": missing class list");
  return m;
}

std::vector<AnnotatedClip> load_clips(const CorpusManifest& m, int sample_rate, std::optional<Split> only) {
  std::vector<AnnotatedClip> clips;
  for (const auto& e : m.entries) {
    if (only && e.split != *only) continue;
    AnnotatedClip c;
    int sr = 0;
    c.samples = read_wav(m.root / e.audio_path, &sr);
    if (sr != sample_rate) c.samples = resample_linear(c.samples, sr, sample_rate);
    c.sample_rate = sample_rate;
    c.id = basename_of(e.audio_path);
    c.duration = c.samples.size() / static_cast<double>(sample_rate);
    c.split = e.split;
    c.kind = supervision_of(e.split);
    c.events = e.events;
    c.tags = e.tags;
    validate_clip(c, m.class_names.size());
    clips.push_back(std::move(c));
  }
  return clips;
}

// ---------------------------------------------------------------------------
// WAV

namespace {

template <typename T>
void put(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(const std::vector<char>& buf, std::size_t off) {
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  return v;
}

}  // namespace

void write_wav(const fs::path& path, const std::vector<float>& samples, int sample_rate) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  f.write("RIFF", 4);
  put<std::uint32_t>(f, 36 + data_bytes);
  f.write("WAVEfmt ", 8);
  put<std::uint32_t>(f, 16);
  put<std::uint16_t>(f, 1);
  put<std::uint16_t>(f, 1);
  put<std::uint32_t>(f, static_cast<std::uint32_t>(sample_rate));
  put<std::uint32_t>(f, static_cast<std::uint32_t>(sample_rate * 2));
  put<std::uint16_t>(f, 2);
  put<std::uint16_t>(f, 16);
  f.write("data", 4);
  put<std::uint32_t>(f, data_bytes);
  for (float s : samples) {
    const double q = std::clamp(std::round(static_cast<double>(s) * 32768.0), -32768.0, 32767.0);
    put<std::int16_t>(f, static_cast<std::int16_t>(q));
  }
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

std::vector<float> read_wav(const fs::path& path, int* sample_rate) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open audio file " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw ParseError(path.string() + ": not a RIFF/WAVE file");
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t off = 12;
  const char* data = nullptr;
  std::size_t data_len = 0;
  while (off + 8 <= buf.size()) {
    const std::uint32_t len = get<std::uint32_t>(buf, off + 4);
    const std::size_t body = off + 8;
    if (body + len > buf.size()) throw ParseError(path.string() + ": truncated chunk");
    if (std::memcmp(buf.data() + off, "fmt ", 4) == 0 && len >= 16) {
      format = get<std::uint16_t>(buf, body);
      channels = get<std::uint16_t>(buf, body + 2);
      rate = get<std::uint32_t>(buf, body + 4);
      bits = get<std::uint16_t>(buf, body + 14);
    } else if (std::memcmp(buf.data() + off, "data", 4) == 0) {
      data = buf.data() + body;
      data_len = len;
    }
    off = body + len + (len & 1);
  }
  if (!data || channels == 0 || rate == 0) throw ParseError(path.string() + ": missing fmt or data chunk");
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32) throw ParseError(path.string() + ": only 16-bit PCM and 32-bit float WAV are supported");
  const std::size_t bytes = bits / 8;
  const std::size_t frames = data_len / (bytes * channels);
  std::vector<float> out(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0;
    for (std::size_t ch = 0; ch < channels; ++ch) {
      const char* p = data + (i * channels + ch) * bytes;
      if (pcm16) {
        std::int16_t v;
        std::memcpy(&v, p, 2);
        acc += v / 32768.0;
      } else {
        float v;
        std::memcpy(&v, p, 4);
        acc += v;
      }
    }
    out[i] = static_cast<float>(acc / channels);
  }
  *sample_rate = static_cast<int>(rate);
  return out;
}

std::vector<float> resample_linear(const std::vector<float>& x, int from_rate, int to_rate) {
  if (from_rate == to_rate || x.empty()) return x;
  const std::size_t n = static_cast<std::size_t>(
      std::floor(static_cast<double>(x.size()) * to_rate / from_rate));
  std::vector<float> y(n);
  const double step = static_cast<double>(from_rate) / to_rate;
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = i * step;
    const std::size_t k = static_cast<std::size_t>(pos);
    const double frac = pos - k;
    const double a = x[std::min(k, x.size() - 1)];
    const double b = x[std::min(k + 1, x.size() - 1)];
    y[i] = static_cast<float>(a + (b - a) * frac);
  }
  return y;
}

// ---------------------------------------------------------------------------
// Labels and batches

Tensor encode_strong_labels(const std::vector<EventAnnotation>& events, std::size_t frames, double hop,
                            std::size_t n_classes) {
  Tensor y({frames, n_classes});
  for (const auto& e : events) {
    const long a = std::lround(e.onset / hop);
    const long b = std::lround(e.offset / hop);
    for (long k = std::max(0L, a); k < std::min<long>(b, static_cast<long>(frames)); ++k)
      y[static_cast<std::size_t>(k) * n_classes + static_cast<std::size_t>(e.class_id)] = 1.0;
  }
  return y;
}

Tensor encode_weak_labels(const std::vector<int>& tags, std::size_t n_classes) {
  Tensor y({n_classes});
  for (int t : tags) y[static_cast<std::size_t>(t)] = 1.0;
  return y;
}

ClipStream::ClipStream(std::vector<std::size_t> pool, std::uint64_t seed) : pool_(std::move(pool)), rng_(seed) {
  reshuffle();
}

void ClipStream::reshuffle() {
  order_ = pool_;
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

std::size_t ClipStream::next() {
  if (pool_.empty()) throw ConfigError("cannot draw from an empty clip stream");
  if (cursor_ >= order_.size()) reshuffle();
  return order_[cursor_++];
}

std::string ClipStream::save_state() const {
  nlohmann::json j;
  j["order"] = order_;
  j["cursor"] = cursor_;
  j["rng"] = save_rng(rng_);
  return j.dump();
}

void ClipStream::load_state(const std::string& state) {
  auto j = nlohmann::json::parse(state);
  auto order = j.at("order").get<std::vector<std::size_t>>();
  auto sorted_order = order, sorted_pool = pool_;
  std::sort(sorted_order.begin(), sorted_order.end());
  std::sort(sorted_pool.begin(), sorted_pool.end());
  if (sorted_order != sorted_pool) throw ParseError("clip stream state does not match the clip pool");
  order_ = std::move(order);
  cursor_ = j.at("cursor").get<std::size_t>();
  load_rng(rng_, j.at("rng").get<std::string>());
}

std::vector<std::size_t> CompositeBatch::rows_of(Supervision k) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < kind.size(); ++i)
    if (kind[i] == k) rows.push_back(i);
  return rows;
}

namespace {
constexpr Split kStreamSplits[4] = {Split::StrongReal, Split::StrongSynth, Split::Weak, Split::Unlabeled};
}

BatchComposer::BatchComposer(const std::vector<AnnotatedClip>& clips, BatchSizes sizes, std::size_t frames,
                             double frame_hop, std::size_t n_classes, std::uint64_t seed)
    : clips_(clips), sizes_(sizes), frames_(frames), frame_hop_(frame_hop), n_classes_(n_classes) {
  const auto quota = sizes.as_array();
  if (sizes.total() == 0) throw ConfigError("batch sizes are all zero");
  for (std::size_t g = 0; g < 4; ++g) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < clips.size(); ++i)
      if (clips[i].split == kStreamSplits[g]) pool.push_back(i);
    if (quota[g] > 0 && pool.empty())
      throw ConfigError(std::string("stream '") + to_string(kStreamSplits[g]) + "' is empty but its batch quota is " +
                        std::to_string(quota[g]));
    streams_[g] = ClipStream(std::move(pool), derive_seed(seed, std::string("stream/") + to_string(kStreamSplits[g])));
  }
}

std::size_t BatchComposer::steps_per_epoch() const {
  const auto quota = sizes_.as_array();
  std::size_t steps = 1;
  for (std::size_t g = 0; g < 4; ++g)
    if (quota[g] > 0) steps = std::max(steps, (streams_[g].size() + quota[g] - 1) / quota[g]);
  return steps;
}

CompositeBatch BatchComposer::next() {
  CompositeBatch b;
  const auto quota = sizes_.as_array();
  const std::size_t N = sizes_.total();
  b.group_sizes = quota;
  b.strong_labels = Tensor({N, frames_, n_classes_});
  b.weak_labels = Tensor({N, n_classes_});
  std::size_t row = 0;
  for (std::size_t g = 0; g < 4; ++g) {
    for (std::size_t k = 0; k < quota[g]; ++k, ++row) {
      const std::size_t idx = streams_[g].next();
      const AnnotatedClip& c = clips_[idx];
      b.clip_index.push_back(idx);
      b.kind.push_back(c.kind);
      b.waveforms.push_back(c.samples);
      if (c.kind == Supervision::Strong) {
        Tensor y = encode_strong_labels(c.events, frames_, frame_hop_, n_classes_);
        std::copy_n(y.data(), y.size(), b.strong_labels.data() + row * frames_ * n_classes_);
      } else if (c.kind == Supervision::Weak) {
        for (int t : c.tags) b.weak_labels[row * n_classes_ + static_cast<std::size_t>(t)] = 1.0;
      }
    }
  }
  return b;
}

std::string BatchComposer::save_state() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& s : streams_) j.push_back(s.save_state());
  return j.dump();
}

void BatchComposer::load_state(const std::string& state) {
  auto j = nlohmann::json::parse(state);
  if (!j.is_array() || j.size() != 4) throw ParseError("batch composer state must hold four streams");
  for (std::size_t g = 0; g < 4; ++g) streams_[g].load_state(j[g].get<std::string>());
}

}  // namespace sedtune
