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

// Polyphonic toy corpora: synthesis, TSV manifests, WAV I/O and
// the four-stream batch composer.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sedtune/rng.hpp"
#include "sedtune/tensor.hpp"

namespace sedtune {

enum class Supervision { Strong, Weak, Unlabeled };

/// Where a clip lives. The two strong training streams are disjoint halves of
/// the generated strong set; validation is held out from it.
enum class Split { StrongReal, StrongSynth, Weak, Unlabeled, Validation };

const char* to_string(Supervision kind);
const char* to_string(Split split);
Split split_from_string(const std::string& s);
Supervision supervision_of(Split split);

struct EventAnnotation {
  int class_id = 0;
  double onset = 0.0;
  double offset = 0.0;
  bool operator==(const EventAnnotation&) const = default;
};

struct AnnotatedClip {
  std::string id;  // file name without directory
  std::vector<float> samples;
  int sample_rate = 16000;
  double duration = 0.0;
  Supervision kind = Supervision::Unlabeled;
  Split split = Split::Unlabeled;
  std::vector<EventAnnotation> events;  // Strong only
  std::vector<int> tags;                // Weak only, sorted unique
};

/// Throws ValidationError when a clip breaks the supervision invariants.
void validate_clip(const AnnotatedClip& clip, std::size_t n_classes);

struct ManifestEntry {
  std::string audio_path;  // relative to the manifest directory
  Split split = Split::Unlabeled;
  std::vector<EventAnnotation> events;
  std::vector<int> tags;
  bool operator==(const ManifestEntry&) const = default;
};

struct CorpusManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_names;
  int sample_rate = 16000;
  std::filesystem::path root;  // directory holding corpus.tsv; not serialized

  std::size_t count(Split split) const;
  int class_index(const std::string& name) const;  // -1 when unknown
  bool operator==(const CorpusManifest& o) const {
    return entries == o.entries && class_names == o.class_names && sample_rate == o.sample_rate;
  }
};

struct GeneratorSpec {
  int n_classes = 3;
  int strong = 40;
  int weak = 40;
  int unlabeled = 120;
  double clip_seconds = 10.0;
  std::uint64_t seed = 7;
  /// Share of the strong clips held out for validation.
  double validation_fraction = 0.5;
  int min_events = 0;
  int max_events = 4;
  double min_event_seconds = 0.3;
  double max_event_seconds = 3.0;
  double noise_db = -30.0;  // background level relative to event peak
  double event_peak = 0.2;
  int sample_rate = 16000;
};

/// Parametric sound used for one class.
struct ClassPrimitive {
  enum class Kind { Tone, Chirp, NoiseBurst, AmTone, HarmonicStack } kind;
  double f_a = 0.0;  // tone / carrier / chirp start / band low / fundamental
  double f_b = 0.0;  // chirp end / band high / modulation rate
  std::string name;
  /// Frequency band carrying the class energy.
  std::pair<double, double> band() const;
};

/// Maximum number of distinct classes the generator can produce.
std::size_t max_toy_classes();
ClassPrimitive class_primitive(int class_id);

/// Renders one event (fade in/out included) at unit-free peak `peak`.
std::vector<float> render_event(const ClassPrimitive& p, double seconds, int sample_rate, double peak,
                                Rng& rng);

struct SynthesizedCorpus {
  CorpusManifest manifest;
  std::vector<AnnotatedClip> clips;  // same order as manifest.entries
};

/// Deterministic given spec.seed; each clip uses its own derived stream.
SynthesizedCorpus synthesize_toy_corpus(const GeneratorSpec& spec);
/// Writes audio/<split>/*.wav, metadata/<split>.tsv and corpus.tsv.
void write_corpus(const SynthesizedCorpus& corpus, const std::filesystem::path& dir);

void write_manifest(const CorpusManifest& manifest, const std::filesystem::path& dir);
/// Reads corpus.tsv (path may be the file or its directory) and its annotation TSVs.
CorpusManifest load_manifest(const std::filesystem::path& path);
/// Loads audio for every entry (optionally one split), resampling to `sample_rate`.
std::vector<AnnotatedClip> load_clips(const CorpusManifest& manifest, int sample_rate,
                                      std::optional<Split> only = std::nullopt);

// 16-bit PCM mono WAV.
void write_wav(const std::filesystem::path& path, const std::vector<float>& samples, int sample_rate);
std::vector<float> read_wav(const std::filesystem::path& path, int* sample_rate);
/// Linear-interpolation resampler.
std::vector<float> resample_linear(const std::vector<float>& x, int from_rate, int to_rate);

/// Frame-level multi-hot targets [frames, n_classes]: frame k is active for an
/// event when round(onset/hop) <= k < round(offset/hop).
Tensor encode_strong_labels(const std::vector<EventAnnotation>& events, std::size_t frames,
                            double frame_hop, std::size_t n_classes);
Tensor encode_weak_labels(const std::vector<int>& tags, std::size_t n_classes);

/// Per-batch quota for each stream, in batch order.
struct BatchSizes {
  std::size_t strong_real = 24;
  std::size_t strong_synth = 24;
  std::size_t weak = 48;
  std::size_t unlabeled = 48;
  std::size_t total() const { return strong_real + strong_synth + weak + unlabeled; }
  std::array<std::size_t, 4> as_array() const { return {strong_real, strong_synth, weak, unlabeled}; }
};

/// Endless shuffled iterator over a fixed pool of clip indices.
class ClipStream {
 public:
  ClipStream() = default;
  ClipStream(std::vector<std::size_t> pool, std::uint64_t seed);
  std::size_t next();
  std::size_t size() const { return pool_.size(); }

  std::string save_state() const;
  void load_state(const std::string& state);

 private:
  void reshuffle();
  std::vector<std::size_t> pool_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  Rng rng_;
};

/// Training batch: four groups concatenated in fixed order.
struct CompositeBatch {
  std::vector<std::size_t> clip_index;  // into the clip pool
  std::vector<Supervision> kind;        // per item mask
  std::vector<std::vector<float>> waveforms;
  Tensor strong_labels;  // [N, frames, C]; zero rows for non-strong items
  Tensor weak_labels;    // [N, C]; zero rows for non-weak items
  std::array<std::size_t, 4> group_sizes{};  // strong_real, strong_synth, weak, unlabeled

  std::size_t size() const { return clip_index.size(); }
  std::vector<std::size_t> rows_of(Supervision k) const;
};

class BatchComposer {
 public:
  /// `clips` must outlive the composer. Streams are drawn from the four
  /// training splits of the pool.
  BatchComposer(const std::vector<AnnotatedClip>& clips, BatchSizes sizes, std::size_t frames,
                double frame_hop, std::size_t n_classes, std::uint64_t seed);

  CompositeBatch next();
  /// ceil(max stream size / its quota) over streams with a nonzero quota.
  std::size_t steps_per_epoch() const;
  const BatchSizes& sizes() const { return sizes_; }

  std::string save_state() const;
  void load_state(const std::string& state);

 private:
  const std::vector<AnnotatedClip>& clips_;
  BatchSizes sizes_;
  std::size_t frames_;
  double frame_hop_;
  std::size_t n_classes_;
  std::array<ClipStream, 4> streams_;
};

}  // namespace sedtune
