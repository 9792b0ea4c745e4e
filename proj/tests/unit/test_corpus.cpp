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

#include <gtest/gtest.h>

#include <fstream>
#include <map>

#include "sedtune/corpus.hpp"
#include "sedtune/error.hpp"
#include "temp_dir.hpp"

namespace sedtune {
namespace {

using testing::TempDir;

GeneratorSpec small_spec() {
  GeneratorSpec s;
  s.strong = 6;
  s.weak = 3;
  s.unlabeled = 4;
  s.clip_seconds = 2.0;
  return s;
}

TEST(Corpus, DefaultSpecCounts) {
  GeneratorSpec spec;
  spec.clip_seconds = 1.0;  // counts do not depend on length
  auto c = synthesize_toy_corpus(spec);
  EXPECT_EQ(c.manifest.entries.size(), 200u);
  EXPECT_EQ(c.manifest.class_names.size(), 3u);
  EXPECT_EQ(c.manifest.count(Split::Validation), 20u);
  EXPECT_EQ(c.manifest.count(Split::StrongReal), 10u);
  EXPECT_EQ(c.manifest.count(Split::StrongSynth), 10u);
  EXPECT_EQ(c.manifest.count(Split::Weak), 40u);
  EXPECT_EQ(c.manifest.count(Split::Unlabeled), 120u);
}

TEST(Corpus, Deterministic) {
  auto a = synthesize_toy_corpus(small_spec());
  auto b = synthesize_toy_corpus(small_spec());
  EXPECT_EQ(a.manifest, b.manifest);
  ASSERT_EQ(a.clips.size(), b.clips.size());
  for (std::size_t i = 0; i < a.clips.size(); ++i) EXPECT_EQ(a.clips[i].samples, b.clips[i].samples);

  auto spec = small_spec();
  spec.seed = 8;
  auto c = synthesize_toy_corpus(spec);
  EXPECT_NE(a.clips[0].samples, c.clips[0].samples);
}

TEST(Corpus, ClipInvariants) {
  auto c = synthesize_toy_corpus(small_spec());
  for (const auto& clip : c.clips) {
    EXPECT_NO_THROW(validate_clip(clip, 3));
    EXPECT_EQ(clip.samples.size(), 32000u);
    for (const auto& e : clip.events)
      for (const auto& o : clip.events)
        if (&e != &o && e.class_id == o.class_id) EXPECT_FALSE(e.onset < o.offset && o.onset < e.offset);
    EXPECT_LE(clip.events.size(), 4u);
  }
}

TEST(Corpus, FullClipEvent) {
  GeneratorSpec spec;
  spec.strong = 1;
  spec.weak = spec.unlabeled = 0;
  spec.validation_fraction = 0.0;
  spec.min_events = spec.max_events = 1;
  spec.min_event_seconds = spec.max_event_seconds = 10.0;
  auto c = synthesize_toy_corpus(spec);
  ASSERT_EQ(c.clips.size(), 1u);
  ASSERT_EQ(c.clips[0].events.size(), 1u);
  EXPECT_EQ(c.clips[0].events[0].onset, 0.0);
  EXPECT_EQ(c.clips[0].events[0].offset, 10.0);
}

TEST(Corpus, TooManyClasses) {
  GeneratorSpec spec;
  spec.n_classes = static_cast<int>(max_toy_classes()) + 1;
  EXPECT_THROW(synthesize_toy_corpus(spec), ConfigError);
  spec.n_classes = static_cast<int>(max_toy_classes());
  spec.strong = spec.weak = spec.unlabeled = 0;
  EXPECT_NO_THROW(synthesize_toy_corpus(spec));
  spec.n_classes = 1;
  EXPECT_THROW(synthesize_toy_corpus(spec), ConfigError);
}

TEST(Corpus, DistinctPrimitives) {
  std::map<std::string, int> names;
  for (std::size_t c = 0; c < max_toy_classes(); ++c) names[class_primitive(static_cast<int>(c)).name]++;
  EXPECT_EQ(names.size(), max_toy_classes());
}

TEST(Corpus, ManifestRoundTrip) {
  TempDir dir;
  auto c = synthesize_toy_corpus(small_spec());
  write_corpus(c, dir.path());
  auto m = load_manifest(dir.path());
  EXPECT_EQ(m, c.manifest);
  auto clips = load_clips(m, 16000);
  ASSERT_EQ(clips.size(), c.clips.size());
  for (std::size_t i = 0; i < clips.size(); ++i) {
    EXPECT_EQ(clips[i].samples, c.clips[i].samples);
    EXPECT_EQ(clips[i].events, c.clips[i].events);
    EXPECT_EQ(clips[i].tags, c.clips[i].tags);
    EXPECT_EQ(clips[i].kind, c.clips[i].kind);
  }
  auto strong = load_clips(m, 16000, Split::Validation);
  EXPECT_EQ(strong.size(), 3u);
  for (const auto& s : strong) EXPECT_EQ(s.kind, Supervision::Strong);
}

TEST(Corpus, ResampledOnLoad) {
  TempDir dir;
  auto c = synthesize_toy_corpus(small_spec());
  write_corpus(c, dir.path());
  auto clips = load_clips(load_manifest(dir.path()), 8000, Split::Weak);
  for (const auto& clip : clips) {
    EXPECT_EQ(clip.sample_rate, 8000);
    EXPECT_EQ(clip.samples.size(), 16000u);
    EXPECT_DOUBLE_EQ(clip.duration, 2.0);
  }
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p) << s;
}

const char* kIndex =
    "# sedtune corpus manifest v1\n# sample_rate=16000\n# classes=a,b\n"
    "split\tkind\tannotations\taudio_dir\n"
    "validation\tstrong\tmetadata/validation.tsv\taudio/validation\n";

TEST(Corpus, ManifestParsesStrongRows) {
  TempDir dir;
  write_text(dir.path() / "corpus.tsv", kIndex);
  write_text(dir.path() / "metadata/validation.tsv",
             "filename\tonset\toffset\tevent_label\n"
             "x.wav\t0.5\t1.0\ta\nx.wav\t2.0\t3.0\tb\ny.wav\t\t\t\nz.wav\t1\t2\tb\n");
  auto m = load_manifest(dir.path() / "corpus.tsv");
  ASSERT_EQ(m.entries.size(), 3u);
  EXPECT_EQ(m.entries[0].events.size(), 2u);
  EXPECT_TRUE(m.entries[1].events.empty());
  EXPECT_EQ(m.entries[2].events[0].class_id, 1);
}

TEST(Corpus, ManifestOffsetBeforeOnset) {
  TempDir dir;
  write_text(dir.path() / "corpus.tsv", kIndex);
  write_text(dir.path() / "metadata/validation.tsv",
             "filename\tonset\toffset\tevent_label\nx.wav\t2.0\t1.0\ta\n");
  EXPECT_THROW(load_manifest(dir.path()), ValidationError);
}

TEST(Corpus, ManifestUnknownClass) {
  TempDir dir;
  write_text(dir.path() / "corpus.tsv", kIndex);
  write_text(dir.path() / "metadata/validation.tsv",
             "filename\tonset\toffset\tevent_label\nx.wav\t0.0\t1.0\tdog\n");
  EXPECT_THROW(load_manifest(dir.path()), ValidationError);
}

TEST(Corpus, ManifestArityReportsLine) {
  TempDir dir;
  write_text(dir.path() / "corpus.tsv", kIndex);
  write_text(dir.path() / "metadata/validation.tsv",
             "filename\tonset\toffset\tevent_label\nx.wav\t0.0\t1.0\ta\nx.wav\t0.0\t1.0\n");
  try {
    load_manifest(dir.path());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Corpus, StrongLabelFrames) {
  std::vector<EventAnnotation> ev{{1, 0.064, 0.64}};
  Tensor y = encode_strong_labels(ev, 154, 0.064, 3);
  for (std::size_t k = 0; k < 154; ++k) {
    EXPECT_EQ(y[k * 3 + 0], 0.0);
    EXPECT_EQ(y[k * 3 + 1], (k >= 1 && k < 10) ? 1.0 : 0.0) << k;
  }
}

std::vector<AnnotatedClip> pool_for_batches() {
  GeneratorSpec spec = small_spec();
  spec.strong = 10;
  spec.weak = 9;
  spec.unlabeled = 11;
  spec.validation_fraction = 0.2;
  spec.clip_seconds = 0.5;
  spec.min_event_seconds = 0.1;
  spec.max_event_seconds = 0.4;
  return synthesize_toy_corpus(spec).clips;
}

TEST(Corpus, BatchHistogramAndOrder) {
  auto clips = pool_for_batches();
  BatchComposer comp(clips, {4, 4, 8, 8}, 7, 0.064, 3, 11);
  BatchComposer again(clips, {4, 4, 8, 8}, 7, 0.064, 3, 11);
  EXPECT_EQ(comp.steps_per_epoch(), 2u);  // ceil(11/8)
  for (int step = 0; step < 5; ++step) {
    auto b = comp.next();
    auto b2 = again.next();
    ASSERT_EQ(b.size(), 24u);
    EXPECT_EQ(b.clip_index, b2.clip_index);
    EXPECT_EQ(b.strong_labels, b2.strong_labels);
    std::map<Split, int> hist;
    for (std::size_t i = 0; i < b.size(); ++i) hist[clips[b.clip_index[i]].split]++;
    EXPECT_EQ(hist[Split::StrongReal], 4);
    EXPECT_EQ(hist[Split::StrongSynth], 4);
    EXPECT_EQ(hist[Split::Weak], 8);
    EXPECT_EQ(hist[Split::Unlabeled], 8);
    EXPECT_EQ(b.rows_of(Supervision::Strong).size(), 8u);
    EXPECT_EQ(b.rows_of(Supervision::Weak), (std::vector<std::size_t>{8, 9, 10, 11, 12, 13, 14, 15}));
    for (std::size_t i = 16; i < 24; ++i)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(b.weak_labels[i * 3 + c], 0.0);
  }
}

TEST(Corpus, StreamsCoverPoolEachCycle) {
  ClipStream s({3, 5, 7, 9}, 1);
  for (int cycle = 0; cycle < 3; ++cycle) {
    std::vector<std::size_t> seen;
    for (int i = 0; i < 4; ++i) seen.push_back(s.next());
    std::sort(seen.begin(), seen.end());
    EXPECT_EQ(seen, (std::vector<std::size_t>{3, 5, 7, 9}));
  }
}

TEST(Corpus, SingleItemBatchAndEmptyStream) {
  auto clips = pool_for_batches();
  BatchComposer one(clips, {1, 0, 0, 0}, 7, 0.064, 3, 1);
  auto b = one.next();
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b.kind[0], Supervision::Strong);

  std::vector<AnnotatedClip> only_weak;
  for (const auto& c : clips)
    if (c.split == Split::Weak) only_weak.push_back(c);
  EXPECT_THROW(BatchComposer(only_weak, {1, 0, 1, 0}, 7, 0.064, 3, 1), ConfigError);
}

TEST(Corpus, ComposerStateRoundTrip) {
  auto clips = pool_for_batches();
  BatchComposer a(clips, {2, 2, 3, 3}, 7, 0.064, 3, 5);
  for (int i = 0; i < 3; ++i) a.next();
  const std::string state = a.save_state();
  BatchComposer b(clips, {2, 2, 3, 3}, 7, 0.064, 3, 99);
  b.load_state(state);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(a.next().clip_index, b.next().clip_index);
}

}  // namespace
}  // namespace sedtune
