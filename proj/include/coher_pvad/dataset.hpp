// Copyright 2026 The coher-pvad Authors.
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

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "coher_pvad/embedding.hpp"
#include "coher_pvad/features.hpp"
#include "coher_pvad/rng.hpp"
#include "coher_pvad/scene.hpp"
#include "coher_pvad/speech.hpp"
#include "coher_pvad/trainer.hpp"

// Glue between the simulator, the feature pipeline and the trainer.

namespace coher_pvad {

struct SimulationOptions {
  FrameGrid grid;
  double threshold_db = 40.0;
  std::size_t embedding_dim = kDefaultEmbeddingDim;
  double enrollment_s = 3.0;
};

inline std::string speaker_name(std::uint64_t id) { return "spk" + std::to_string(id); }

/// Dry talker signals placed in their spans plus the continuous programme.
inline SourceWaves synthesize_sources(const SceneSpec& spec, int sample_rate = kSampleRate) {
  const auto n = static_cast<std::size_t>(std::lround(spec.duration_s * sample_rate));
  const auto place = [&](std::uint64_t speaker, const Span& span, std::uint64_t stream) {
    std::vector<double> out(n, 0.0);
    const auto start = static_cast<std::size_t>(std::lround(span.start_s * sample_rate));
    const auto stop = std::min(n, static_cast<std::size_t>(std::lround(span.end_s * sample_rate)));
    Rng rng(derive_seed(spec.seed, stream));
    const auto talk = speech::synthesize(speech::make_voice(speaker), stop - start, rng, sample_rate);
    std::copy(talk.begin(), talk.end(), out.begin() + static_cast<std::ptrdiff_t>(start));
    return out;
  };
  SourceWaves w;
  w.target = place(spec.target_speaker, spec.target_span, 10);
  w.non_target = place(spec.non_target_speaker, spec.non_target_span, 11);
  Rng tv_rng(derive_seed(spec.seed, 12));
  w.interferer = speech::synthesize_tv(spec.programme, n, tv_rng, sample_rate);
  return w;
}

/// Clean enrollment utterance of a talker; fixed per speaker id.
inline WaveBuffer enrollment_utterance(std::uint64_t speaker, double seconds = 3.0, int sample_rate = kSampleRate) {
  Rng rng(derive_seed(speaker, 0xe4011));
  const auto n = static_cast<std::size_t>(seconds * sample_rate);
  return WaveBuffer::mono(speech::synthesize(speech::make_voice(speaker), n, rng, sample_rate), sample_rate);
}

inline SpeakerEmbedding speaker_enrollment(std::uint64_t speaker, std::size_t dim = kDefaultEmbeddingDim,
                                           double seconds = 3.0) {
  return enroll_speaker(enrollment_utterance(speaker, seconds), dim, 1.6, 0.8, speaker_name(speaker));
}

struct SceneItem {
  SceneSpec spec;
  RenderedScene rendered;
  std::vector<std::uint8_t> labels;
  SpeakerEmbedding embedding;
};

inline SceneItem simulate_scene(const SceneSpec& spec, const SimulationOptions& opt = {}) {
  SceneItem item;
  item.spec = spec;
  item.rendered = render_scene(spec, synthesize_sources(spec));
  item.labels = label_frames(item.rendered.clean_target, opt.grid.frame_len, opt.grid.hop, opt.threshold_db);
  item.embedding = speaker_enrollment(spec.target_speaker, opt.embedding_dim, opt.enrollment_s);
  return item;
}

inline std::vector<float> labels_to_float(const std::vector<std::uint8_t>& labels) {
  return std::vector<float>(labels.begin(), labels.end());
}

inline TrainingSample make_sample(const WaveBuffer& mixture, const std::vector<std::uint8_t>& labels,
                                  const SpeakerEmbedding& embedding, const FeatureConfig& cfg, bool enrollless = false) {
  TrainingSample s;
  s.feature = extract_features(mixture, cfg, enrollless);
  require(s.feature.num_frames == labels.size(), "label count does not match feature frame count");
  s.embedding = embedding;
  s.labels = labels_to_float(labels);
  return s;
}

inline TrainingSample make_sample(const SceneItem& item, const FeatureConfig& cfg, bool enrollless = false) {
  return make_sample(item.rendered.mixture, item.labels, item.embedding, cfg, enrollless);
}

}  // namespace coher_pvad
