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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "coher_pvad/binary_io.hpp"
#include "coher_pvad/erb.hpp"
#include "coher_pvad/error.hpp"
#include "coher_pvad/rng.hpp"
#include "coher_pvad/stft.hpp"
#include "coher_pvad/wave.hpp"

namespace coher_pvad {

inline constexpr std::size_t kDefaultEmbeddingDim = 128;

/// Unit-norm speaker vector (d-vector) conditioning the detector.
struct SpeakerEmbedding {
  std::vector<float> vector;
  std::string speaker_id;

  std::size_t dim() const { return vector.size(); }

  double norm() const {
    double acc = 0.0;
    for (float v : vector) acc += static_cast<double>(v) * v;
    return std::sqrt(acc);
  }

  bool operator==(const SpeakerEmbedding&) const = default;
};

inline double cosine_similarity(const SpeakerEmbedding& a, const SpeakerEmbedding& b) {
  require(a.dim() == b.dim(), "embedding dimension mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) dot += static_cast<double>(a.vector[i]) * b.vector[i];
  return dot / (a.norm() * b.norm());
}

/// Scales to unit norm in double precision.
inline std::vector<float> l2_normalize(const std::vector<double>& v, const char* degenerate_msg) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  const double n = std::sqrt(acc);
  require(std::isfinite(n) && n > 1e-12, degenerate_msg);
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / n);
  return out;
}

inline SpeakerEmbedding aggregate_embeddings(const std::vector<SpeakerEmbedding>& windows) {
  require(!windows.empty(), "cannot aggregate an empty set of embeddings");
  const std::size_t dim = windows.front().dim();
  std::vector<double> mean(dim, 0.0);
  for (const auto& w : windows) {
    require(w.dim() == dim, "embedding dimension mismatch");
    for (std::size_t i = 0; i < dim; ++i) mean[i] += w.vector[i];
  }
  for (double& m : mean) m /= static_cast<double>(windows.size());
  return {l2_normalize(mean, "degenerate aggregate (zero mean embedding)"),
          windows.front().speaker_id};
}

/// Deterministic stand-in for a trained speaker encoder.
///
/// Summarizes the active frames of the reference channel by the band-centered
/// mean log ERB spectrum and the spread of its frame-to-frame deltas, then
/// folds the 2B statistics into `dim` outputs through a fixed hashed +-1
/// projection.  Gain cancels in both statistics.  Not discriminative-grade:
/// it separates spectrally distinct voices, nothing more.
inline SpeakerEmbedding stub_embedding(const WaveBuffer& wave, std::size_t dim = kDefaultEmbeddingDim,
                                       std::string speaker_id = "") {
  require(dim >= 1, "embedding dimension must be positive");
  const FrameGrid grid;
  const WaveBuffer ref = wave.channel(0);
  require(ref.num_samples() >= grid.frame_len && grid.num_frames(ref.num_samples()) >= 10,
          "enrollment utterance shorter than 10 frames");
  const auto spec = stft(ref, grid);
  const ErbFilterbank fb = build_erb_filterbank(grid.nfft, ref.sample_rate, 32);
  const FrameMatrix power = erb_pool_power(spec.bins, spec.num_frames, fb);
  const std::size_t bands = fb.num_bands();

  FrameMatrix logp(spec.num_frames, bands);
  std::vector<double> frame_log_energy(spec.num_frames, 0.0);
  for (std::size_t l = 0; l < spec.num_frames; ++l) {
    double total = 0.0;
    for (std::size_t b = 0; b < bands; ++b) {
      logp(l, b) = std::log10(power(l, b) + 1e-10);
      total += power(l, b);
    }
    frame_log_energy[l] = std::log10(total + 1e-10);
  }
  // Active frames: within 30 dB of the loudest.
  const double peak = *std::max_element(frame_log_energy.begin(), frame_log_energy.end());
  std::vector<std::size_t> active;
  for (std::size_t l = 0; l < spec.num_frames; ++l) {
    if (frame_log_energy[l] >= peak - 3.0) active.push_back(l);
  }

  std::vector<double> stats(2 * bands, 0.0);
  for (std::size_t l : active) {
    for (std::size_t b = 0; b < bands; ++b) stats[b] += logp(l, b);
  }
  double band_mean = 0.0;
  for (std::size_t b = 0; b < bands; ++b) {
    stats[b] /= static_cast<double>(active.size());
    band_mean += stats[b];
  }
  band_mean /= static_cast<double>(bands);
  for (std::size_t b = 0; b < bands; ++b) stats[b] -= band_mean;

  std::size_t pairs = 0;
  for (std::size_t i = 1; i < active.size(); ++i) {
    if (active[i] != active[i - 1] + 1) continue;
    ++pairs;
    for (std::size_t b = 0; b < bands; ++b) {
      const double d = logp(active[i], b) - logp(active[i - 1], b);
      stats[bands + b] += d * d;
    }
  }
  for (std::size_t b = 0; b < bands; ++b) {
    stats[bands + b] = pairs > 0 ? 0.5 * std::sqrt(stats[bands + b] / static_cast<double>(pairs)) : 0.0;
  }

  std::vector<double> projected(dim, 0.0);
  for (std::size_t d = 0; d < dim; ++d) {
    for (std::size_t i = 0; i < stats.size(); ++i) {
      const bool positive = (mix_seed((static_cast<std::uint64_t>(d) << 32) ^ i) & 1u) != 0;
      projected[d] += positive ? stats[i] : -stats[i];
    }
  }
  return {l2_normalize(projected, "degenerate embedding (zero statistics)"), std::move(speaker_id)};
}

/// Sliding-window enrollment: stub embeddings over windows, then aggregated.
inline SpeakerEmbedding enroll_speaker(const WaveBuffer& wave, std::size_t dim = kDefaultEmbeddingDim,
                                       double window_s = 1.6, double hop_s = 0.8,
                                       std::string speaker_id = "") {
  const WaveBuffer ref = wave.channel(0);
  const auto win = static_cast<std::size_t>(window_s * ref.sample_rate);
  const auto hop = std::max<std::size_t>(1, static_cast<std::size_t>(hop_s * ref.sample_rate));
  std::vector<SpeakerEmbedding> windows;
  if (ref.num_samples() <= win) {
    windows.push_back(stub_embedding(ref, dim, speaker_id));
  } else {
    for (std::size_t start = 0; start + win <= ref.num_samples(); start += hop) {
      std::vector<double> seg(ref.channels[0].begin() + static_cast<std::ptrdiff_t>(start),
                              ref.channels[0].begin() + static_cast<std::ptrdiff_t>(start + win));
      // Windows of pure silence carry no speaker information.
      double energy = 0.0;
      for (double s : seg) energy += s * s;
      if (energy <= 0.0) continue;
      windows.push_back(stub_embedding(WaveBuffer::mono(std::move(seg), ref.sample_rate), dim, speaker_id));
    }
    require(!windows.empty(), "enrollment utterance is silent");
  }
  auto out = aggregate_embeddings(windows);
  out.speaker_id = std::move(speaker_id);
  return out;
}

inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;

inline std::vector<char> encode_embedding(const SpeakerEmbedding& e) {
  io::ByteWriter w;
  w.magic("DVEC");
  w.u32(kEmbeddingFormatVersion);
  w.u32(static_cast<std::uint32_t>(e.dim()));
  w.f32s(e.vector);
  w.str(e.speaker_id);
  return w.bytes();
}

/// Parses and validates; re-normalizes stored vectors within 1% of unit norm.
inline SpeakerEmbedding decode_embedding(io::ByteReader& r) {
  r.expect_magic("DVEC");
  const std::uint32_t version = r.u32();
  require(version == kEmbeddingFormatVersion,
          r.origin() + ": unsupported embedding format version " + std::to_string(version));
  const std::uint32_t dim = r.u32();
  require(dim >= 1, r.origin() + ": embedding dimension must be positive");
  SpeakerEmbedding e;
  e.vector = r.f32s(dim);
  e.speaker_id = r.str();
  require(r.at_end(), r.origin() + ": trailing bytes after embedding");
  for (float v : e.vector) require(std::isfinite(v), r.origin() + ": non-finite embedding value");
  const double n = e.norm();
  require(n > 0.0, r.origin() + ": zero embedding vector");
  require(std::abs(n - 1.0) <= 0.01, r.origin() + ": embedding norm out of tolerance");
  if (std::abs(n - 1.0) > 1e-6) {
    std::vector<double> v(e.vector.begin(), e.vector.end());
    e.vector = l2_normalize(v, "zero embedding vector");
  }
  return e;
}

inline void save_embedding(const std::filesystem::path& path, const SpeakerEmbedding& e) {
  io::write_file_atomic(path, encode_embedding(e));
}

inline SpeakerEmbedding load_embedding(const std::filesystem::path& path) {
  auto reader = io::open_reader(path);
  return decode_embedding(reader);
}

}  // namespace coher_pvad
