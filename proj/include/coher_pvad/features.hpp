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
#include <filesystem>
#include <span>
#include <vector>

#include "coher_pvad/binary_io.hpp"
#include "coher_pvad/erb.hpp"
#include "coher_pvad/error.hpp"
#include "coher_pvad/spatial.hpp"
#include "coher_pvad/stft.hpp"
#include "coher_pvad/wave.hpp"
#include "json.hpp"

namespace coher_pvad {

inline constexpr std::size_t kFeatureChannels = 3;
inline constexpr double kLogPowerFloor = 1e-10;

/// Network input indexed (channel, frame, band):
///   0 = log10 ERB power of the reference microphone,
///   1 = global coherence, 2 = local coherence.
struct InputFeature {
  std::size_t num_frames = 0;
  std::size_t num_bands = 0;
  std::vector<float> data;

  InputFeature() = default;
  InputFeature(std::size_t frames, std::size_t bands)
      : num_frames(frames), num_bands(bands), data(kFeatureChannels * frames * bands, 0.0f) {}

  float& at(std::size_t c, std::size_t l, std::size_t b) {
    return data[(c * num_frames + l) * num_bands + b];
  }
  float at(std::size_t c, std::size_t l, std::size_t b) const {
    return data[(c * num_frames + l) * num_bands + b];
  }

  /// Enrollment-less substitution: both coherence channels become one.
  void set_spatial_to_ones() {
    std::fill(data.begin() + static_cast<std::ptrdiff_t>(num_frames * num_bands), data.end(), 1.0f);
  }

  bool operator==(const InputFeature&) const = default;
};

namespace detail {
inline void fill_log_power(InputFeature& out, const MultichannelSpectrogram& spec,
                           const ErbFilterbank& fb) {
  const auto ref = std::span<const Complex>(spec.bins.data(), spec.num_frames * spec.num_bins);
  const FrameMatrix power = erb_pool_power(ref, spec.num_frames, fb);
  for (std::size_t l = 0; l < spec.num_frames; ++l) {
    for (std::size_t b = 0; b < fb.num_bands(); ++b) {
      out.at(0, l, b) = static_cast<float>(std::log10(power(l, b) + kLogPowerFloor));
    }
  }
}
}  // namespace detail

/// Builds the three-channel input from bin-resolution coherence maps.
inline InputFeature assemble_input(const MultichannelSpectrogram& spec, const ErbFilterbank& fb,
                                   const LstscFeature& maps) {
  require(spec.num_bins == fb.num_bins, "spectrogram bin count does not match filterbank");
  require(maps.global.rows == spec.num_frames && maps.local.rows == spec.num_frames,
          "frame count mismatch between spectrogram and coherence maps");
  const LstscFeature pooled = erb_pool(maps, fb);
  InputFeature out(spec.num_frames, fb.num_bands());
  detail::fill_log_power(out, spec, fb);
  for (std::size_t l = 0; l < spec.num_frames; ++l) {
    for (std::size_t b = 0; b < fb.num_bands(); ++b) {
      out.at(1, l, b) = static_cast<float>(pooled.global(l, b));
      out.at(2, l, b) = static_cast<float>(pooled.local(l, b));
    }
  }
  return out;
}

/// Enrollment-less input: coherence channels fixed at one.  Only the
/// reference channel of `spec` is consulted, so any M gives the same result.
inline InputFeature assemble_input_enrollless(const MultichannelSpectrogram& spec,
                                              const ErbFilterbank& fb) {
  require(spec.num_bins == fb.num_bins, "spectrogram bin count does not match filterbank");
  InputFeature out(spec.num_frames, fb.num_bands());
  detail::fill_log_power(out, spec, fb);
  out.set_spatial_to_ones();
  return out;
}

struct FeatureConfig {
  FrameGrid grid;
  std::size_t num_bands = 32;
  SpatialConfig spatial;
};

/// STFT -> coherence -> ERB pooling.  Mono input, or `enrollless`, takes the
/// acoustic-only path.
inline InputFeature extract_features(const WaveBuffer& wave, const FeatureConfig& cfg,
                                     bool enrollless = false) {
  const ErbFilterbank fb =
      build_erb_filterbank(cfg.grid.nfft, static_cast<double>(wave.sample_rate), cfg.num_bands);
  if (enrollless || wave.num_channels() == 1) {
    // The spatial channels are constant, so only the reference is transformed.
    return assemble_input_enrollless(stft(wave.channel(0), cfg.grid), fb);
  }
  const MultichannelSpectrogram spec = stft(wave, cfg.grid);
  return assemble_input(spec, fb, compute_lstsc_maps(spec, cfg.spatial));
}

inline constexpr std::uint32_t kFeatureFormatVersion = 1;

inline std::vector<char> encode_feature(const InputFeature& feat) {
  io::ByteWriter w;
  w.magic("AFEA");
  w.u32(kFeatureFormatVersion);
  w.u32(static_cast<std::uint32_t>(kFeatureChannels));
  w.u32(static_cast<std::uint32_t>(feat.num_frames));
  w.u32(static_cast<std::uint32_t>(feat.num_bands));
  w.f32s(feat.data);
  return w.bytes();
}

inline InputFeature decode_feature(io::ByteReader& r) {
  r.expect_magic("AFEA");
  const std::uint32_t version = r.u32();
  require(version == kFeatureFormatVersion,
          r.origin() + ": unsupported feature format version " + std::to_string(version));
  const std::uint32_t channels = r.u32();
  require(channels == kFeatureChannels, r.origin() + ": feature file must have 3 channels");
  InputFeature feat;
  feat.num_frames = r.u32();
  feat.num_bands = r.u32();
  feat.data = r.f32s(kFeatureChannels * feat.num_frames * feat.num_bands);
  require(r.at_end(), r.origin() + ": trailing bytes after feature payload");
  return feat;
}

inline void save_feature(const std::filesystem::path& path, const InputFeature& feat) {
  io::write_file_atomic(path, encode_feature(feat));
}

inline InputFeature load_feature(const std::filesystem::path& path) {
  auto reader = io::open_reader(path);
  return decode_feature(reader);
}

inline nlohmann::json filterbank_to_json(const ErbFilterbank& fb) {
  nlohmann::json j;
  j["num_bins"] = fb.num_bins;
  j["num_bands"] = fb.num_bands();
  auto& bands = j["bands"] = nlohmann::json::array();
  for (std::size_t b = 0; b < fb.num_bands(); ++b) {
    nlohmann::json band;
    band["center_hz"] = fb.center_hz[b];
    band["normalizer"] = fb.normalizers[b];
    auto& taps = band["taps"] = nlohmann::json::array();
    for (const auto& tap : fb.bands[b]) taps.push_back({tap.bin, tap.weight});
    bands.push_back(std::move(band));
  }
  return j;
}

}  // namespace coher_pvad
