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
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "coher_pvad/binary_io.hpp"
#include "coher_pvad/error.hpp"
#include "coher_pvad/fft.hpp"
#include "coher_pvad/rng.hpp"
#include "coher_pvad/stft.hpp"
#include "coher_pvad/wave.hpp"
#include "json.hpp"

namespace coher_pvad {

using Point3 = std::array<double, 3>;

inline constexpr double kSpeedOfSound = 343.0;

inline double distance(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

/// Microphone positions in meters; entry 0 is the reference microphone.
struct ArrayGeometry {
  std::string name;
  std::vector<Point3> positions;

  std::size_t size() const { return positions.size(); }

  Point3 centroid() const {
    Point3 c{0.0, 0.0, 0.0};
    for (const auto& p : positions)
      for (int k = 0; k < 3; ++k) c[k] += p[k] / static_cast<double>(positions.size());
    return c;
  }

  void validate() const {
    require(!positions.empty(), "array geometry needs at least one microphone");
    for (std::size_t i = 0; i < positions.size(); ++i) {
      for (std::size_t j = i + 1; j < positions.size(); ++j) {
        require(distance(positions[i], positions[j]) > 1e-6, "array geometry has coincident microphones");
      }
    }
  }

  /// Sub-array keeping the listed microphones; the first listed one becomes the reference.
  ArrayGeometry subset(const std::vector<std::size_t>& keep, std::string subset_name) const {
    ArrayGeometry g;
    g.name = std::move(subset_name);
    for (auto i : keep) {
      require(i < positions.size(), "subset index out of range");
      g.positions.push_back(positions[i]);
    }
    g.validate();
    return g;
  }

  bool operator==(const ArrayGeometry&) const = default;
};

enum class ArrayKind { kLinear, kCircular };

struct ArrayParams {
  std::size_t elements = 4;
  double spacing_m = 0.05;  // linear
  double radius_m = 0.04;   // circular
  bool center_mic = true;   // circular: one element at the origin
};

/// Linear arrays lie on the x axis centered at the origin.  Circular arrays
/// lie in the xy plane; with `center_mic` the first element sits at the
/// origin and the rest are evenly spread on the ring, starting on +x.
inline ArrayGeometry make_geometry(ArrayKind kind, const ArrayParams& p, std::string name = "") {
  require(p.elements >= 1, "array needs at least one element");
  ArrayGeometry g;
  if (kind == ArrayKind::kLinear) {
    require(p.spacing_m > 0.0, "array spacing must be positive");
    if (name.empty()) name = "linear" + std::to_string(p.elements);
    const double mid = 0.5 * static_cast<double>(p.elements - 1);
    for (std::size_t i = 0; i < p.elements; ++i) {
      g.positions.push_back({(static_cast<double>(i) - mid) * p.spacing_m, 0.0, 0.0});
    }
  } else {
    require(p.radius_m > 0.0, "array radius must be positive");
    if (name.empty()) name = "circular" + std::to_string(p.elements);
    std::size_t ring = p.elements;
    if (p.center_mic) {
      g.positions.push_back({0.0, 0.0, 0.0});
      --ring;
    }
    for (std::size_t i = 0; i < ring; ++i) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(ring);
      g.positions.push_back({p.radius_m * std::cos(a), p.radius_m * std::sin(a), 0.0});
    }
  }
  g.name = std::move(name);
  g.validate();
  return g;
}

/// Seven-element test array: center plus a 4 cm ring.
inline ArrayGeometry circular7() {
  return make_geometry(ArrayKind::kCircular, {.elements = 7, .radius_m = 0.04, .center_mic = true}, "circ7");
}

/// Three four-element linear arrays used for training (3, 5 and 8 cm pitch).
inline std::vector<ArrayGeometry> training_arrays() {
  std::vector<ArrayGeometry> out;
  for (double s : {0.03, 0.05, 0.08}) {
    const auto cm = static_cast<int>(std::lround(s * 100));
    out.push_back(make_geometry(ArrayKind::kLinear, {.elements = 4, .spacing_m = s},
                                "linear4-" + std::to_string(cm) + "cm"));
  }
  return out;
}

/// Eight sub-arrays of the seven-element circular array (M = 2..7).
/// Ring indices 1..6 start on +x and step 60 degrees.
inline std::vector<ArrayGeometry> test_arrays() {
  const ArrayGeometry c = circular7();
  return {c.subset({0, 1}, "circ2"),           c.subset({1, 4}, "circ2-wide"),
          c.subset({0, 1, 4}, "circ3"),        c.subset({1, 3, 5}, "circ3-tri"),
          c.subset({0, 1, 3, 5}, "circ4"),     c.subset({1, 2, 3, 4}, "circ4-arc"),
          c.subset({0, 1, 2, 4, 5}, "circ5"), c};
}

inline ArrayGeometry mono_array() {
  return make_geometry(ArrayKind::kLinear, {.elements = 1, .spacing_m = 1.0}, "mono");
}

/// Looks up a preset by name: linear4-3cm/5cm/8cm, the circ* test arrays, mono.
inline ArrayGeometry geometry_preset(const std::string& name) {
  for (const auto& g : training_arrays())
    if (g.name == name) return g;
  for (const auto& g : test_arrays())
    if (g.name == name) return g;
  if (name == "mono") return mono_array();
  throw Error("unknown geometry preset '" + name + "'");
}

/// Preset circular sub-array with M microphones, center mic as reference.
inline ArrayGeometry circular_with_mics(std::size_t m) {
  switch (m) {
    case 1: return circular7().subset({0}, "circ1");
    case 2: return geometry_preset("circ2");
    case 3: return geometry_preset("circ3");
    case 4: return geometry_preset("circ4");
    case 5: return geometry_preset("circ5");
    case 6: return circular7().subset({0, 1, 2, 3, 4, 5}, "circ6");
    case 7: return circular7();
    default: throw Error("no circular preset with " + std::to_string(m) + " microphones");
  }
}

enum class SourceRole { kTarget, kNonTarget, kInterferer };

inline const char* role_name(SourceRole r) {
  switch (r) {
    case SourceRole::kTarget: return "target";
    case SourceRole::kNonTarget: return "non_target";
    case SourceRole::kInterferer: return "interferer";
  }
  return "?";
}

inline SourceRole role_from_name(const std::string& s) {
  if (s == "target") return SourceRole::kTarget;
  if (s == "non_target") return SourceRole::kNonTarget;
  if (s == "interferer") return SourceRole::kInterferer;
  throw Error("unknown source role '" + s + "'");
}

struct SourcePlacement {
  SourceRole role = SourceRole::kTarget;
  double azimuth_deg = 0.0;  // 0 = broadside (+y), positive toward +x
  double distance_m = 1.0;

  Point3 position() const {
    const double a = azimuth_deg * std::numbers::pi / 180.0;
    return {distance_m * std::sin(a), distance_m * std::cos(a), 0.0};
  }

  bool operator==(const SourcePlacement&) const = default;
};

struct Span {
  double start_s = 0.0;
  double end_s = 0.0;

  bool overlaps(const Span& o) const { return start_s < o.end_s && o.start_s < end_s; }
  bool operator==(const Span&) const = default;
};

/// Everything needed to render one synthetic recording.
struct SceneSpec {
  ArrayGeometry geometry;
  std::vector<SourcePlacement> sources;  // target, non_target, interferer
  double sir_db = 0.0;
  double snr_db = 30.0;
  double t60_s = 0.16;
  double drr_db = 6.0;  // direct-to-reverberant ratio of a source at 1 m
  double duration_s = 4.0;
  Span target_span;
  Span non_target_span;
  std::uint64_t target_speaker = 0;
  std::uint64_t non_target_speaker = 1;
  std::uint64_t programme = 0;  // TV interferer material
  std::uint64_t seed = 0;

  const SourcePlacement& source(SourceRole role) const {
    for (const auto& s : sources)
      if (s.role == role) return s;
    throw Error(std::string("scene has no ") + role_name(role) + " source");
  }

  bool operator==(const SceneSpec&) const = default;
};

inline double min_angular_gap_deg(const SceneSpec& spec) {
  double gap = 360.0;
  for (std::size_t i = 0; i < spec.sources.size(); ++i)
    for (std::size_t j = i + 1; j < spec.sources.size(); ++j)
      gap = std::min(gap, std::abs(spec.sources[i].azimuth_deg - spec.sources[j].azimuth_deg));
  return gap;
}

inline constexpr double kMinSeparationDeg = 15.0;

/// Throws on any violated placement or timing rule.
inline void validate_scene(const SceneSpec& spec) {
  spec.geometry.validate();
  require(spec.sources.size() == 3, "scene needs target, non_target and interferer sources");
  for (const auto role : {SourceRole::kTarget, SourceRole::kNonTarget, SourceRole::kInterferer}) {
    int n = 0;
    for (const auto& s : spec.sources) n += s.role == role;
    require(n == 1, std::string("scene must contain exactly one ") + role_name(role));
  }
  for (const auto& s : spec.sources) {
    require(s.azimuth_deg >= -90.0 && s.azimuth_deg <= 90.0, "source azimuth outside the frontal plane");
    require(s.distance_m > 0.0, "source distance must be positive");
  }
  require(min_angular_gap_deg(spec) >= kMinSeparationDeg - 1e-9, "sources closer than 15 degrees");
  const double di = spec.source(SourceRole::kInterferer).distance_m;
  require(spec.source(SourceRole::kTarget).distance_m < di && spec.source(SourceRole::kNonTarget).distance_m < di,
          "talkers must be closer to the array than the interferer");
  require(!spec.target_span.overlaps(spec.non_target_span), "target and non-target spans overlap");
  for (const Span* s : {&spec.target_span, &spec.non_target_span}) {
    require(s->start_s >= 0.0 && s->end_s > s->start_s && s->end_s <= spec.duration_s, "utterance span outside the clip");
  }
  require(spec.t60_s >= 0.0, "t60 must be non-negative");
  require(spec.target_speaker != spec.non_target_speaker, "target and non-target must be different speakers");
}

inline const std::vector<double>& default_sir_grid() {
  static const std::vector<double> grid{-10.0, -5.0, 0.0, 5.0, 10.0, 15.0};
  return grid;
}

struct SceneConstraints {
  std::vector<double> sir_grid = default_sir_grid();
  double t60_s = 0.16;
  double snr_db = 30.0;
  double drr_db = 6.0;
  double duration_s = 4.0;
  double ring_min_m = 1.0;
  double ring_max_m = 2.0;
  double min_separation_deg = kMinSeparationDeg;
  std::size_t num_sources = 3;
  std::uint64_t speaker_pool = 16;  // talkers drawn from ids [0, pool)
  std::size_t max_attempts = 10000;
};

/// Rejection-samples source placements, talkers, timing and SIR.
///
/// Talkers lie in the 1-2 m ring; the interferer is strictly farther than
/// both talkers (still inside the ring).
inline SceneSpec sample_scene(const ArrayGeometry& geometry, std::uint64_t seed, const SceneConstraints& c = {}) {
  require(!c.sir_grid.empty(), "SIR grid is empty");
  require(c.ring_max_m > c.ring_min_m && c.ring_min_m > 0.0, "invalid placement ring");
  require(c.speaker_pool >= 2, "speaker pool needs at least two talkers");
  require(static_cast<double>(c.num_sources - 1) * c.min_separation_deg <= 180.0,
          "angular separation constraint unsatisfiable");
  Rng rng(derive_seed(seed, 0x5ce4e));
  SceneSpec spec;
  spec.geometry = geometry;
  spec.seed = seed;
  spec.snr_db = c.snr_db;
  spec.t60_s = c.t60_s;
  spec.drr_db = c.drr_db;
  spec.duration_s = c.duration_s;

  bool placed = false;
  for (std::size_t attempt = 0; attempt < c.max_attempts && !placed; ++attempt) {
    std::array<double, 3> az{};
    for (double& a : az) a = rng.uniform(-90.0, 90.0);
    bool ok = true;
    for (int i = 0; i < 3 && ok; ++i)
      for (int j = i + 1; j < 3 && ok; ++j) ok = std::abs(az[i] - az[j]) >= c.min_separation_deg;
    const double dt = rng.uniform(c.ring_min_m, c.ring_max_m);
    const double dn = rng.uniform(c.ring_min_m, c.ring_max_m);
    const double nearest = std::max(dt, dn);
    const double di = rng.uniform(nearest, c.ring_max_m);
    ok = ok && di > nearest;
    if (!ok) continue;
    spec.sources = {{SourceRole::kTarget, az[0], dt}, {SourceRole::kNonTarget, az[1], dn},
                    {SourceRole::kInterferer, az[2], di}};
    placed = true;
  }
  require(placed, "scene constraints unsatisfiable after " + std::to_string(c.max_attempts) + " attempts");

  spec.sir_db = c.sir_grid[static_cast<std::size_t>(rng.below(c.sir_grid.size()))];
  spec.target_speaker = rng.below(c.speaker_pool);
  do {
    spec.non_target_speaker = rng.below(c.speaker_pool);
  } while (spec.non_target_speaker == spec.target_speaker);
  spec.programme = rng.below(1u << 20);

  const double d = c.duration_s;
  const double split = d * rng.uniform(0.4, 0.6);
  const Span first{0.1 * d * rng.uniform(0.5, 1.5), split - 0.05 * d};
  const Span second{split + 0.05 * d, d - 0.1 * d * rng.uniform(0.5, 1.5)};
  if (rng.bernoulli(0.5)) {
    spec.target_span = first;
    spec.non_target_span = second;
  } else {
    spec.target_span = second;
    spec.non_target_span = first;
  }
  validate_scene(spec);
  return spec;
}

/// Impulse responses from one source to every microphone.
struct Rir {
  std::vector<std::vector<double>> taps;  // per microphone
  int sample_rate = kSampleRate;
  std::size_t direct_offset = 0;  // samples of lead-in before a zero-delay arrival
};

inline constexpr std::size_t kFractionalDelayTaps = 81;

struct RirOptions {
  double drr_db = 6.0;  // direct-to-reverberant ratio at 1 m
  std::uint64_t seed = 0;
};

/// Free-field direct path plus an exponentially decaying diffuse tail.
///
/// The direct path is a Hann-windowed sinc fractional delay of d / c with
/// amplitude 1 / d; every arrival is shifted by 40 samples so the symmetric
/// kernel stays causal.  With t60 > 0 a noise tail begins 2 ms after the
/// arrival, decays by 60 dB over t60, and carries the energy of the direct
/// path at 1 m divided by 10^(drr/10).  Tail noise is seeded per microphone
/// position, so sub-arrays reproduce the same signals.
inline Rir synth_rir(const ArrayGeometry& geometry, const Point3& source, double t60_s, int sample_rate = kSampleRate,
                     const RirOptions& opt = {}) {
  geometry.validate();
  require(t60_s >= 0.0, "t60 must be non-negative");
  const Point3 center = geometry.centroid();
  double hull = 0.0;
  for (const auto& p : geometry.positions) hull = std::max(hull, distance(p, center));
  require(distance(source, center) > hull, "source inside the array hull");
  const double fs = static_cast<double>(sample_rate);
  constexpr std::size_t half = kFractionalDelayTaps / 2;

  Rir rir;
  rir.sample_rate = sample_rate;
  rir.direct_offset = half;
  const std::size_t tail_len = t60_s > 0.0 ? static_cast<std::size_t>(std::ceil(t60_s * fs)) : 0;
  for (std::size_t m = 0; m < geometry.size(); ++m) {
    const double d = distance(source, geometry.positions[m]);
    require(d > 0.05, "source closer than 5 cm to a microphone");
    const double delay = static_cast<double>(half) + d / kSpeedOfSound * fs;
    const auto onset = static_cast<std::size_t>(std::floor(delay)) + 32;
    std::vector<double> h(static_cast<std::size_t>(std::ceil(delay)) + half + 1 + (tail_len ? 32 + tail_len : 0), 0.0);
    const auto center_tap = static_cast<long>(std::lround(delay));
    for (long n = center_tap - static_cast<long>(half); n <= center_tap + static_cast<long>(half); ++n) {
      const double x = static_cast<double>(n) - delay;
      const double sinc = std::abs(x) < 1e-12 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
      const double win = 0.5 * (1.0 + std::cos(2.0 * std::numbers::pi * x / static_cast<double>(kFractionalDelayTaps)));
      h[static_cast<std::size_t>(n)] = sinc * win / d;
    }
    if (tail_len > 0) {
      std::uint64_t key = opt.seed;
      for (double coord : geometry.positions[m]) {
        key = mix_seed(key ^ static_cast<std::uint64_t>(std::llround(coord * 1e6) + (1LL << 40)));
      }
      for (double coord : source) key = mix_seed(key ^ static_cast<std::uint64_t>(std::llround(coord * 1e6) + (1LL << 40)));
      Rng rng(key);
      const double decay = 3.0 * std::log(10.0) / (t60_s * fs);  // amplitude -60 dB at t60
      std::vector<double> tail(tail_len);
      double energy = 0.0;
      for (std::size_t k = 0; k < tail_len; ++k) {
        tail[k] = rng.normal() * std::exp(-decay * static_cast<double>(k));
        energy += tail[k] * tail[k];
      }
      const double target_energy = std::pow(10.0, -opt.drr_db / 10.0);  // direct energy at 1 m is 1
      const double scale = std::sqrt(target_energy / energy);
      for (std::size_t k = 0; k < tail_len; ++k) h[onset + k] += scale * tail[k];
    }
    rir.taps.push_back(std::move(h));
  }
  return rir;
}

/// Dry source signals, one per role.
struct SourceWaves {
  std::optional<std::vector<double>> target;
  std::optional<std::vector<double>> non_target;
  std::optional<std::vector<double>> interferer;
};

struct RenderedScene {
  WaveBuffer mixture;
  WaveBuffer clean_target;  // reverberant target at the reference mic
  // Scaled components at the reference mic, for level verification.
  std::vector<double> non_target_ref;
  std::vector<double> interferer_ref;
  std::vector<double> noise_ref;
  double measured_sir_db = 0.0;
  double measured_snr_db = 0.0;
  double measured_target_to_non_target_db = 0.0;
};

inline double mean_power(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc / static_cast<double>(x.size());
}

/// Mixes the reverberant sources and sensor noise at the requested levels,
/// all measured at the reference microphone over the whole clip.
inline RenderedScene render_scene(const SceneSpec& spec, const SourceWaves& waves, int sample_rate = kSampleRate) {
  validate_scene(spec);
  require(waves.target.has_value(), "missing target source wave");
  require(waves.non_target.has_value(), "missing non_target source wave");
  require(waves.interferer.has_value(), "missing interferer source wave");
  const auto n = static_cast<std::size_t>(std::lround(spec.duration_s * sample_rate));
  const std::size_t M = spec.geometry.size();

  const auto image = [&](const std::vector<double>& dry, SourceRole role, std::uint64_t stream) {
    const Rir rir = synth_rir(spec.geometry, spec.source(role).position(), spec.t60_s, sample_rate,
                              {spec.drr_db, derive_seed(spec.seed, stream)});
    std::vector<std::vector<double>> out(M);
    for (std::size_t m = 0; m < M; ++m) {
      auto y = dsp::fft_convolve(dry, rir.taps[m]);
      // Drop the causal lead-in so a zero-distance arrival would be aligned with the dry signal.
      const std::size_t skip = std::min(rir.direct_offset, y.size());
      y.erase(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(skip));
      y.resize(n, 0.0);
      out[m] = std::move(y);
    }
    return out;
  };
  auto tgt = image(*waves.target, SourceRole::kTarget, 1);
  auto ntg = image(*waves.non_target, SourceRole::kNonTarget, 2);
  auto itf = image(*waves.interferer, SourceRole::kInterferer, 3);

  const double p_t = mean_power(tgt[0]);
  const double p_n = mean_power(ntg[0]);
  const double p_i = mean_power(itf[0]);
  require(p_t > 0.0 && p_n > 0.0 && p_i > 0.0, "silent source cannot be scaled");
  const double g_n = std::sqrt(p_t / p_n);
  const double g_i = std::sqrt(p_t / (p_i * std::pow(10.0, spec.sir_db / 10.0)));
  const double noise_std = std::sqrt(p_t / std::pow(10.0, spec.snr_db / 10.0));

  Rng noise_rng(derive_seed(spec.seed, 4));
  RenderedScene out;
  out.mixture = WaveBuffer(M, n, sample_rate);
  for (std::size_t m = 0; m < M; ++m) {
    std::vector<double> noise(n);
    for (double& v : noise) v = noise_std * noise_rng.normal();
    for (std::size_t i = 0; i < n; ++i) {
      out.mixture.channels[m][i] = tgt[m][i] + g_n * ntg[m][i] + g_i * itf[m][i] + noise[i];
    }
    if (m == 0) out.noise_ref = std::move(noise);
  }
  out.clean_target = WaveBuffer::mono(tgt[0], sample_rate);
  out.non_target_ref = std::move(ntg[0]);
  out.interferer_ref = std::move(itf[0]);
  for (double& v : out.non_target_ref) v *= g_n;
  for (double& v : out.interferer_ref) v *= g_i;
  out.measured_sir_db = 10.0 * std::log10(p_t / mean_power(out.interferer_ref));
  out.measured_snr_db = 10.0 * std::log10(p_t / mean_power(out.noise_ref));
  out.measured_target_to_non_target_db = 10.0 * std::log10(p_t / mean_power(out.non_target_ref));
  return out;
}

/// Frame is active iff its energy exceeds the loudest frame's by no more than
/// `threshold_db`.  An all-silent signal yields all zeros.
inline std::vector<std::uint8_t> label_frames(const WaveBuffer& clean_target, std::size_t frame_len = 400,
                                              std::size_t hop = 160, double threshold_db = 40.0) {
  const auto energy = frame_energy(clean_target, 0, frame_len, hop);
  std::vector<std::uint8_t> labels(energy.size(), 0);
  const double peak = energy.empty() ? 0.0 : *std::max_element(energy.begin(), energy.end());
  if (peak <= 0.0) return labels;
  const double floor = peak * std::pow(10.0, -threshold_db / 10.0);
  for (std::size_t l = 0; l < energy.size(); ++l) labels[l] = energy[l] > floor ? 1 : 0;
  return labels;
}

inline std::vector<char> encode_labels(const std::vector<std::uint8_t>& labels) {
  io::ByteWriter w;
  w.magic("ALBL");
  w.u32(static_cast<std::uint32_t>(labels.size()));
  w.raw(labels.data(), labels.size());
  return w.bytes();
}

inline std::vector<std::uint8_t> decode_labels(io::ByteReader& r) {
  r.expect_magic("ALBL");
  const std::uint32_t n = r.u32();
  std::vector<std::uint8_t> labels(n);
  r.copy(labels.data(), n);
  require(r.at_end(), r.origin() + ": trailing bytes after labels");
  for (auto v : labels) require(v <= 1, r.origin() + ": labels must be 0 or 1");
  return labels;
}

inline void save_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels) {
  io::write_file_atomic(path, encode_labels(labels));
}

inline std::vector<std::uint8_t> load_labels(const std::filesystem::path& path) {
  auto r = io::open_reader(path);
  return decode_labels(r);
}

// ---- JSON ----

inline nlohmann::json to_json(const ArrayGeometry& g) {
  nlohmann::json pos = nlohmann::json::array();
  for (const auto& p : g.positions) pos.push_back({p[0], p[1], p[2]});
  return {{"name", g.name}, {"positions", pos}, {"reference_index", 0}};
}

inline ArrayGeometry geometry_from_json(const nlohmann::json& j) {
  ArrayGeometry g;
  g.name = j.value("name", std::string("custom"));
  for (const auto& p : j.at("positions")) {
    require(p.is_array() && p.size() == 3, "geometry positions must be [x, y, z] triples");
    g.positions.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
  }
  require(j.value("reference_index", 0) == 0, "geometry reference_index must be 0");
  g.validate();
  return g;
}

inline nlohmann::json to_json(const SceneSpec& s) {
  nlohmann::json sources = nlohmann::json::array();
  for (const auto& src : s.sources) {
    sources.push_back({{"role", role_name(src.role)}, {"azimuth_deg", src.azimuth_deg}, {"distance_m", src.distance_m}});
  }
  return {{"geometry", to_json(s.geometry)},
          {"sources", sources},
          {"sir_db", s.sir_db},
          {"snr_db", s.snr_db},
          {"t60_s", s.t60_s},
          {"drr_db", s.drr_db},
          {"duration_s", s.duration_s},
          {"target_span", {s.target_span.start_s, s.target_span.end_s}},
          {"non_target_span", {s.non_target_span.start_s, s.non_target_span.end_s}},
          {"target_speaker", s.target_speaker},
          {"non_target_speaker", s.non_target_speaker},
          {"programme", s.programme},
          {"seed", s.seed}};
}

inline SceneSpec scene_from_json(const nlohmann::json& j) {
  SceneSpec s;
  s.geometry = geometry_from_json(j.at("geometry"));
  for (const auto& src : j.at("sources")) {
    s.sources.push_back({role_from_name(src.at("role").get<std::string>()), src.at("azimuth_deg").get<double>(),
                         src.at("distance_m").get<double>()});
  }
  s.sir_db = j.at("sir_db").get<double>();
  s.snr_db = j.value("snr_db", 30.0);
  s.t60_s = j.value("t60_s", 0.16);
  s.drr_db = j.value("drr_db", 6.0);
  s.duration_s = j.at("duration_s").get<double>();
  s.target_span = {j.at("target_span")[0].get<double>(), j.at("target_span")[1].get<double>()};
  s.non_target_span = {j.at("non_target_span")[0].get<double>(), j.at("non_target_span")[1].get<double>()};
  s.target_speaker = j.at("target_speaker").get<std::uint64_t>();
  s.non_target_speaker = j.at("non_target_speaker").get<std::uint64_t>();
  s.programme = j.value("programme", std::uint64_t{0});
  s.seed = j.value("seed", std::uint64_t{0});
  validate_scene(s);
  return s;
}

}  // namespace coher_pvad
