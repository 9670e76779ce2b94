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
#include <numbers>
#include <vector>

#include "coher_pvad/rng.hpp"

// Synthetic "speech-like" source material: a glottal pulse train shaped by
// three formant resonators, gated into syllables and words.  Each voice id
// deterministically fixes pitch and formant placement, so different ids give
// spectrally distinct talkers.

namespace coher_pvad::speech {

struct Voice {
  double f0_hz = 120.0;
  std::array<double, 3> formant_hz{500.0, 1500.0, 2500.0};
  std::array<double, 3> bandwidth_hz{90.0, 130.0, 180.0};
  std::array<double, 3> formant_gain{1.0, 0.6, 0.35};
  double breathiness = 0.05;
};

inline Voice make_voice(std::uint64_t voice_id) {
  Rng rng(derive_seed(0x766f696365ULL, voice_id));
  Voice v;
  v.f0_hz = rng.uniform(90.0, 240.0);
  v.formant_hz = {rng.uniform(300.0, 850.0), rng.uniform(950.0, 2300.0), rng.uniform(2450.0, 3800.0)};
  v.bandwidth_hz = {rng.uniform(60.0, 110.0), rng.uniform(90.0, 150.0), rng.uniform(130.0, 220.0)};
  v.formant_gain = {1.0, rng.uniform(0.3, 0.9), rng.uniform(0.15, 0.6)};
  v.breathiness = rng.uniform(0.02, 0.1);
  return v;
}

struct Resonator {
  double a1 = 0.0, a2 = 0.0, gain = 0.0;
  double y1 = 0.0, y2 = 0.0;

  Resonator(double freq_hz, double bandwidth_hz, double fs) {
    const double r = std::exp(-std::numbers::pi * bandwidth_hz / fs);
    a1 = 2.0 * r * std::cos(2.0 * std::numbers::pi * freq_hz / fs);
    a2 = -r * r;
    gain = 1.0 - r;
  }

  double operator()(double x) {
    const double y = gain * x + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

struct TalkOptions {
  double min_syllable_s = 0.12, max_syllable_s = 0.30;
  std::size_t min_word = 2, max_word = 5;  // syllables per word
  double min_pause_s = 0.08, max_pause_s = 0.35;
  double formant_jitter = 0.08;  // per-syllable relative formant variation
};

/// Talk-show style: hardly any pauses.
inline TalkOptions continuous_talk() {
  TalkOptions o;
  o.min_pause_s = 0.01;
  o.max_pause_s = 0.06;
  o.min_word = 3;
  o.max_word = 8;
  return o;
}

/// `num_samples` of speech-like signal, peak-normalized to about 0.5.
/// Silences between words are exactly zero.
inline std::vector<double> synthesize(const Voice& voice, std::size_t num_samples, Rng& rng,
                                      double fs = 16000.0, const TalkOptions& opt = {}) {
  std::vector<double> out(num_samples, 0.0);
  std::size_t pos = 0;
  double phase = 0.0;
  double glottal_lp = 0.0;
  while (pos < num_samples) {
    const std::size_t syllables =
        opt.min_word + static_cast<std::size_t>(rng.below(opt.max_word - opt.min_word + 1));
    for (std::size_t s = 0; s < syllables && pos < num_samples; ++s) {
      const auto len = static_cast<std::size_t>(rng.uniform(opt.min_syllable_s, opt.max_syllable_s) * fs);
      std::array<Resonator, 3> formants{
          Resonator(voice.formant_hz[0] * (1.0 + opt.formant_jitter * rng.uniform(-1.0, 1.0)), voice.bandwidth_hz[0], fs),
          Resonator(voice.formant_hz[1] * (1.0 + opt.formant_jitter * rng.uniform(-1.0, 1.0)), voice.bandwidth_hz[1], fs),
          Resonator(voice.formant_hz[2] * (1.0 + opt.formant_jitter * rng.uniform(-1.0, 1.0)), voice.bandwidth_hz[2], fs)};
      const double pitch_start = voice.f0_hz * rng.uniform(0.9, 1.15);
      const double pitch_end = voice.f0_hz * rng.uniform(0.85, 1.05);
      const double level = rng.uniform(0.6, 1.0);
      for (std::size_t i = 0; i < len && pos < num_samples; ++i, ++pos) {
        const double u = static_cast<double>(i) / static_cast<double>(len);
        const double f0 = pitch_start + (pitch_end - pitch_start) * u;
        phase += f0 / fs;
        double pulse = 0.0;
        if (phase >= 1.0) {
          phase -= 1.0;
          pulse = 1.0;
        }
        glottal_lp = 0.7 * glottal_lp + pulse;  // softens the pulse spectrum
        const double excitation = glottal_lp + voice.breathiness * rng.normal();
        double y = 0.0;
        for (std::size_t k = 0; k < 3; ++k) y += voice.formant_gain[k] * formants[k](excitation);
        const double env = std::sin(std::numbers::pi * u);
        out[pos] = level * env * env * y;
      }
    }
    pos += static_cast<std::size_t>(rng.uniform(opt.min_pause_s, opt.max_pause_s) * fs);
  }
  double peak = 0.0;
  for (double x : out) peak = std::max(peak, std::abs(x));
  if (peak > 0.0) {
    for (double& x : out) x *= 0.5 / peak;
  }
  return out;
}

/// Continuous "TV" programme: two talkers taking turns over a low noise bed.
inline std::vector<double> synthesize_tv(std::uint64_t programme_id, std::size_t num_samples, Rng& rng,
                                         double fs = 16000.0) {
  const Voice a = make_voice(0x7400000000ULL + 2 * programme_id);
  const Voice b = make_voice(0x7400000000ULL + 2 * programme_id + 1);
  std::vector<double> out(num_samples, 0.0);
  std::size_t pos = 0;
  bool first = rng.bernoulli(0.5);
  while (pos < num_samples) {
    const auto turn = std::min<std::size_t>(num_samples - pos, static_cast<std::size_t>(rng.uniform(0.8, 2.0) * fs));
    const auto seg = synthesize(first ? a : b, turn, rng, fs, continuous_talk());
    std::copy(seg.begin(), seg.end(), out.begin() + static_cast<std::ptrdiff_t>(pos));
    pos += turn;
    first = !first;
  }
  double lp = 0.0;
  for (double& x : out) {
    lp = 0.95 * lp + 0.05 * rng.normal();
    x += 0.15 * lp;
  }
  return out;
}

}  // namespace coher_pvad::speech
