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
#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "coher_pvad/error.hpp"

namespace coher_pvad {

/// Dense row-major real matrix, rows are frames.
struct FrameMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  FrameMatrix() = default;
  FrameMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

/// Triangular filters on the ERB-rate scale.
///
/// Centers are spaced uniformly in ERB-rate between 50 Hz and Nyquist.  Each
/// triangle reaches its neighbours' centers, so between the first and last
/// center the weights sum to one.  Bins below the first center belong fully to
/// band 0 and bins above the last center fully to band B-1.
struct ErbFilterbank {
  struct Tap {
    std::size_t bin;
    double weight;
  };

  std::size_t num_bins = 0;
  std::vector<std::vector<Tap>> bands;
  std::vector<double> normalizers;  // sum of weights per band
  std::vector<double> center_hz;

  std::size_t num_bands() const { return bands.size(); }

  static double hz_to_erb_rate(double hz) { return 21.4 * std::log10(4.37 * hz / 1000.0 + 1.0); }
  static double erb_rate_to_hz(double erb) {
    return (std::pow(10.0, erb / 21.4) - 1.0) / 4.37 * 1000.0;
  }
};

inline constexpr double kErbLowHz = 50.0;

inline ErbFilterbank build_erb_filterbank(std::size_t nfft = 512, double sample_rate = 16000.0,
                                          std::size_t num_bands = 32) {
  require(nfft >= 2 && sample_rate > 0.0, "invalid filterbank geometry");
  const std::size_t bins = nfft / 2 + 1;
  require(num_bands >= 2, "filterbank needs at least two bands");
  require(num_bands <= bins, "band count exceeds FFT bin count");
  const double nyquist = sample_rate / 2.0;

  ErbFilterbank fb;
  fb.num_bins = bins;
  fb.bands.resize(num_bands);
  fb.normalizers.assign(num_bands, 0.0);

  const double lo = ErbFilterbank::hz_to_erb_rate(kErbLowHz);
  const double hi = ErbFilterbank::hz_to_erb_rate(nyquist);
  const double step = (hi - lo) / static_cast<double>(num_bands - 1);
  std::vector<double> centers_erb(num_bands);
  for (std::size_t b = 0; b < num_bands; ++b) {
    centers_erb[b] = lo + step * static_cast<double>(b);
    fb.center_hz.push_back(ErbFilterbank::erb_rate_to_hz(centers_erb[b]));
  }

  for (std::size_t f = 0; f < bins; ++f) {
    const double hz = nyquist * static_cast<double>(f) / static_cast<double>(bins - 1);
    const double e = ErbFilterbank::hz_to_erb_rate(hz);
    if (e <= centers_erb.front()) {
      fb.bands.front().push_back({f, 1.0});
      continue;
    }
    if (e >= centers_erb.back()) {
      fb.bands.back().push_back({f, 1.0});
      continue;
    }
    const auto b = static_cast<std::size_t>(std::min<double>(
        std::floor((e - lo) / step), static_cast<double>(num_bands - 2)));
    const double t = std::clamp((e - centers_erb[b]) / step, 0.0, 1.0);
    if (t < 1.0) fb.bands[b].push_back({f, 1.0 - t});
    if (t > 0.0) fb.bands[b + 1].push_back({f, t});
  }

  // A band narrower than the bin spacing can end up without taps; give it
  // the bin nearest its center so the normalizer stays positive.
  for (std::size_t b = 0; b < num_bands; ++b) {
    if (fb.bands[b].empty()) {
      const double pos = fb.center_hz[b] / nyquist * static_cast<double>(bins - 1);
      const auto f = static_cast<std::size_t>(std::clamp<double>(std::lround(pos), 0.0,
                                                                 static_cast<double>(bins - 1)));
      fb.bands[b].push_back({f, 1.0});
    }
    for (const auto& tap : fb.bands[b]) fb.normalizers[b] += tap.weight;
  }
  return fb;
}

/// Unnormalized band power of one channel: sum_f w_b(f) |Y(l,f)|^2.
inline FrameMatrix erb_pool_power(std::span<const std::complex<double>> spectrum,
                                  std::size_t num_frames, const ErbFilterbank& fb) {
  require(spectrum.size() == num_frames * fb.num_bins, "spectrum bin count does not match filterbank");
  FrameMatrix out(num_frames, fb.num_bands());
  for (std::size_t l = 0; l < num_frames; ++l) {
    const auto* row = spectrum.data() + l * fb.num_bins;
    for (std::size_t b = 0; b < fb.num_bands(); ++b) {
      double acc = 0.0;
      for (const auto& tap : fb.bands[b]) acc += tap.weight * std::norm(row[tap.bin]);
      out(l, b) = acc;
    }
  }
  return out;
}

/// Weighted mean of a per-bin map inside each band.
inline FrameMatrix erb_pool_coherence(const FrameMatrix& gamma, const ErbFilterbank& fb) {
  require(gamma.cols == fb.num_bins, "coherence bin count does not match filterbank");
  FrameMatrix out(gamma.rows, fb.num_bands());
  for (std::size_t l = 0; l < gamma.rows; ++l) {
    for (std::size_t b = 0; b < fb.num_bands(); ++b) {
      double acc = 0.0;
      for (const auto& tap : fb.bands[b]) acc += tap.weight * gamma(l, tap.bin);
      out(l, b) = acc / fb.normalizers[b];
    }
  }
  return out;
}

}  // namespace coher_pvad
