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
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "coher_pvad/error.hpp"
#include "coher_pvad/fft.hpp"
#include "coher_pvad/wave.hpp"

namespace coher_pvad {

enum class WindowKind { kHann, kRectangular };

/// Analysis framing: 25 ms frames, 10 ms hop, 512-point FFT at 16 kHz.
struct FrameGrid {
  std::size_t frame_len = 400;
  std::size_t hop = 160;
  std::size_t nfft = 512;

  std::size_t num_bins() const { return nfft / 2 + 1; }

  /// Frames that fit entirely inside the signal; trailing samples are dropped.
  std::size_t num_frames(std::size_t num_samples) const {
    if (num_samples < frame_len) return 0;
    return (num_samples - frame_len) / hop + 1;
  }
};

/// Complex STFT bins indexed (channel, frame, bin), bins contiguous.
struct MultichannelSpectrogram {
  std::size_t num_channels = 0;
  std::size_t num_frames = 0;
  std::size_t num_bins = 0;
  FrameGrid grid;
  std::vector<std::complex<double>> bins;

  std::complex<double>& at(std::size_t m, std::size_t l, std::size_t f) {
    return bins[(m * num_frames + l) * num_bins + f];
  }
  const std::complex<double>& at(std::size_t m, std::size_t l, std::size_t f) const {
    return bins[(m * num_frames + l) * num_bins + f];
  }

  std::span<const std::complex<double>> frame(std::size_t m, std::size_t l) const {
    return {bins.data() + (m * num_frames + l) * num_bins, num_bins};
  }

  /// Keeps only the listed channels, in the given order.
  MultichannelSpectrogram select_channels(std::span<const std::size_t> keep) const {
    MultichannelSpectrogram out;
    out.num_channels = keep.size();
    out.num_frames = num_frames;
    out.num_bins = num_bins;
    out.grid = grid;
    out.bins.reserve(keep.size() * num_frames * num_bins);
    for (std::size_t m : keep) {
      require(m < num_channels, "channel index out of range");
      const auto* begin = bins.data() + m * num_frames * num_bins;
      out.bins.insert(out.bins.end(), begin, begin + num_frames * num_bins);
    }
    return out;
  }
};

/// Periodic window of length n.
inline std::vector<double> make_window(WindowKind kind, std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (kind == WindowKind::kHann) {
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                  static_cast<double>(n));
    }
  }
  return w;
}

inline MultichannelSpectrogram stft(const WaveBuffer& wave, const FrameGrid& grid = {},
                                    WindowKind window = WindowKind::kHann) {
  wave.validate();
  require(grid.hop >= 1, "hop must be at least one sample");
  require(grid.frame_len >= 1 && grid.frame_len <= grid.nfft, "frame length must not exceed nfft");
  require(dsp::is_power_of_two(grid.nfft), "nfft must be a power of two (radix-2 FFT)");
  require(wave.num_samples() >= grid.frame_len, "insufficient samples for one frame");

  MultichannelSpectrogram spec;
  spec.grid = grid;
  spec.num_channels = wave.num_channels();
  spec.num_frames = grid.num_frames(wave.num_samples());
  spec.num_bins = grid.num_bins();
  spec.bins.resize(spec.num_channels * spec.num_frames * spec.num_bins);

  const auto win = make_window(window, grid.frame_len);
  std::vector<std::complex<double>> buf(grid.nfft);
  for (std::size_t m = 0; m < spec.num_channels; ++m) {
    const auto& x = wave.channels[m];
    for (std::size_t l = 0; l < spec.num_frames; ++l) {
      const std::size_t start = l * grid.hop;
      for (std::size_t i = 0; i < grid.frame_len; ++i) buf[i] = x[start + i] * win[i];
      for (std::size_t i = grid.frame_len; i < grid.nfft; ++i) buf[i] = 0.0;
      dsp::fft_inplace(buf);
      auto* dst = &spec.at(m, l, 0);
      for (std::size_t f = 0; f < spec.num_bins; ++f) dst[f] = buf[f];
    }
  }
  return spec;
}

/// Sum of squared samples per frame on the same grid as stft (no window).
inline std::vector<double> frame_energy(const WaveBuffer& wave, std::size_t channel,
                                        std::size_t frame_len, std::size_t hop) {
  require(channel < wave.num_channels(), "channel out of range");
  require(hop >= 1 && frame_len >= 1, "frame length and hop must be positive");
  const FrameGrid grid{frame_len, hop, dsp::next_power_of_two(frame_len)};
  const auto& x = wave.channels[channel];
  const std::size_t frames = grid.num_frames(x.size());
  std::vector<double> energy(frames, 0.0);
  for (std::size_t l = 0; l < frames; ++l) {
    double acc = 0.0;
    for (std::size_t i = 0; i < frame_len; ++i) {
      const double s = x[l * hop + i];
      acc += s * s;
    }
    energy[l] = acc;
  }
  return energy;
}

}  // namespace coher_pvad
