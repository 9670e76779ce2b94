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
#include <vector>

#include "coher_pvad/erb.hpp"
#include "coher_pvad/error.hpp"
#include "coher_pvad/stft.hpp"

namespace coher_pvad {

using Complex = std::complex<double>;

/// Unit-modulus inter-channel phase terms for microphones 2..M against the
/// reference; an entry is exactly zero where the bin is degenerate.
using WhitenedRtf = std::vector<Complex>;

/// Magnitudes below this floor mark a bin as degenerate.
inline constexpr double kDegenerateFloor = 1e-12;

inline Complex whiten(Complex z, double floor = 0.0) {
  const double mag = std::abs(z);
  if (!(mag > floor)) return {0.0, 0.0};
  return z / mag;
}

struct SpatialConfig {
  double lambda_global = 0.99;
  double lambda_local = 0.01;
  // Recursive smoothing of the cross-spectra feeding the short-term RTF.
  // Zero gives the instantaneous ratio Y^m / Y^1.
  double rtf_smoothing = 0.0;
};

/// Short-term whitened RTF of one time-frequency bin.
inline WhitenedRtf whiten_rtf(const MultichannelSpectrogram& spec, std::size_t l, std::size_t f) {
  require(spec.num_channels >= 2, "spatial features require >= 2 microphones");
  require(l < spec.num_frames && f < spec.num_bins, "bin index out of range");
  WhitenedRtf r(spec.num_channels - 1);
  const Complex ref = spec.at(0, l, f);
  for (std::size_t m = 1; m < spec.num_channels; ++m) {
    const Complex y = spec.at(m, l, f);
    if (std::abs(ref) < kDegenerateFloor || std::abs(y) < kDegenerateFloor) {
      r[m - 1] = 0.0;
    } else {
      // Y^m / Y^1 has the phase of Y^m conj(Y^1); the latter avoids a division.
      r[m - 1] = whiten(y * std::conj(ref));
    }
  }
  return r;
}

/// One step of the first-order recursion out = lambda prev + (1 - lambda) current.
inline void update_long_term_rtf(std::span<Complex> state, std::span<const Complex> current,
                                 double lambda) {
  require(lambda >= 0.0 && lambda <= 1.0, "forgetting factor must lie in [0, 1]");
  require(state.size() == current.size(), "long-term RTF size mismatch");
  for (std::size_t i = 0; i < state.size(); ++i) {
    state[i] = lambda * state[i] + (1.0 - lambda) * current[i];
  }
}

inline std::vector<Complex> update_long_term_rtf(std::span<const Complex> prev,
                                                 std::span<const Complex> current, double lambda) {
  std::vector<Complex> out(prev.begin(), prev.end());
  update_long_term_rtf(std::span<Complex>(out), current, lambda);
  return out;
}

/// Normalized real inner product of two whitened vectors, clamped to [-1, 1].
inline double lstsc_frame(std::span<const Complex> r, std::span<const Complex> rbar) {
  require(r.size() == rbar.size(), "whitened RTF length mismatch");
  require(!r.empty(), "whitened RTF must have at least one entry");
  double acc = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    // Re{conj(a) b}
    acc += r[i].real() * rbar[i].real() + r[i].imag() * rbar[i].imag();
  }
  return std::clamp(acc / static_cast<double>(r.size()), -1.0, 1.0);
}

/// Long-term whitened RTF tracker for one frequency bin.
///
/// The recursion runs on the unwhitened average; the whitened copy is taken
/// every frame before the coherence is evaluated.  The first observation
/// seeds the state, so the coherence of frame 0 is one.
class LongTermRtf {
 public:
  LongTermRtf(std::size_t entries, double lambda) : state_(entries), lambda_(lambda) {
    require(lambda >= 0.0 && lambda <= 1.0, "forgetting factor must lie in [0, 1]");
  }

  /// Starts from an explicit state instead of the first observation.
  void seed(std::span<const Complex> state) {
    require(state.size() == state_.size(), "long-term RTF size mismatch");
    std::copy(state.begin(), state.end(), state_.begin());
    primed_ = true;
  }

  /// Consumes r(l,f) and returns gamma(l,f).
  double push(std::span<const Complex> r) {
    if (!primed_) {
      seed(r);
    } else {
      update_long_term_rtf(std::span<Complex>(state_), r, lambda_);
    }
    whitened_.resize(state_.size());
    for (std::size_t i = 0; i < state_.size(); ++i) whitened_[i] = whiten(state_[i]);
    return lstsc_frame(r, whitened_);
  }

  std::span<const Complex> state() const { return state_; }

 private:
  std::vector<Complex> state_;
  std::vector<Complex> whitened_;
  double lambda_;
  bool primed_ = false;
};

/// Global (slow) and local (fast) coherence maps, rows are frames.  Columns
/// are FFT bins before ERB pooling and bands after.
struct LstscFeature {
  FrameMatrix global;
  FrameMatrix local;
  double lambda_global = 0.99;
  double lambda_local = 0.01;
};

inline LstscFeature compute_lstsc_maps(const MultichannelSpectrogram& spec,
                                       const SpatialConfig& cfg = {}) {
  require(spec.num_channels >= 2, "spatial features require >= 2 microphones");
  require(cfg.lambda_global > 0.0 && cfg.lambda_global < 1.0 && cfg.lambda_local > 0.0 &&
              cfg.lambda_local < 1.0,
          "forgetting factors must lie in (0, 1)");
  require(cfg.rtf_smoothing >= 0.0 && cfg.rtf_smoothing < 1.0, "rtf_smoothing must lie in [0, 1)");
  const std::size_t entries = spec.num_channels - 1;
  const std::size_t frames = spec.num_frames;
  const std::size_t bins = spec.num_bins;

  LstscFeature out;
  out.lambda_global = cfg.lambda_global;
  out.lambda_local = cfg.lambda_local;
  out.global = FrameMatrix(frames, bins);
  out.local = FrameMatrix(frames, bins);

  const double alpha = cfg.rtf_smoothing;
  std::vector<Complex> cross(entries);
  WhitenedRtf r(entries);
  for (std::size_t f = 0; f < bins; ++f) {
    LongTermRtf slow(entries, cfg.lambda_global);
    LongTermRtf fast(entries, cfg.lambda_local);
    std::fill(cross.begin(), cross.end(), Complex{});
    for (std::size_t l = 0; l < frames; ++l) {
      const Complex ref = spec.at(0, l, f);
      for (std::size_t m = 1; m <= entries; ++m) {
        const Complex y = spec.at(m, l, f);
        const Complex inst = y * std::conj(ref);
        cross[m - 1] = l == 0 ? inst : alpha * cross[m - 1] + (1.0 - alpha) * inst;
        const bool degenerate = std::abs(ref) < kDegenerateFloor || std::abs(y) < kDegenerateFloor;
        r[m - 1] = degenerate ? Complex{} : whiten(cross[m - 1]);
      }
      out.global(l, f) = slow.push(r);
      out.local(l, f) = fast.push(r);
    }
  }
  return out;
}

inline LstscFeature erb_pool(const LstscFeature& maps, const ErbFilterbank& fb) {
  LstscFeature out;
  out.lambda_global = maps.lambda_global;
  out.lambda_local = maps.lambda_local;
  out.global = erb_pool_coherence(maps.global, fb);
  out.local = erb_pool_coherence(maps.local, fb);
  return out;
}

}  // namespace coher_pvad
