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

// Independent reference computations for the test suites.  Nothing here may
// call into the code paths it is used to check.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numbers>
#include <set>
#include <vector>

namespace oracle {

/// Direct O(N^2) DFT of a real sequence, bins 0..n/2.
inline std::vector<std::complex<double>> direct_dft(const std::vector<double>& x, std::size_t n) {
  std::vector<std::complex<double>> out(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(k * i % n) / static_cast<double>(n);
      acc += x[i] * std::complex<double>(std::cos(a), std::sin(a));
    }
    out[k] = acc;
  }
  return out;
}

/// Mann-Whitney U / (P N), ties counted one half.
template <typename Label>
double rank_auc(const std::vector<double>& scores, const std::vector<Label>& labels) {
  double wins = 0.0;
  double pos = 0.0, neg = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 1) pos += 1; else neg += 1;
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] == 1) continue;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / (pos * neg);
}

struct SweepPoint {
  double fpr, fnr;
};

/// Counts errors from scratch at every distinct threshold (score >= t is
/// positive), plus the accept-nothing point, in descending threshold order.
template <typename Label>
std::vector<SweepPoint> threshold_sweep(const std::vector<double>& scores, const std::vector<Label>& labels) {
  std::set<double, std::greater<>> thresholds(scores.begin(), scores.end());
  double pos = 0, neg = 0;
  for (auto y : labels) (y == 1 ? pos : neg) += 1;
  std::vector<SweepPoint> pts{{0.0, 1.0}};
  for (double t : thresholds) {
    double fp = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const bool accept = scores[i] >= t;
      if (accept && labels[i] != 1) fp += 1;
      if (!accept && labels[i] == 1) fn += 1;
    }
    pts.push_back({fp / neg, fn / pos});
  }
  return pts;
}

/// Locates the pair of sweep points minimizing |FPR - FNR| that bracket the
/// crossing and interpolates between them.
template <typename Label>
double brute_force_eer(const std::vector<double>& scores, const std::vector<Label>& labels) {
  const auto pts = threshold_sweep(scores, labels);
  double best_gap = 1e300;
  double best = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double d0 = pts[i].fpr - pts[i].fnr, d1 = pts[i + 1].fpr - pts[i + 1].fnr;
    if (d0 == 0.0) return pts[i].fpr;
    if ((d0 < 0) != (d1 < 0) || d1 == 0.0) {
      const double gap = std::min(std::abs(d0), std::abs(d1));
      if (gap < best_gap) {
        best_gap = gap;
        const double t = d0 / (d0 - d1);
        best = pts[i].fpr + t * (pts[i + 1].fpr - pts[i].fpr);
      }
    }
  }
  return best;
}

/// Central finite-difference gradient of f at x (modified in place and restored).
inline std::vector<double> finite_difference(std::vector<double>& x, const std::function<double()>& f,
                                             double step = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = f();
    x[i] = orig - step;
    const double down = f();
    x[i] = orig;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

}  // namespace oracle
