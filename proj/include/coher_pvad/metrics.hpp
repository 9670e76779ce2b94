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
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "coher_pvad/error.hpp"

namespace coher_pvad::metrics {

struct RocPoint {
  double threshold;  // positive iff score >= threshold
  double fpr;
  double fnr;
  double tpr;
};

/// Operating points in descending threshold order; equal scores move
/// together.  The first point (threshold +inf) accepts nothing, the last
/// accepts everything.
struct RocCurve {
  std::vector<RocPoint> points;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

template <typename Label>
RocCurve roc_curve(std::span<const double> scores, std::span<const Label> labels) {
  require(scores.size() == labels.size(), "roc: scores and labels differ in length");
  RocCurve curve;
  for (auto y : labels) {
    require(y == Label(0) || y == Label(1), "roc: labels must be 0 or 1");
    if (y == Label(1)) ++curve.positives;
    else ++curve.negatives;
  }
  require(curve.positives > 0 && curve.negatives > 0, "ROC undefined: labels contain a single class");
  for (double s : scores) require(!std::isnan(s), "roc: NaN score");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  const double P = static_cast<double>(curve.positives), N = static_cast<double>(curve.negatives);
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) {
      if (labels[order[i]] == Label(1)) ++tp;
      else ++fp;
    }
    const double tpr = static_cast<double>(tp) / P;
    curve.points.push_back({s, static_cast<double>(fp) / N, 1.0 - tpr, tpr});
  }
  return curve;
}

/// Trapezoidal area under TPR(FPR).
inline double auc(const RocCurve& curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const auto& a = curve.points[i - 1];
    const auto& b = curve.points[i];
    area += (b.fpr - a.fpr) * 0.5 * (a.tpr + b.tpr);
  }
  return area;
}

/// Rate where FPR and FNR cross, interpolated linearly between the two
/// operating points that bracket the sign change of FPR - FNR.
inline double eer(const RocCurve& curve) {
  const auto& pts = curve.points;
  require(pts.size() >= 2, "eer: curve needs at least two points");
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double d0 = pts[i].fpr - pts[i].fnr;
    const double d1 = pts[i + 1].fpr - pts[i + 1].fnr;
    if (d0 == 0.0) return pts[i].fpr;
    if (d0 < 0.0 && d1 >= 0.0) {
      const double t = -d0 / (d1 - d0);
      return pts[i].fpr + t * (pts[i + 1].fpr - pts[i].fpr);
    }
  }
  return pts.back().fpr;
}

struct Summary {
  double auc = 0.0;
  double eer = 0.0;
  std::size_t frames = 0;
  std::size_t positives = 0;
};

template <typename Label>
Summary summarize(std::span<const double> scores, std::span<const Label> labels) {
  const RocCurve c = roc_curve(scores, labels);
  return {auc(c), eer(c), scores.size(), c.positives};
}

/// "threshold,fpr,tpr,fnr" rows.
inline std::string roc_csv(const RocCurve& curve) {
  std::ostringstream os;
  os.precision(17);
  os << "threshold,fpr,tpr,fnr\n";
  for (const auto& p : curve.points) os << p.threshold << ',' << p.fpr << ',' << p.tpr << ',' << p.fnr << '\n';
  return os.str();
}

}  // namespace coher_pvad::metrics
