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
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "coher_pvad/autodiff.hpp"
#include "coher_pvad/error.hpp"

namespace coher_pvad {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates, one buffer per parameter tensor.
template <typename T>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

/// One bias-corrected Adam update of every parameter from its gradient.
template <typename T>
void adam_step(std::span<const nn::Var<T>> params, AdamState<T>& state, double lr,
               const AdamHyper& hyper = {}) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p->value.size(), T(0));
      state.v.emplace_back(p->value.size(), T(0));
    }
  }
  require(state.m.size() == params.size() && state.v.size() == params.size(),
          "adam: state does not match parameter list");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  const T b1 = static_cast<T>(hyper.beta1), b2 = static_cast<T>(hyper.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    require(state.m[i].size() == p.value.size() && state.v[i].size() == p.value.size(),
            "adam: moment shape mismatch");
    if (p.grad.empty()) continue;
    require(p.grad.size() == p.value.size(), "adam: gradient shape mismatch");
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const T g = p.grad[k];
      m[k] = b1 * m[k] + (T(1) - b1) * g;
      v[k] = b2 * v[k] + (T(1) - b2) * g * g;
      const double mhat = static_cast<double>(m[k]) / c1;
      const double vhat = static_cast<double>(v[k]) / c2;
      p.value.data[k] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + hyper.eps));
    }
  }
}

/// Rescales all gradients jointly so their global L2 norm is at most
/// `max_norm`.  Returns the norm before clipping.
template <typename T>
double clip_grad_norm(std::span<const nn::Var<T>> params, double max_norm) {
  require(max_norm > 0.0, "clip norm must be positive");
  double sq = 0.0;
  for (const auto& p : params) {
    for (T g : p->grad) {
      require(std::isfinite(static_cast<double>(g)), "non-finite gradient");
      sq += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    // A few ulps of headroom so rounding in T cannot push the result past max_norm.
    const T scale = static_cast<T>(max_norm / norm * (1.0 - 4.0 * std::numeric_limits<T>::epsilon()));
    for (const auto& p : params) {
      for (T& g : p->grad) g *= scale;
    }
  }
  return norm;
}

/// Halves (by `factor`) the learning rate once the validation loss has
/// failed to strictly improve on its best for `patience` consecutive epochs.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, std::size_t patience = 3, double factor = 0.5)
      : lr_(lr), patience_(patience), factor_(factor) {
    require(lr > 0.0, "learning rate must be positive");
    require(patience >= 1, "plateau patience must be at least one epoch");
    require(factor > 0.0 && factor <= 1.0, "lr factor must lie in (0, 1]");
  }

  /// Records one epoch and returns the learning rate for the next.
  double step(double val_loss) {
    if (!seen_ || val_loss < best_) {
      best_ = val_loss;
      seen_ = true;
      stagnant_ = 0;
    } else if (++stagnant_ >= patience_) {
      lr_ *= factor_;
      stagnant_ = 0;
    }
    return lr_;
  }

  double lr() const { return lr_; }
  std::size_t stagnant_epochs() const { return stagnant_; }

 private:
  double lr_;
  std::size_t patience_;
  double factor_;
  double best_ = 0.0;
  bool seen_ = false;
  std::size_t stagnant_ = 0;
};

/// Stateless form: replays `history` and returns the rate after its last
/// epoch, given the rate that was in force before the last epoch.
inline double lr_schedule_step(std::span<const double> history, double current_lr,
                               std::size_t patience = 3, double factor = 0.5) {
  require(!history.empty(), "lr schedule needs at least one recorded epoch");
  PlateauScheduler replay(1.0, patience, factor);
  double before_last = 1.0;
  for (std::size_t i = 0; i < history.size(); ++i) {
    before_last = replay.lr();
    replay.step(history[i]);
  }
  return replay.lr() < before_last ? current_lr * factor : current_lr;
}

}  // namespace coher_pvad
