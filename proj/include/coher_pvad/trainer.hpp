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
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "coher_pvad/checkpoint.hpp"
#include "coher_pvad/embedding.hpp"
#include "coher_pvad/error.hpp"
#include "coher_pvad/features.hpp"
#include "coher_pvad/layers.hpp"
#include "coher_pvad/model.hpp"
#include "coher_pvad/optim.hpp"
#include "coher_pvad/rng.hpp"
#include "json.hpp"

namespace coher_pvad {

struct TrainConfig {
  double lr0 = 0.001;
  double clip_norm = 3.0;
  std::size_t plateau_epochs = 3;
  double lr_factor = 0.5;
  double p_enrollless = 0.1;
  std::size_t epochs = 20;
  std::uint64_t seed = 1;
  bool shuffle = true;

  void validate() const {
    require(lr0 > 0.0, "train config: lr0 must be positive");
    require(clip_norm > 0.0, "train config: clip_norm must be positive");
    require(p_enrollless >= 0.0 && p_enrollless <= 1.0, "train config: p_enrollless must lie in [0, 1]");
    require(epochs >= 1, "train config: epochs must be at least 1");
    require(plateau_epochs >= 1, "train config: plateau_epochs must be at least 1");
    require(lr_factor > 0.0 && lr_factor <= 1.0, "train config: lr_factor must lie in (0, 1]");
  }
};

/// One utterance: input features, the target speaker's embedding and the
/// per-frame target activity labels.
struct TrainingSample {
  InputFeature feature;
  SpeakerEmbedding embedding;
  std::vector<float> labels;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::size_t enrollless_count = 0;
  double max_post_clip_norm = 0.0;
};

inline nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"lr", r.lr},
          {"train_loss", r.train_loss},
          {"val_loss", r.val_loss},
          {"enrollless_count", r.enrollless_count},
          {"max_post_clip_norm", r.max_post_clip_norm}};
}

struct TrainResult {
  ModelCheckpoint best;
  std::vector<EpochRecord> log;
};

/// Mean frame BCE over a dataset in evaluation mode.
template <typename T>
double evaluate_loss(PvadNet<T>& model, std::span<const TrainingSample> data, bool enrollless = false) {
  require(!data.empty(), "cannot evaluate an empty dataset");
  double total = 0.0;
  for (const auto& s : data) {
    nn::Tape<T> tape;
    InputFeature feat = s.feature;
    if (enrollless) feat.set_spatial_to_ones();
    auto logits = model.forward_logits(tape, feat, s.embedding, Mode::kEval);
    total += static_cast<double>(nn::bce_with_logits(tape, logits, s.labels)->value.data[0]);
  }
  return total / static_cast<double>(data.size());
}

/// Runs one optimization step on one utterance; returns (loss, post-clip norm).
template <typename T>
std::pair<double, double> train_step(PvadNet<T>& model, AdamState<T>& adam, const InputFeature& feat,
                                     const SpeakerEmbedding& emb, std::span<const float> labels, double lr,
                                     double clip_norm) {
  model.zero_grad();
  nn::Tape<T> tape;
  auto logits = model.forward_logits(tape, feat, emb, Mode::kTrain);
  auto loss = nn::bce_with_logits(tape, logits, labels);
  tape.backward(loss);
  std::vector<nn::Var<T>> vars;
  vars.reserve(model.params().size());
  for (auto& p : model.params()) vars.push_back(p.var);
  clip_grad_norm<T>(vars, clip_norm);
  double sq = 0.0;
  for (const auto& v : vars)
    for (T g : v->grad) sq += static_cast<double>(g) * static_cast<double>(g);
  adam_step<T>(vars, adam, lr);
  const double post = std::sqrt(sq);
  return {static_cast<double>(loss->value.data[0]), post};
}

/// Adam with global-norm clipping and plateau halving.  Each sample is, with
/// probability p_enrollless, presented with its coherence channels set to
/// one.  Validation uses the features as given, except that a model trained
/// purely enrollment-less (p = 1) is also validated enrollment-less.
template <typename T>
TrainResult train(PvadNet<T>& model, std::span<const TrainingSample> train_set,
                  std::span<const TrainingSample> val_set, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  require(!train_set.empty(), "training set is empty");
  require(!val_set.empty(), "validation set is empty");
  Rng order_rng(derive_seed(cfg.seed, 1));
  Rng enroll_rng(derive_seed(cfg.seed, 2));
  const bool validate_enrollless = cfg.p_enrollless >= 1.0;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  AdamState<T> adam;
  PlateauScheduler schedule(cfg.lr0, cfg.plateau_epochs, cfg.lr_factor);
  TrainResult result;
  double best = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.shuffle) order_rng.shuffle(order);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = schedule.lr();
    double loss_sum = 0.0;
    for (std::size_t idx : order) {
      const auto& s = train_set[idx];
      const bool drop_spatial = enroll_rng.bernoulli(cfg.p_enrollless);
      std::pair<double, double> step;
      if (drop_spatial) {
        ++rec.enrollless_count;
        InputFeature feat = s.feature;
        feat.set_spatial_to_ones();
        step = train_step(model, adam, feat, s.embedding, s.labels, rec.lr, cfg.clip_norm);
      } else {
        step = train_step(model, adam, s.feature, s.embedding, s.labels, rec.lr, cfg.clip_norm);
      }
      loss_sum += step.first;
      rec.max_post_clip_norm = std::max(rec.max_post_clip_norm, step.second);
    }
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.val_loss = evaluate_loss(model, val_set, validate_enrollless);
    schedule.step(rec.val_loss);
    if (rec.val_loss < best) {
      best = rec.val_loss;
      result.best = make_checkpoint(model, &adam, static_cast<std::uint32_t>(epoch), best);
    }
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  // Every validation loss was NaN: keep the final weights rather than nothing.
  if (result.best.tensors.empty()) {
    result.best = make_checkpoint(model, &adam, static_cast<std::uint32_t>(cfg.epochs), best);
  }
  return result;
}

}  // namespace coher_pvad
