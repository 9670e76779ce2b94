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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "coher_pvad/checkpoint.hpp"
#include "coher_pvad/optim.hpp"
#include "coher_pvad/rng.hpp"
#include "coher_pvad/trainer.hpp"

using namespace coher_pvad;

namespace {

nn::Var<double> scalar_param(double v, double g) {
  auto p = nn::make_var(nn::Tensor<double>({1}, std::vector<double>{v}), true);
  p->grad = {g};
  return p;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.conv_channels = {4, 4, 8, 8};
  c.bands = 16;
  c.gru_hidden = 8;
  c.embedding_dim = 4;
  return c;
}

// Frames are active when a low band is loud; coherence channels mark a
// "target direction" that agrees with the label most of the time.
std::vector<TrainingSample> toy_set(std::size_t n, std::size_t frames, std::size_t bands, std::size_t dim,
                                    std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TrainingSample> out;
  for (std::size_t k = 0; k < n; ++k) {
    TrainingSample s;
    s.feature = InputFeature(frames, bands);
    s.labels.resize(frames);
    bool on = rng.bernoulli(0.5);
    for (std::size_t l = 0; l < frames; ++l) {
      if (rng.bernoulli(0.15)) on = !on;
      s.labels[l] = on ? 1.0f : 0.0f;
      for (std::size_t b = 0; b < bands; ++b) {
        const double level = (on && b < bands / 2) ? 1.5 : -1.0;
        s.feature.at(0, l, b) = static_cast<float>(level + 0.3 * rng.normal());
        s.feature.at(1, l, b) = static_cast<float>((on ? 0.9 : 0.2) + 0.05 * rng.normal());
        s.feature.at(2, l, b) = static_cast<float>((on ? 0.8 : 0.1) + 0.05 * rng.normal());
      }
    }
    std::vector<double> e(dim, 0.0);
    e[k % dim] = 1.0;
    s.embedding = {l2_normalize(e, "zero"), "toy"};
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParameterUnchanged) {
  auto p = scalar_param(0.75, 0.0);
  std::vector<nn::Var<double>> ps{p};
  AdamState<double> st;
  adam_step<double>(ps, st, 1e-3);
  EXPECT_EQ(p->value.data[0], 0.75);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, FirstStepIsLearningRateTimesSign) {
  for (double g : {0.3, -2.0, 1e-3, 50.0}) {
    auto p = scalar_param(1.0, g);
    std::vector<nn::Var<double>> ps{p};
    AdamState<double> st;
    const double lr = 1e-3;
    adam_step<double>(ps, st, lr);
    // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
    const double expect = 1.0 - lr * g / (std::abs(g) + 1e-8);
    EXPECT_NEAR(p->value.data[0], expect, 1e-12);
    EXPECT_NEAR(p->value.data[0], 1.0 - lr * (g > 0 ? 1.0 : -1.0), 1e-6);
  }
}

TEST(Adam, MatchesClosedFormOverSeveralSteps) {
  auto p = scalar_param(0.0, 0.0);
  std::vector<nn::Var<double>> ps{p};
  AdamState<double> st;
  double m = 0, v = 0, x = 0;
  const double grads[] = {0.5, -0.2, 0.9, 0.1, -1.3};
  for (int t = 1; t <= 5; ++t) {
    const double g = grads[t - 1];
    p->grad = {g};
    adam_step<double>(ps, st, 0.01);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(p->value.data[0], x, 1e-15);
  }
}

TEST(Adam, ShapeMismatchRejected) {
  auto p = scalar_param(0.0, 1.0);
  std::vector<nn::Var<double>> ps{p};
  AdamState<double> st;
  st.m = {{0.0, 0.0}};
  st.v = {{0.0, 0.0}};
  EXPECT_THROW(adam_step<double>(ps, st, 0.1), Error);
}

TEST(Clip, Examples) {
  {
    auto a = scalar_param(0, 2.0);
    std::vector<nn::Var<double>> ps{a};
    EXPECT_DOUBLE_EQ(clip_grad_norm<double>(ps, 3.0), 2.0);
    EXPECT_EQ(a->grad[0], 2.0);
  }
  {
    auto a = scalar_param(0, 3.6), b = scalar_param(0, -4.8);
    std::vector<nn::Var<double>> ps{a, b};
    EXPECT_NEAR(clip_grad_norm<double>(ps, 3.0), 6.0, 1e-12);
    EXPECT_NEAR(a->grad[0], 1.8, 1e-12);
    EXPECT_NEAR(b->grad[0], -2.4, 1e-12);
    EXPECT_NEAR(std::hypot(a->grad[0], b->grad[0]), 3.0, 1e-12);
  }
  {
    auto a = scalar_param(0, 0.0);
    std::vector<nn::Var<double>> ps{a};
    EXPECT_EQ(clip_grad_norm<double>(ps, 3.0), 0.0);
    EXPECT_EQ(a->grad[0], 0.0);
  }
}

TEST(Clip, NonFiniteGradient) {
  auto a = scalar_param(0, std::nan(""));
  std::vector<nn::Var<double>> ps{a};
  try {
    clip_grad_norm<double>(ps, 3.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite gradient"), std::string::npos);
  }
  a->grad = {INFINITY};
  EXPECT_THROW(clip_grad_norm<double>(ps, 3.0), Error);
}

TEST(Schedule, Examples) {
  const std::vector<double> improving{1.0, 0.9, 0.8};
  EXPECT_EQ(lr_schedule_step(improving, 1e-3), 1e-3);
  const std::vector<double> flat{1.0, 1.0, 1.0, 1.0};
  EXPECT_EQ(lr_schedule_step(std::span(flat).first(3), 1e-3), 1e-3);
  EXPECT_EQ(lr_schedule_step(flat, 1e-3), 5e-4);
  // Improvement on the third epoch of a stagnant run resets the counter.
  const std::vector<double> reset{1.0, 1.1, 0.9, 1.0, 1.0};
  EXPECT_EQ(lr_schedule_step(reset, 1e-3), 1e-3);
  const std::vector<double> reset_then_flat{1.0, 1.1, 0.9, 1.0, 1.0, 0.95};
  EXPECT_EQ(lr_schedule_step(reset_then_flat, 1e-3), 5e-4);
  EXPECT_THROW(lr_schedule_step(std::vector<double>{}, 1e-3), Error);
}

TEST(Schedule, EqualLossIsNotAnImprovement) {
  PlateauScheduler s(1.0);
  s.step(0.5);
  s.step(0.5);
  EXPECT_EQ(s.stagnant_epochs(), 1u);
  s.step(0.4999);
  EXPECT_EQ(s.stagnant_epochs(), 0u);
}

TEST(Schedule, NonIncreasingAndHalvesExactly) {
  PlateauScheduler s(1e-3);
  Rng rng(4);
  double prev = s.lr();
  for (int e = 0; e < 200; ++e) {
    const double lr = s.step(rng.uniform());
    EXPECT_TRUE(lr == prev || lr == prev * 0.5);
    prev = lr;
  }
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.p_enrollless = 1.5;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.lr0 = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.clip_norm = -1.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Train, EmptyDatasetsRejected) {
  PvadNet<float> net(tiny_config());
  net.initialize(1);
  const auto data = toy_set(2, 10, 16, 4, 1);
  std::vector<TrainingSample> empty;
  EXPECT_THROW(train(net, std::span<const TrainingSample>(empty), std::span<const TrainingSample>(data), {}), Error);
  EXPECT_THROW(train(net, std::span<const TrainingSample>(data), std::span<const TrainingSample>(empty), {}), Error);
}

TEST(Train, OverfitsEightSamples) {
  const ModelConfig cfg;
  PvadNet<float> net(cfg);
  net.initialize(2);
  const auto data = toy_set(8, 60, cfg.bands, cfg.embedding_dim, 3);
  TrainConfig tc;
  tc.epochs = 200;
  tc.seed = 5;
  const auto res = train(net, std::span<const TrainingSample>(data), std::span<const TrainingSample>(data), tc);
  const double first = res.log.front().train_loss, last = res.log.back().train_loss;
  RecordProperty("initial_loss", std::to_string(first));
  RecordProperty("final_loss", std::to_string(last));
  EXPECT_LT(last, 0.1 * first) << "initial " << first << " final " << last;
  for (const auto& r : res.log) {
    EXPECT_LE(r.max_post_clip_norm, 3.0 + 1e-9);
    EXPECT_LE(res.best.best_val_loss, r.val_loss);
  }
  for (std::size_t i = 1; i < res.log.size(); ++i) EXPECT_LE(res.log[i].lr, res.log[i - 1].lr);
}

TEST(Train, ConvergesWithEnrollmentLessOnly) {
  PvadNet<float> net(tiny_config());
  net.initialize(3);
  const auto data = toy_set(8, 60, 16, 4, 4);
  TrainConfig tc;
  tc.epochs = 60;
  tc.p_enrollless = 1.0;
  tc.lr0 = 3e-3;
  const auto res = train(net, std::span<const TrainingSample>(data), std::span<const TrainingSample>(data), tc);
  for (const auto& r : res.log) EXPECT_EQ(r.enrollless_count, data.size());
  EXPECT_LT(res.log.back().train_loss, 0.5 * res.log.front().train_loss);
}

TEST(Train, DeterministicForSeed) {
  const auto data = toy_set(6, 30, 16, 4, 8);
  const auto run = [&](std::uint64_t seed) {
    PvadNet<float> net(tiny_config());
    net.initialize(7);
    TrainConfig tc;
    tc.epochs = 5;
    tc.seed = seed;
    tc.p_enrollless = 0.5;
    return train(net, std::span<const TrainingSample>(data), std::span<const TrainingSample>(data), tc);
  };
  const auto a = run(11), b = run(11), c = run(12);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].train_loss, b.log[i].train_loss);
    EXPECT_EQ(a.log[i].val_loss, b.log[i].val_loss);
    EXPECT_EQ(a.log[i].enrollless_count, b.log[i].enrollless_count);
  }
  EXPECT_EQ(encode_checkpoint(a.best), encode_checkpoint(b.best));
  bool differs = false;
  for (std::size_t i = 0; i < a.log.size(); ++i) differs = differs || a.log[i].train_loss != c.log[i].train_loss;
  EXPECT_TRUE(differs);
}

TEST(Train, EnrollmentLessFrequencyIsBinomial) {
  const ModelConfig cfg = tiny_config();
  const auto data = toy_set(50, 3, 16, 4, 9);
  for (double p : {0.1, 0.35}) {
    PvadNet<float> net(cfg);
    net.initialize(1);
    TrainConfig tc;
    tc.epochs = 24;
    tc.p_enrollless = p;
    tc.seed = 21;
    const auto res = train(net, std::span<const TrainingSample>(data), std::span<const TrainingSample>(data), tc);
    std::size_t hits = 0;
    for (const auto& r : res.log) hits += r.enrollless_count;
    const double n = 50.0 * 24.0;
    const double sd = std::sqrt(n * p * (1.0 - p));
    EXPECT_LE(std::abs(static_cast<double>(hits) - n * p), 3.0 * sd) << "p " << p << " hits " << hits;
  }
}

TEST(Train, EpochRecordJson) {
  EpochRecord r{3, 5e-4, 0.3, 0.4, 2, 1.0};
  const auto j = to_json(r);
  for (const char* k : {"epoch", "lr", "train_loss", "val_loss", "enrollless_count", "max_post_clip_norm"}) EXPECT_TRUE(j.contains(k)) << k;
}

TEST(Checkpoint, RoundTripIsBitwiseAndForwardIdentical) {
  PvadNet<float> net;
  net.initialize(3);
  const auto data = toy_set(2, 20, 32, 128, 1);
  AdamState<float> adam;
  train_step(net, adam, data[0].feature, data[0].embedding, data[0].labels, 1e-3, 3.0);
  const auto ck = make_checkpoint(net, &adam, 4, 0.25);
  const auto path = std::filesystem::temp_directory_path() / "coher_pvad_ckpt_test.apvd";
  save_checkpoint(path, ck);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back, ck);
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(ck));
  EXPECT_TRUE(back.has_optimizer_state());
  EXPECT_EQ(checkpoint_param_count(back), count_params(back.config));
  auto restored = model_from_checkpoint<float>(back);
  EXPECT_EQ(restored.predict(data[1].feature, data[1].embedding), net.predict(data[1].feature, data[1].embedding));
  const auto st = adam_from_checkpoint(back, restored);
  ASSERT_TRUE(st.has_value());
  EXPECT_EQ(st->step, 1u);
  EXPECT_EQ(st->m, adam.m);
  std::filesystem::remove(path);
}

TEST(Checkpoint, InfiniteBestLossStoredAsNull) {
  PvadNet<float> net(tiny_config());
  net.initialize(1);
  const auto ck = make_checkpoint(net);
  const auto bytes = encode_checkpoint(ck);
  io::ByteReader r(bytes, "mem");
  const auto back = decode_checkpoint(r);
  EXPECT_TRUE(std::isinf(back.best_val_loss));
  EXPECT_FALSE(back.has_optimizer_state());
}

TEST(Checkpoint, MissingOrDuplicateTensorRejected) {
  PvadNet<float> net(tiny_config());
  net.initialize(1);
  auto missing = make_checkpoint(net);
  missing.tensors.erase(missing.tensors.begin() + 2);
  EXPECT_THROW(model_from_checkpoint<float>(missing), Error);
  {
    const auto bytes = encode_checkpoint(missing);
    io::ByteReader r(bytes, "mem");
    EXPECT_THROW(decode_checkpoint(r), Error);
  }
  auto dup = make_checkpoint(net);
  dup.tensors.push_back(dup.tensors.front());
  EXPECT_THROW(model_from_checkpoint<float>(dup), Error);
  auto wrong = make_checkpoint(net);
  wrong.tensors.front().dims = {1, 2, 3};
  wrong.tensors.front().data.assign(6, 0.0f);
  EXPECT_THROW(model_from_checkpoint<float>(wrong), Error);
}
