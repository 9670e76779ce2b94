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
// Acceptance run: one PASS/FAIL line per criterion.  Pass criterion numbers
// as arguments to run a subset; exit status is non-zero if any run fails.

#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "coher_pvad/checkpoint.hpp"
#include "coher_pvad/dataset.hpp"
#include "coher_pvad/erb.hpp"
#include "coher_pvad/features.hpp"
#include "coher_pvad/metrics.hpp"
#include "coher_pvad/model.hpp"
#include "coher_pvad/spatial.hpp"
#include "coher_pvad/trainer.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace coher_pvad;
using Clock = std::chrono::steady_clock;
using C = std::complex<double>;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << std::fixed << v;
  return os.str();
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

void progress(const std::string& s) {
  std::fprintf(stderr, "  .. %s\n", s.c_str());
  std::fflush(stderr);
}

WaveBuffer random_wave(std::size_t channels, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  WaveBuffer w(channels, n);
  for (auto& ch : w.channels)
    for (auto& s : ch) s = rng.normal();
  return w;
}

double max_abs_diff(const FrameMatrix& a, const FrameMatrix& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) d = std::max(d, std::abs(a.data[i] - b.data[i]));
  return d;
}

// ---- 1: feature math ----

Outcome feature_math() {
  Outcome o;
  const auto t0 = Clock::now();

  // bounds on adversarial random input, M = 2..7
  bool bounded = true;
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    auto w = random_wave(1 + seed, 4000, seed);
    w.channels[0][123] = 1e6;
    for (std::size_t i = 0; i < 600; ++i) w.channels.back()[i] = 0.0;
    const auto maps = compute_lstsc_maps(stft(w));
    for (const auto* m : {&maps.global, &maps.local})
      for (double v : m->data) bounded &= v >= -1.0 && v <= 1.0;
  }
  o.check(bounded, "coherence outside [-1, 1]");

  // self-coherence: constant r, state seeded orthogonal to it
  const std::vector<C> r{C(0.6, 0.8), C(0.0, 1.0), C(-1.0, 0.0)};
  std::vector<C> orth, neg;
  for (const C& z : r) {
    orth.push_back(z * C(0.0, 1.0));
    neg.push_back(-z);
  }
  LongTermRtf lt(r.size(), 0.01);
  lt.seed(orth);
  double prev = -2.0, at10 = 0.0;
  bool monotone = true;
  for (int l = 0; l < 200; ++l) {
    const double g = lt.push(r);
    monotone &= g >= prev - 1e-15;
    prev = g;
    if (l == 9) at10 = g;
  }
  o.check(monotone, "self-coherence not monotone");
  o.check(1.0 - at10 < 1e-6, "self-coherence at frame 10 is " + fmt(at10, 9));
  o.check(std::abs(lstsc_frame(r, r) - 1.0) < 1e-15, "gamma(r, r) != 1");
  o.check(std::abs(lstsc_frame(r, neg) + 1.0) < 1e-15, "gamma(r, -r) != -1");

  // gain invariance
  const auto w = random_wave(4, 6000, 21);
  auto scaled = w;
  const double gains[] = {3.0, 0.25, 17.0, 1e-3};
  for (std::size_t m = 0; m < 4; ++m)
    for (double& s : scaled.channels[m]) s *= gains[m];
  const auto a = compute_lstsc_maps(stft(w)), b = compute_lstsc_maps(stft(scaled));
  const double gain_dev = std::max(max_abs_diff(a.global, b.global), max_abs_diff(a.local, b.local));
  o.check(gain_dev < 1e-9, "gain invariance deviation " + sci(gain_dev));

  // non-reference permutation
  const auto w5 = random_wave(5, 6000, 33);
  WaveBuffer p5 = w5;
  const std::size_t perm[] = {0, 3, 1, 4, 2};
  for (std::size_t m = 0; m < 5; ++m) p5.channels[m] = w5.channels[perm[m]];
  const auto c5 = compute_lstsc_maps(stft(w5)), d5 = compute_lstsc_maps(stft(p5));
  const double perm_dev = std::max(max_abs_diff(c5.global, d5.global), max_abs_diff(c5.local, d5.local));
  o.check(perm_dev < 1e-12, "permutation deviation " + sci(perm_dev));

  // ERB normalization
  const auto fb = build_erb_filterbank();
  const auto pooled = erb_pool_coherence(FrameMatrix(7, fb.num_bins, 1.0), fb);
  double ones_dev = 0.0;
  for (double v : pooled.data) ones_dev = std::max(ones_dev, std::abs(v - 1.0));
  o.check(pooled.cols == 32 && ones_dev < 1e-14, "ERB all-ones deviation " + sci(ones_dev));

  // shape independent of M
  for (std::size_t M = 2; M <= 8; ++M) {
    const auto f = extract_features(random_wave(M, 8000, 40 + M), FeatureConfig{});
    o.check(f.num_frames == 48 && f.num_bands == 32 && f.data.size() == 3 * 48 * 32,
            "feature shape differs for M = " + std::to_string(M));
  }

  const double t = seconds_since(t0);
  o.check(t < 10.0, "runtime " + fmt(t, 1) + " s >= 10 s");
  o.note("gain dev " + sci(gain_dev) + ", perm dev " + sci(perm_dev) + ", " + fmt(t, 2) + " s");
  return o;
}

// ---- 2: gradients ----

Outcome gradient_oracle() {
  Outcome o;
  const auto t0 = Clock::now();
  double worst_all = 0.0;
  std::size_t layers = 0;
  for (const auto& c : gradcheck::layer_cases()) {
    double worst = 0.0;
    for (int k = 0; k < gradcheck::kInstances; ++k) worst = std::max(worst, c.instance(k).worst);
    o.check(worst < gradcheck::kGradTol, c.name + " worst rel err " + sci(worst));
    worst_all = std::max(worst_all, worst);
    ++layers;
  }
  const double t = seconds_since(t0);
  o.check(t < 120.0, "runtime " + fmt(t, 1) + " s >= 120 s");
  o.note(std::to_string(layers) + " layer types x " + std::to_string(gradcheck::kInstances) +
         " instances, worst rel err " + sci(worst_all) + ", " + fmt(t, 2) + " s");
  return o;
}

// ---- 3: parameter budget ----

Outcome parameter_budget() {
  Outcome o;
  const std::size_t n = count_params(ModelConfig{});
  PvadNet<float> net;
  std::size_t stored = 0;
  for (const auto& p : net.params()) stored += p.var->value.size();
  o.check(n >= 100000 && n <= 125000, "count outside [100k, 125k]");
  o.check(n == 115618, "count changed from 115618");
  o.check(stored == n, "instantiated tensors hold " + std::to_string(stored));
  o.note("count_params = " + std::to_string(n));
  return o;
}

// ---- 4: metric oracles ----

Outcome metric_oracles() {
  Outcome o;
  Rng rng(2024);
  double worst_auc = 0.0, worst_eer = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(499);
    const double levels = static_cast<double>(2 + rng.below(40));
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.bernoulli(0.4);
      s[i] = std::round((rng.normal() + 0.8 * y[i]) * levels / 4.0) / levels;  // ties on purpose
    }
    y[0] = 1;
    y[1] = 0;
    const auto curve = metrics::roc_curve<std::uint8_t>(s, y);
    worst_auc = std::max(worst_auc, std::abs(metrics::auc(curve) - oracle::rank_auc(s, y)));
    worst_eer = std::max(worst_eer, std::abs(metrics::eer(curve) - oracle::brute_force_eer(s, y)));
  }
  o.check(worst_auc < 1e-9, "AUC deviation " + sci(worst_auc));
  o.check(worst_eer < 1e-9, "EER deviation " + sci(worst_eer));
  o.note("100 instances, max |dAUC| " + sci(worst_auc) + ", max |dEER| " + sci(worst_eer));
  return o;
}

// ---- 5-7: desk-scale experiment ----

constexpr std::size_t kTrainScenes = 200;
constexpr std::size_t kValScenes = 30;
constexpr std::size_t kTestScenes = 50;
constexpr std::size_t kEpochs = 15;

SceneConstraints experiment_constraints() {
  SceneConstraints c;
  c.sir_grid = {-5.0, 0.0, 5.0};
  c.t60_s = 0.16;
  return c;
}

struct Split {
  std::vector<TrainingSample> samples;
  std::vector<double> sir;
};

Split build_split(const std::function<ArrayGeometry(std::size_t)>& geometry, std::uint64_t seed0, std::size_t n) {
  Split s;
  const auto c = experiment_constraints();
  for (std::size_t i = 0; i < n; ++i) {
    const SceneSpec spec = sample_scene(geometry(i), seed0 + i, c);
    s.samples.push_back(make_sample(simulate_scene(spec), FeatureConfig{}));
    s.sir.push_back(spec.sir_db);
  }
  return s;
}

Split ones_copy(const Split& s) {
  Split out = s;
  for (auto& x : out.samples) x.feature.set_spatial_to_ones();
  return out;
}

metrics::Summary score(PvadNet<float>& model, const Split& split, double max_sir = 1e9) {
  std::vector<double> scores;
  std::vector<float> labels;
  for (std::size_t i = 0; i < split.samples.size(); ++i) {
    if (split.sir[i] > max_sir) continue;
    const auto& s = split.samples[i];
    const auto p = model.predict(s.feature, s.embedding);
    scores.insert(scores.end(), p.begin(), p.end());
    labels.insert(labels.end(), s.labels.begin(), s.labels.end());
  }
  return metrics::summarize<float>(scores, labels);
}

struct Experiment {
  Split train, val, test;
  std::optional<ModelCheckpoint> spatial, baseline;
  double seconds = 0.0;
};

ModelCheckpoint train_model(const Experiment& e, double p_enrollless, const char* tag) {
  PvadNet<float> net;
  net.initialize(7);
  TrainConfig tc;
  tc.epochs = kEpochs;
  tc.p_enrollless = p_enrollless;
  tc.seed = 3;
  const auto res = train(net, std::span<const TrainingSample>(e.train.samples),
                         std::span<const TrainingSample>(e.val.samples), tc, [&](const EpochRecord& r) {
                           progress(std::string(tag) + " epoch " + std::to_string(r.epoch) + " train " +
                                    fmt(r.train_loss) + " val " + fmt(r.val_loss));
                         });
  progress(std::string(tag) + " best epoch " + std::to_string(res.best.epoch));
  return res.best;
}

Experiment& experiment() {
  static Experiment e;
  static bool ready = false;
  if (ready) return e;
  const auto t0 = Clock::now();
  const auto arrays = training_arrays();
  progress("simulating " + std::to_string(kTrainScenes + kValScenes + kTestScenes) + " scenes");
  e.train = build_split([&](std::size_t i) { return arrays[i % arrays.size()]; }, 1000, kTrainScenes);
  e.val = build_split([&](std::size_t i) { return arrays[i % arrays.size()]; }, 5000, kValScenes);
  e.test = build_split([&](std::size_t) { return geometry_preset("linear4-5cm"); }, 2000, kTestScenes);
  e.spatial = train_model(e, 0.1, "spatial");
  e.baseline = train_model(e, 1.0, "baseline");
  e.seconds = seconds_since(t0);
  ready = true;
  return e;
}

Outcome spatial_benefit() {
  Outcome o;
  Experiment& e = experiment();
  auto spatial = model_from_checkpoint<float>(*e.spatial);
  auto baseline = model_from_checkpoint<float>(*e.baseline);
  const Split test_ones = ones_copy(e.test);
  const auto s_low = score(spatial, e.test, 0.0), b_low = score(baseline, test_ones, 0.0);
  const auto s_all = score(spatial, e.test), b_all = score(baseline, test_ones);
  o.check(s_low.auc >= b_low.auc, "spatial AUC below baseline at SIR <= 0");
  o.check(s_low.eer <= b_low.eer, "spatial EER above baseline at SIR <= 0");
  o.check(e.seconds < 45 * 60, "runtime above 45 min");
  o.note("SIR<=0 AUC " + fmt(s_low.auc) + " vs " + fmt(b_low.auc) + ", EER " + fmt(s_low.eer) + " vs " +
         fmt(b_low.eer) + "; all SIR AUC " + fmt(s_all.auc) + " vs " + fmt(b_all.auc) + "; " + fmt(e.seconds / 60, 1) +
         " min");
  return o;
}

Outcome array_agnostic() {
  Outcome o;
  Experiment& e = experiment();
  auto model = model_from_checkpoint<float>(*e.spatial);
  std::map<std::size_t, double> auc;
  std::optional<std::pair<std::size_t, std::size_t>> shape;
  for (std::size_t M : {2, 3, 4, 7}) {
    progress("circular M = " + std::to_string(M));
    const Split s = build_split([&](std::size_t) { return circular_with_mics(M); }, 3000, kTestScenes);
    for (const auto& x : s.samples) {
      const std::pair<std::size_t, std::size_t> sh{x.feature.num_frames, x.feature.num_bands};
      if (!shape) shape = sh;
      o.check(sh == *shape && x.feature.data.size() == 3 * sh.first * sh.second,
              "feature shape differs at M = " + std::to_string(M));
    }
    auc[M] = score(model, s).auc;
    o.check(auc[M] >= 0.5, "AUC below 0.5 at M = " + std::to_string(M));
  }
  o.check(auc[7] >= auc[2] - 0.02, "AUC(7) < AUC(2) - 0.02");
  o.note("AUC M=2 " + fmt(auc[2]) + ", M=3 " + fmt(auc[3]) + ", M=4 " + fmt(auc[4]) + ", M=7 " + fmt(auc[7]));
  return o;
}

Outcome enrollment_less() {
  Outcome o;
  Experiment& e = experiment();
  auto model = model_from_checkpoint<float>(*e.spatial);

  // forced ones on a multichannel capture vs the single-channel pipeline
  bool bitwise = true;
  for (std::uint64_t seed : {2000u, 2001u, 2002u}) {
    const SceneItem item = simulate_scene(sample_scene(geometry_preset("linear4-5cm"), seed, experiment_constraints()));
    const WaveBuffer mono = WaveBuffer::mono(item.rendered.mixture.channels[0]);
    InputFeature forced = extract_features(item.rendered.mixture, FeatureConfig{});
    forced.set_spatial_to_ones();
    const InputFeature flag = extract_features(item.rendered.mixture, FeatureConfig{}, true);
    const InputFeature single = extract_features(mono, FeatureConfig{});
    bitwise &= forced.data == single.data && flag.data == single.data;
    const auto pa = model.predict(forced, item.embedding), pb = model.predict(single, item.embedding);
    bitwise &= pa == pb;
  }
  o.check(bitwise, "forced-ones output differs from the single-channel pipeline");

  progress("single-channel test scenes");
  const Split mono = build_split([](std::size_t) { return mono_array(); }, 4000, kTestScenes);
  const auto m = score(model, mono);
  o.check(m.auc > 0.5, "single-channel AUC " + fmt(m.auc));
  o.note("bitwise " + std::string(bitwise ? "yes" : "no") + ", single-channel AUC " + fmt(m.auc) + " EER " + fmt(m.eer));
  return o;
}

// ---- 8: determinism and round trips ----

Outcome determinism() {
  Outcome o;
  const auto spec = sample_scene(circular7(), 77, experiment_constraints());
  o.check(spec == sample_scene(circular7(), 77, experiment_constraints()), "scene sampling not reproducible");
  const SceneItem a = simulate_scene(spec), b = simulate_scene(spec);
  o.check(a.rendered.mixture.channels == b.rendered.mixture.channels && a.labels == b.labels &&
              a.embedding == b.embedding,
          "simulation not bitwise reproducible");

  std::vector<TrainingSample> data;
  for (std::uint64_t s = 0; s < 6; ++s) data.push_back(make_sample(simulate_scene(sample_scene(circular7(), 600 + s)), FeatureConfig{}));
  const std::span<const TrainingSample> all(data);
  const auto run = [&] {
    PvadNet<float> net;
    net.initialize(11);
    TrainConfig tc;
    tc.epochs = 2;
    tc.seed = 5;
    return train(net, all.first(4), all.last(2), tc).best;
  };
  const ModelCheckpoint c1 = run(), c2 = run();
  o.check(encode_checkpoint(c1) == encode_checkpoint(c2), "training not bitwise reproducible");

  const auto dir = std::filesystem::temp_directory_path();
  save_checkpoint(dir / "coher_pvad_accept.apvd", c1);
  const ModelCheckpoint c3 = load_checkpoint(dir / "coher_pvad_accept.apvd");
  o.check(c3 == c1 && encode_checkpoint(c3) == encode_checkpoint(c1), "checkpoint round trip not bitwise");
  auto m1 = model_from_checkpoint<float>(c1), m3 = model_from_checkpoint<float>(c3);
  o.check(m1.predict(data[0].feature, data[0].embedding) == m3.predict(data[0].feature, data[0].embedding),
          "reloaded model output differs");

  save_feature(dir / "coher_pvad_accept.afea", data[0].feature);
  const InputFeature f = load_feature(dir / "coher_pvad_accept.afea");
  o.check(f.num_frames == data[0].feature.num_frames && f.num_bands == data[0].feature.num_bands &&
              f.data == data[0].feature.data && encode_feature(f) == encode_feature(data[0].feature),
          "feature round trip not bitwise");
  std::filesystem::remove(dir / "coher_pvad_accept.apvd");
  std::filesystem::remove(dir / "coher_pvad_accept.afea");
  o.note("simulate, train, checkpoint and feature files reproduce bitwise");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria{
      {"feature-math suite", feature_math},        {"gradient oracle", gradient_oracle},
      {"parameter budget", parameter_budget},      {"metric oracles", metric_oracles},
      {"spatial benefit at low SIR", spatial_benefit}, {"array-agnostic execution", array_agnostic},
      {"enrollment-less path", enrollment_less},   {"determinism and round trips", determinism}};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& ex) {
      out.pass = false;
      out.detail = std::string("exception: ") + ex.what();
    }
    failures += !out.pass;
    std::printf("%s criterion %d (%s): %s\n", out.pass ? "PASS" : "FAIL", id, criteria[i].first, out.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
