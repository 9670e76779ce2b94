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
// coher-pvad: simulate -> features -> train -> eval -> infer -> roc.
//
// Every command writes into --out and finishes with manifest.json (config
// snapshot, seed, version, outputs).  The manifest is written last, so a
// directory without one is incomplete.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "coher_pvad/checkpoint.hpp"
#include "coher_pvad/config.hpp"
#include "coher_pvad/dataset.hpp"
#include "coher_pvad/metrics.hpp"
#include "coher_pvad/parallel.hpp"
#include "coher_pvad/wave.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace coher_pvad;

namespace {

struct Options {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<double> sir;
  std::optional<std::string> geometry;
  std::optional<std::size_t> mics;
  std::optional<std::size_t> scenes;
  std::optional<std::size_t> epochs;
  std::optional<double> threshold_db;
  bool enrollless = false;
  std::string data, features, ckpt, embedding, enroll, wav, scores, labels;
};

// Flags are layered as one more JSON document so they get the same checks.
json flag_overrides(const Options& o) {
  json j = json::object();
  if (o.seed) j["seed"] = *o.seed;
  if (o.sir) j["scene"]["sir"] = *o.sir;
  if (o.geometry) j["scene"]["geometry"] = *o.geometry;
  if (o.mics) j["scene"]["mics"] = *o.mics;
  if (o.scenes) j["scene"]["count"] = *o.scenes;
  if (o.threshold_db) j["scene"]["threshold_db"] = *o.threshold_db;
  if (o.epochs) j["train"]["epochs"] = *o.epochs;
  return j;
}

RunConfig load_config(const Options& o) {
  std::optional<fs::path> path;
  if (o.config) {
    require(fs::exists(*o.config), "config file not found: " + *o.config);
    path = *o.config;
  }
  return parse_config(path, flag_overrides(o));
}

void require_file(const std::string& p, const std::string& what) {
  require(!p.empty(), "missing --" + what);
  require(fs::exists(p), what + " not found: " + p);
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

/// Collects written outputs; the manifest goes last.
class OutDir {
 public:
  explicit OutDir(const std::string& dir) : root_(dir) {
    require(!dir.empty(), "missing --out");
    fs::create_directories(root_);
    fs::remove(root_ / "manifest.json");
  }

  fs::path path(const std::string& rel) const { return root_ / rel; }

  void text(const std::string& rel, const std::string& body) {
    io::write_text_atomic(path(rel), body);
    record(rel);
  }

  void record(const std::string& rel) {
    std::lock_guard<std::mutex> lock(mu_);
    outputs_.push_back(rel);
  }

  void manifest(const std::string& command, const RunConfig& cfg, json extra = json::object()) {
    std::sort(outputs_.begin(), outputs_.end());
    json j = {{"tool", "coher-pvad"}, {"version", kVersion}, {"command", command},
              {"seed", cfg.seed},     {"config", to_json(cfg)}, {"outputs", outputs_}};
    for (auto& [k, v] : extra.items()) j[k] = v;
    io::write_text_atomic(path("manifest.json"), dump(j));
  }

 private:
  fs::path root_;
  std::vector<std::string> outputs_;
  std::mutex mu_;
};

void log_line(const json& j) {
  std::cout << j.dump() << "\n";
  std::cout.flush();
}

// ---- dataset directories written by `simulate` ----

struct DatasetScene {
  std::string id;
  SceneSpec spec;
  fs::path dir;
  json sidecar;
};

std::vector<DatasetScene> read_dataset(const std::string& data) {
  require_file(data, "data");
  const fs::path root(data);
  require(fs::exists(root / "manifest.json"), "dataset has no manifest (incomplete simulate run?): " + data);
  const json m = read_json_file(root / "manifest.json");
  require(m.value("command", "") == "simulate", "not a simulate dataset: " + data);
  std::vector<DatasetScene> out;
  for (const auto& s : m.at("scenes")) {
    DatasetScene d;
    d.id = s.at("id").get<std::string>();
    d.dir = root / s.at("dir").get<std::string>();
    d.sidecar = read_json_file(d.dir / "scene.json");
    d.spec = scene_from_json(d.sidecar.at("spec"));
    out.push_back(std::move(d));
  }
  require(!out.empty(), "dataset is empty: " + data);
  return out;
}

std::vector<std::uint8_t> scene_labels(const DatasetScene& s) { return load_labels(s.dir / s.sidecar.at("labels").get<std::string>()); }

WaveBuffer scene_mixture(const DatasetScene& s) { return wav::read(s.dir / s.sidecar.at("mixture").get<std::string>()); }

SpeakerEmbedding scene_embedding(const DatasetScene& s) {
  return load_embedding(s.dir / s.sidecar.at("embedding").get<std::string>());
}

// Features from a `features` run when given, else computed from the WAVs.
std::vector<TrainingSample> load_samples(const std::vector<DatasetScene>& scenes, const RunConfig& cfg,
                                         const std::string& features_dir, bool enrollless) {
  std::vector<TrainingSample> out(scenes.size());
  if (!features_dir.empty()) {
    require(fs::exists(fs::path(features_dir) / "manifest.json"), "features dir has no manifest: " + features_dir);
  }
  parallel_for(scenes.size(), [&](std::size_t i) {
    TrainingSample s;
    if (!features_dir.empty()) {
      s.feature = load_feature(fs::path(features_dir) / "features" / (scenes[i].id + ".afea"));
      if (enrollless) s.feature.set_spatial_to_ones();
    } else {
      s.feature = extract_features(scene_mixture(scenes[i]), cfg.features, enrollless);
    }
    const auto labels = scene_labels(scenes[i]);
    require(labels.size() == s.feature.num_frames, "scene " + scenes[i].id + ": label count does not match features");
    s.labels = labels_to_float(labels);
    s.embedding = scene_embedding(scenes[i]);
    out[i] = std::move(s);
  });
  return out;
}

// ---- commands ----

int cmd_simulate(const Options& o) {
  RunConfig cfg = load_config(o);
  OutDir out(o.out);
  const SceneConstraints constraints = scene_constraints(cfg.scene);
  SimulationOptions sim;
  sim.grid = cfg.features.grid;
  sim.threshold_db = cfg.scene.threshold_db;
  sim.embedding_dim = cfg.model.embedding_dim;
  sim.enrollment_s = cfg.scene.enrollment_s;

  const std::size_t n = cfg.scene.count;
  std::vector<json> entries(n);
  std::vector<std::uint64_t> speakers(n);
  parallel_for(n, [&](std::size_t i) {
    std::ostringstream id;
    id << std::setw(5) << std::setfill('0') << i;
    const std::string dir = "scenes/" + id.str();
    const SceneSpec spec = sample_scene(resolve_geometry(cfg.scene, i), derive_seed(cfg.seed, i), constraints);
    SceneItem item = simulate_scene(spec, sim);
    wav::write_float(out.path(dir + "/mixture.wav"), item.rendered.mixture);
    save_labels(out.path(dir + "/labels.albl"), item.labels);
    const std::string spk = "speakers/" + speaker_name(spec.target_speaker) + ".dvec";
    json side = {{"mixture", "mixture.wav"},
                 {"labels", "labels.albl"},
                 {"embedding", "../../" + spk},
                 {"spec", to_json(spec)},
                 {"measured_sir_db", item.rendered.measured_sir_db},
                 {"measured_snr_db", item.rendered.measured_snr_db},
                 {"measured_target_to_non_target_db", item.rendered.measured_target_to_non_target_db},
                 {"frames", item.labels.size()}};
    io::write_text_atomic(out.path(dir + "/scene.json"), dump(side));
    for (const char* f : {"/mixture.wav", "/labels.albl", "/scene.json"}) out.record(dir + f);
    entries[i] = {{"id", id.str()}, {"dir", dir}, {"geometry", spec.geometry.name},
                  {"mics", spec.geometry.size()}, {"sir_db", spec.sir_db}};
    speakers[i] = spec.target_speaker;
  });
  std::set<std::uint64_t> unique(speakers.begin(), speakers.end());
  for (auto spk : unique) {
    const std::string rel = "speakers/" + speaker_name(spk) + ".dvec";
    save_embedding(out.path(rel), speaker_enrollment(spk, cfg.model.embedding_dim, cfg.scene.enrollment_s));
    out.record(rel);
  }
  out.manifest("simulate", cfg, {{"scenes", entries}});
  log_line({{"event", "simulate"}, {"scenes", n}, {"out", o.out}});
  return 0;
}

int cmd_features(const Options& o) {
  RunConfig cfg = load_config(o);
  const auto scenes = read_dataset(o.data);
  OutDir out(o.out);
  std::vector<json> entries(scenes.size());
  parallel_for(scenes.size(), [&](std::size_t i) {
    const InputFeature f = extract_features(scene_mixture(scenes[i]), cfg.features, o.enrollless);
    const std::string rel = "features/" + scenes[i].id + ".afea";
    save_feature(out.path(rel), f);
    out.record(rel);
    entries[i] = {{"id", scenes[i].id}, {"frames", f.num_frames}, {"bands", f.num_bands}};
  });
  const auto fb = build_erb_filterbank(cfg.features.grid.nfft, kSampleRate, cfg.features.num_bands);
  out.text("filterbank.json", dump(filterbank_to_json(fb)));
  out.manifest("features", cfg, {{"data", o.data}, {"enrollless", o.enrollless}, {"items", entries}});
  log_line({{"event", "features"}, {"items", scenes.size()}, {"out", o.out}});
  return 0;
}

int cmd_train(const Options& o) {
  RunConfig cfg = load_config(o);
  if (o.enrollless) cfg.train.p_enrollless = 1.0;
  const auto scenes = read_dataset(o.data);
  require(scenes.size() >= 2, "training needs at least two scenes (train + validation)");
  OutDir out(o.out);
  auto samples = load_samples(scenes, cfg, o.features, false);
  auto n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(samples.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, samples.size() - 1);
  const std::span<const TrainingSample> all(samples);
  const auto train_set = all.first(samples.size() - n_val);
  const auto val_set = all.last(n_val);

  PvadNet<float> model(cfg.model);
  model.initialize(derive_seed(cfg.seed, 0x1417));
  std::string log;
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult res = train(model, train_set, val_set, cfg.train, [&](const EpochRecord& r) {
    json j = to_json(r);
    j["elapsed_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log_line(j);
    j.erase("elapsed_s");  // keep the file reproducible
    log += j.dump() + "\n";
  });
  save_checkpoint(out.path("model.apvd"), res.best);
  out.record("model.apvd");
  out.text("train_log.jsonl", log);
  out.manifest("train", cfg,
               {{"data", o.data}, {"train_scenes", train_set.size()}, {"val_scenes", val_set.size()},
                {"best_epoch", res.best.epoch}, {"best_val_loss", std::isfinite(res.best.best_val_loss) ? json(res.best.best_val_loss) : json()},
                {"params", count_params(cfg.model)}});
  return 0;
}

json summary_json(const std::vector<double>& s, const std::vector<float>& y) {
  std::size_t pos = 0;
  for (float v : y) pos += v > 0.5f;
  if (pos == 0 || pos == y.size()) {
    // single-class subset: ROC undefined
    return {{"auc", nullptr}, {"eer", nullptr}, {"frames", y.size()}, {"positives", pos}};
  }
  const auto m = metrics::summarize<float>(s, y);
  return {{"auc", m.auc}, {"eer", m.eer}, {"frames", m.frames}, {"positives", m.positives}};
}

int cmd_eval(const Options& o) {
  RunConfig cfg = load_config(o);
  require_file(o.ckpt, "ckpt");
  const auto scenes = read_dataset(o.data);
  const ModelCheckpoint ck = load_checkpoint(o.ckpt);
  require(ck.config.bands == cfg.features.num_bands, "checkpoint band count differs from the feature config");
  OutDir out(o.out);
  const auto samples = load_samples(scenes, cfg, o.features, o.enrollless);

  std::vector<std::vector<double>> probs(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    PvadNet<float> model = model_from_checkpoint<float>(ck);
    probs[i] = model.predict(samples[i].feature, samples[i].embedding);
  });

  struct Pool {
    std::vector<double> s;
    std::vector<float> y;
    void add(const std::vector<double>& p, const std::vector<float>& l) {
      s.insert(s.end(), p.begin(), p.end());
      y.insert(y.end(), l.begin(), l.end());
    }
  };
  Pool overall;
  std::map<std::string, Pool> by_sir, by_geometry, by_mics;
  json utterances = json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& spec = scenes[i].spec;
    overall.add(probs[i], samples[i].labels);
    std::ostringstream sir;
    sir << spec.sir_db;
    by_sir[sir.str()].add(probs[i], samples[i].labels);
    by_geometry[spec.geometry.name].add(probs[i], samples[i].labels);
    by_mics[std::to_string(spec.geometry.size())].add(probs[i], samples[i].labels);
    json u = summary_json(probs[i], samples[i].labels);
    u["id"] = scenes[i].id;
    u["sir_db"] = spec.sir_db;
    u["geometry"] = spec.geometry.name;
    u["mics"] = spec.geometry.size();
    utterances.push_back(u);
  }
  const auto table = [](const std::map<std::string, Pool>& m, const char* key, bool numeric) {
    json arr = json::array();
    for (const auto& [k, p] : m) {
      json j = summary_json(p.s, p.y);
      j[key] = numeric ? json(std::stod(k)) : json(k);
      arr.push_back(j);
    }
    return arr;
  };
  json report = {{"overall", summary_json(overall.s, overall.y)},
                 {"by_sir", table(by_sir, "sir_db", true)},
                 {"by_geometry", table(by_geometry, "geometry", false)},
                 {"by_mics", table(by_mics, "mics", true)},
                 {"utterances", utterances},
                 {"enrollless", o.enrollless}};
  out.text("metrics.json", dump(report));
  if (!report["overall"]["auc"].is_null()) {
    out.text("roc.csv", metrics::roc_csv(metrics::roc_curve<float>(overall.s, overall.y)));
  }
  out.manifest("eval", cfg, {{"data", o.data}, {"ckpt", o.ckpt}});
  log_line({{"event", "eval"}, {"overall", report["overall"]}});
  return 0;
}

int cmd_infer(const Options& o) {
  RunConfig cfg = load_config(o);
  require_file(o.ckpt, "ckpt");
  require_file(o.wav, "wav");
  require(o.embedding.empty() != o.enroll.empty(), "give exactly one of --embedding or --enroll");
  if (!o.embedding.empty()) require_file(o.embedding, "embedding");
  if (!o.enroll.empty()) require_file(o.enroll, "enroll");
  const ModelCheckpoint ck = load_checkpoint(o.ckpt);
  OutDir out(o.out);
  const WaveBuffer wave = wav::read(o.wav);
  const SpeakerEmbedding emb =
      o.embedding.empty() ? enroll_speaker(wav::read(o.enroll), ck.config.embedding_dim) : load_embedding(o.embedding);
  const InputFeature feat = extract_features(wave, cfg.features, o.enrollless);
  PvadNet<float> model = model_from_checkpoint<float>(ck);
  const auto p = model.predict(feat, emb);

  std::ostringstream csv;
  csv.precision(9);
  csv << "frame,time_s,probability,active\n";
  double mean = 0.0;
  for (std::size_t l = 0; l < p.size(); ++l) {
    const double t = static_cast<double>(l * cfg.features.grid.hop) / wave.sample_rate;
    csv << l << ',' << t << ',' << p[l] << ',' << (p[l] >= cfg.decision_threshold ? 1 : 0) << '\n';
    mean += p[l] / static_cast<double>(p.size());
  }
  out.text("probabilities.csv", csv.str());
  out.manifest("infer", cfg,
               {{"wav", o.wav}, {"ckpt", o.ckpt}, {"frames", p.size()}, {"mean_probability", mean},
                {"channels", wave.num_channels()}, {"enrollless", o.enrollless || wave.num_channels() == 1}});
  log_line({{"event", "infer"}, {"frames", p.size()}, {"mean_probability", mean}});
  return 0;
}

// probability column of an infer CSV
std::vector<double> read_scores(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot open " + path);
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) header.push_back(c);
  }
  const auto col = std::find(header.begin(), header.end(), "probability");
  require(col != header.end(), path + ": no 'probability' column");
  const auto idx = static_cast<std::size_t>(col - header.begin());
  std::vector<double> out;
  for (std::size_t row = 2; std::getline(in, line); ++row) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    for (std::size_t c = 0; c <= idx; ++c) {
      require(static_cast<bool>(std::getline(ss, cell, ',')), path + ":" + std::to_string(row) + ": short row");
    }
    try {
      out.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw Error(path + ":" + std::to_string(row) + ": bad probability '" + cell + "'");
    }
  }
  return out;
}

int cmd_roc(const Options& o) {
  RunConfig cfg = load_config(o);
  require_file(o.scores, "scores");
  require_file(o.labels, "labels");
  const auto s = read_scores(o.scores);
  const auto y = load_labels(o.labels);
  require(s.size() == y.size(), "scores and labels differ in length (" + std::to_string(s.size()) + " vs " +
                                    std::to_string(y.size()) + ")");
  OutDir out(o.out);
  const auto curve = metrics::roc_curve<std::uint8_t>(s, y);
  out.text("roc.csv", metrics::roc_csv(curve));
  const json m = {{"auc", metrics::auc(curve)}, {"eer", metrics::eer(curve)}, {"frames", s.size()},
                  {"positives", curve.positives}};
  out.text("metrics.json", dump(m));
  out.manifest("roc", cfg, {{"scores", o.scores}, {"labels", o.labels}});
  log_line({{"event", "roc"}, {"metrics", m}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coher-pvad: array-agnostic personal voice activity detection"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Options o;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON config file");
    sub->add_option("--seed", o.seed, "random seed");
    sub->add_option("--out", o.out, "output directory")->required();
  };
  auto* simulate = app.add_subcommand("simulate", "render synthetic scenes with labels and speaker embeddings");
  common(simulate);
  simulate->add_option("--scenes", o.scenes, "number of scenes");
  simulate->add_option("--sir", o.sir, "fixed SIR in dB (default: draw from the grid)");
  simulate->add_option("--geometry", o.geometry, "preset name, 'training', or geometry JSON file");
  simulate->add_option("--mics", o.mics, "circular sub-array with this many microphones");
  simulate->add_option("--threshold-db", o.threshold_db, "label threshold below the peak frame energy");

  auto* features = app.add_subcommand("features", "write AFEA feature files for a dataset");
  common(features);
  features->add_option("--data", o.data, "simulate output directory")->required();
  features->add_flag("--enrollless", o.enrollless, "force the coherence channels to one");

  auto* trainc = app.add_subcommand("train", "train a model on a dataset");
  common(trainc);
  trainc->add_option("--data", o.data, "simulate output directory")->required();
  trainc->add_option("--features", o.features, "precomputed features directory");
  trainc->add_option("--epochs", o.epochs, "training epochs");
  trainc->add_flag("--enrollless", o.enrollless, "acoustic-only baseline (p_enrollless = 1)");

  auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset");
  common(eval);
  eval->add_option("--data", o.data, "simulate output directory")->required();
  eval->add_option("--ckpt", o.ckpt, "model checkpoint (APVD)")->required();
  eval->add_option("--features", o.features, "precomputed features directory");
  eval->add_flag("--enrollless", o.enrollless, "force the coherence channels to one");

  auto* infer = app.add_subcommand("infer", "per-frame target-speaker probabilities for one WAV");
  common(infer);
  infer->add_option("--wav", o.wav, "input recording")->required();
  infer->add_option("--ckpt", o.ckpt, "model checkpoint (APVD)")->required();
  infer->add_option("--embedding", o.embedding, "speaker embedding (DVEC)");
  infer->add_option("--enroll", o.enroll, "enrollment WAV to embed instead of --embedding");
  infer->add_flag("--enrollless", o.enrollless, "force the coherence channels to one");

  auto* roc = app.add_subcommand("roc", "ROC curve from a probability CSV and labels");
  common(roc);
  roc->add_option("--scores", o.scores, "probability CSV from infer")->required();
  roc->add_option("--labels", o.labels, "ALBL label file")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*simulate) return cmd_simulate(o);
    if (*features) return cmd_features(o);
    if (*trainc) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*infer) return cmd_infer(o);
    if (*roc) return cmd_roc(o);
  } catch (const std::exception& e) {
    std::cerr << "coher-pvad: error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
