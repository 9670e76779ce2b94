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

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "coher_pvad/error.hpp"
#include "coher_pvad/features.hpp"
#include "coher_pvad/model.hpp"
#include "coher_pvad/scene.hpp"
#include "coher_pvad/trainer.hpp"
#include "json.hpp"

// Run configuration for the command-line tool: documented defaults, then a
// JSON file, then flags.  Unknown keys and type mismatches are errors that
// name the offending key path.

namespace coher_pvad {

struct SceneSection {
  std::size_t count = 200;
  std::optional<double> sir_db;  // fixed SIR; unset draws from sir_grid
  std::vector<double> sir_grid = default_sir_grid();
  double t60_s = 0.16;
  double snr_db = 30.0;
  double drr_db = 6.0;
  double duration_s = 4.0;
  // preset name, "training" (cycle the three linear arrays) or a geometry JSON path
  std::string geometry = "training";
  std::optional<std::size_t> mics;  // circular subset with M mics; overrides geometry
  double threshold_db = 40.0;
  double enrollment_s = 3.0;
};

struct RunConfig {
  std::uint64_t seed = 1;
  FeatureConfig features;
  ModelConfig model;
  TrainConfig train;
  SceneSection scene;
  double val_fraction = 0.2;  // tail of the scene list held out for validation
  double decision_threshold = 0.5;
};

namespace config_detail {

inline std::string type_name(const nlohmann::json& v) {
  if (v.is_number_unsigned() || v.is_number_integer()) return "integer";
  if (v.is_number_float()) return "number";
  return v.type_name();
}

inline bool is_count(const nlohmann::json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

/// Walks one JSON object, consuming known keys; anything left is unknown.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error("config key '" + display(path_) + "': expected object, got " + type_name(j_));
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const nlohmann::json* take(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void number(const std::string& key, double& out) {
    if (auto* v = take(key)) {
      if (!v->is_number()) mismatch(key, "number", *v);
      out = v->get<double>();
    }
  }

  template <typename U>
  void unsigned_int(const std::string& key, U& out) {
    if (auto* v = take(key)) {
      if (!is_count(*v)) mismatch(key, "non-negative integer", *v);
      out = v->get<U>();
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (auto* v = take(key)) {
      if (!v->is_boolean()) mismatch(key, "boolean", *v);
      out = v->get<bool>();
    }
  }

  void string(const std::string& key, std::string& out) {
    if (auto* v = take(key)) {
      if (!v->is_string()) mismatch(key, "string", *v);
      out = v->get<std::string>();
    }
  }

  void optional_number(const std::string& key, std::optional<double>& out) {
    if (auto* v = take(key)) {
      if (v->is_null()) out.reset();
      else if (v->is_number()) out = v->get<double>();
      else mismatch(key, "number or null", *v);
    }
  }

  void optional_unsigned(const std::string& key, std::optional<std::size_t>& out) {
    if (auto* v = take(key)) {
      if (v->is_null()) out.reset();
      else if (is_count(*v)) out = v->get<std::size_t>();
      else mismatch(key, "non-negative integer or null", *v);
    }
  }

  template <typename Vec>
  void unsigned_array(const std::string& key, Vec& out, std::optional<std::size_t> fixed_len = {}) {
    if (auto* v = take(key)) {
      if (!v->is_array()) mismatch(key, "array", *v);
      if (fixed_len && v->size() != *fixed_len) {
        throw Error("config key '" + key_path(key) + "': expected " + std::to_string(*fixed_len) + " entries");
      }
      std::vector<std::size_t> tmp;
      for (std::size_t i = 0; i < v->size(); ++i) {
        const auto& e = (*v)[i];
        if (!is_count(e)) mismatch(key + "[" + std::to_string(i) + "]", "non-negative integer", e);
        tmp.push_back(e.get<std::size_t>());
      }
      if constexpr (requires { out.resize(0); }) {
        out.assign(tmp.begin(), tmp.end());
      } else {
        std::copy(tmp.begin(), tmp.end(), out.begin());
      }
    }
  }

  void number_array(const std::string& key, std::vector<double>& out) {
    if (auto* v = take(key)) {
      if (!v->is_array()) mismatch(key, "array", *v);
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_number()) mismatch(key + "[" + std::to_string(i) + "]", "number", (*v)[i]);
        out.push_back((*v)[i].get<double>());
      }
    }
  }

  std::optional<Section> child(const std::string& key) {
    if (auto* v = take(key)) return Section(*v, key_path(key));
    return std::nullopt;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw Error("unknown config key '" + key_path(key) + "'");
    }
  }

 private:
  static std::string display(const std::string& p) { return p.empty() ? "<root>" : p; }

  [[noreturn]] void mismatch(const std::string& key, const std::string& want, const nlohmann::json& got) const {
    throw Error("config key '" + key_path(key) + "': expected " + want + ", got " + type_name(got));
  }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace config_detail

/// Overlays `j` onto `cfg`.  Keys absent from `j` keep their current value.
inline void apply_config_json(RunConfig& cfg, const nlohmann::json& j) {
  config_detail::Section root(j, "");
  root.unsigned_int("seed", cfg.seed);
  root.number("val_fraction", cfg.val_fraction);
  root.number("decision_threshold", cfg.decision_threshold);
  if (auto f = root.child("features")) {
    f->number("lambda_global", cfg.features.spatial.lambda_global);
    f->number("lambda_local", cfg.features.spatial.lambda_local);
    f->number("rtf_smoothing", cfg.features.spatial.rtf_smoothing);
    f->unsigned_int("bands", cfg.features.num_bands);
    f->unsigned_int("frame_len", cfg.features.grid.frame_len);
    f->unsigned_int("hop", cfg.features.grid.hop);
    f->unsigned_int("nfft", cfg.features.grid.nfft);
    f->finish();
  }
  if (auto m = root.child("model")) {
    m->unsigned_array("conv_channels", cfg.model.conv_channels);
    m->unsigned_array("kernel", cfg.model.kernel, 2);
    m->unsigned_array("stride", cfg.model.stride, 2);
    m->unsigned_int("gru_hidden", cfg.model.gru_hidden);
    m->unsigned_int("embedding_dim", cfg.model.embedding_dim);
    m->finish();
  }
  if (auto t = root.child("train")) {
    t->number("lr", cfg.train.lr0);
    t->number("clip_norm", cfg.train.clip_norm);
    t->unsigned_int("plateau_epochs", cfg.train.plateau_epochs);
    t->number("lr_factor", cfg.train.lr_factor);
    t->number("p_enrollless", cfg.train.p_enrollless);
    t->unsigned_int("epochs", cfg.train.epochs);
    t->boolean("shuffle", cfg.train.shuffle);
    t->finish();
  }
  if (auto s = root.child("scene")) {
    s->unsigned_int("count", cfg.scene.count);
    s->optional_number("sir", cfg.scene.sir_db);
    s->number_array("sir_grid", cfg.scene.sir_grid);
    s->number("t60", cfg.scene.t60_s);
    s->number("snr_db", cfg.scene.snr_db);
    s->number("drr_db", cfg.scene.drr_db);
    s->number("duration_s", cfg.scene.duration_s);
    s->string("geometry", cfg.scene.geometry);
    s->optional_unsigned("mics", cfg.scene.mics);
    s->number("threshold_db", cfg.scene.threshold_db);
    s->number("enrollment_s", cfg.scene.enrollment_s);
    s->finish();
  }
  root.finish();
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json scene = {
      {"count", c.scene.count},       {"sir", nullptr},           {"sir_grid", c.scene.sir_grid},
      {"t60", c.scene.t60_s},         {"snr_db", c.scene.snr_db}, {"drr_db", c.scene.drr_db},
      {"duration_s", c.scene.duration_s}, {"geometry", c.scene.geometry}, {"mics", nullptr},
      {"threshold_db", c.scene.threshold_db}, {"enrollment_s", c.scene.enrollment_s}};
  if (c.scene.sir_db) scene["sir"] = *c.scene.sir_db;
  if (c.scene.mics) scene["mics"] = *c.scene.mics;
  return {
      {"seed", c.seed},
      {"val_fraction", c.val_fraction},
      {"decision_threshold", c.decision_threshold},
      {"features",
       {{"lambda_global", c.features.spatial.lambda_global},
        {"lambda_local", c.features.spatial.lambda_local},
        {"rtf_smoothing", c.features.spatial.rtf_smoothing},
        {"bands", c.features.num_bands},
        {"frame_len", c.features.grid.frame_len},
        {"hop", c.features.grid.hop},
        {"nfft", c.features.grid.nfft}}},
      {"model",
       {{"conv_channels", c.model.conv_channels},
        {"kernel", c.model.kernel},
        {"stride", c.model.stride},
        {"gru_hidden", c.model.gru_hidden},
        {"embedding_dim", c.model.embedding_dim}}},
      {"train",
       {{"lr", c.train.lr0},
        {"clip_norm", c.train.clip_norm},
        {"plateau_epochs", c.train.plateau_epochs},
        {"lr_factor", c.train.lr_factor},
        {"p_enrollless", c.train.p_enrollless},
        {"epochs", c.train.epochs},
        {"shuffle", c.train.shuffle}}},
      {"scene", scene},
  };
}

/// Cross-field checks run after every layer has been applied.
inline void validate(RunConfig& c) {
  c.model.bands = c.features.num_bands;
  c.train.seed = derive_seed(c.seed, 0x7a1);
  c.model.validate();
  c.train.validate();
  require(c.features.grid.frame_len >= 1 && c.features.grid.hop >= 1, "config: frame_len and hop must be positive");
  require(c.features.grid.nfft >= c.features.grid.frame_len, "config: nfft must be at least frame_len");
  require(c.val_fraction >= 0.0 && c.val_fraction < 1.0, "config: val_fraction must lie in [0, 1)");
  require(c.decision_threshold > 0.0 && c.decision_threshold < 1.0, "config: decision_threshold must lie in (0, 1)");
  require(c.scene.count >= 1, "config: scene.count must be at least 1");
  require(!c.scene.sir_grid.empty(), "config: scene.sir_grid is empty");
  require(c.scene.duration_s > 0.0, "config: scene.duration_s must be positive");
  require(c.scene.t60_s >= 0.0, "config: scene.t60 must be non-negative");
}

inline nlohmann::json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(origin + ": malformed JSON: " + e.what());
  }
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_json_text(ss.str(), path.string());
}

/// defaults <- file <- flags.  `flags` uses the same key layout as the file.
inline RunConfig parse_config(const std::optional<std::filesystem::path>& path, const nlohmann::json& flags = nlohmann::json::object()) {
  RunConfig cfg;
  if (path) apply_config_json(cfg, read_json_file(*path));
  apply_config_json(cfg, flags);
  validate(cfg);
  return cfg;
}

/// Resolves the scene.geometry / scene.mics settings for scene `index`.
inline ArrayGeometry resolve_geometry(const SceneSection& s, std::size_t index) {
  if (s.mics) return circular_with_mics(*s.mics);
  if (s.geometry == "training") {
    const auto arrays = training_arrays();
    return arrays[index % arrays.size()];
  }
  if (s.geometry.starts_with("{")) return geometry_from_json(parse_json_text(s.geometry, "scene.geometry"));
  if (s.geometry.ends_with(".json")) return geometry_from_json(read_json_file(s.geometry));
  return geometry_preset(s.geometry);
}

inline SceneConstraints scene_constraints(const SceneSection& s) {
  SceneConstraints c;
  c.sir_grid = s.sir_db ? std::vector<double>{*s.sir_db} : s.sir_grid;
  c.t60_s = s.t60_s;
  c.snr_db = s.snr_db;
  c.drr_db = s.drr_db;
  c.duration_s = s.duration_s;
  return c;
}

}  // namespace coher_pvad
