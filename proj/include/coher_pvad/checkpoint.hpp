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
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "coher_pvad/binary_io.hpp"
#include "coher_pvad/error.hpp"
#include "coher_pvad/model.hpp"
#include "coher_pvad/optim.hpp"
#include "json.hpp"

namespace coher_pvad {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;
inline constexpr const char* kAdamPrefix = "adam.";

struct NamedTensor {
  std::string name;
  nn::Shape dims;
  std::vector<float> data;

  bool operator==(const NamedTensor&) const = default;
};

/// Serializable model snapshot: config, parameters, batch-norm running
/// statistics and (optionally) optimizer moments under the "adam." prefix.
struct ModelCheckpoint {
  ModelConfig config;
  std::vector<NamedTensor> tensors;
  std::uint32_t epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();

  const NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }

  bool has_optimizer_state() const { return find(std::string(kAdamPrefix) + "step") != nullptr; }

  bool operator==(const ModelCheckpoint&) const = default;
};

inline std::string bn_mean_name(std::size_t i) { return "block" + std::to_string(i) + ".bn.running_mean"; }
inline std::string bn_var_name(std::size_t i) { return "block" + std::to_string(i) + ".bn.running_var"; }

template <typename T>
std::vector<float> to_float(const std::vector<T>& v) {
  return std::vector<float>(v.begin(), v.end());
}

template <typename T>
ModelCheckpoint make_checkpoint(const PvadNet<T>& model, const AdamState<T>* adam = nullptr,
                                std::uint32_t epoch = 0,
                                double best_val_loss = std::numeric_limits<double>::infinity()) {
  ModelCheckpoint ck;
  ck.config = model.config();
  ck.epoch = epoch;
  ck.best_val_loss = best_val_loss;
  for (const auto& p : model.params()) ck.tensors.push_back({p.name, p.var->value.dims, to_float(p.var->value.data)});
  for (std::size_t i = 0; i < model.bn_stats().size(); ++i) {
    const auto& s = model.bn_stats()[i];
    ck.tensors.push_back({bn_mean_name(i), {s.mean.size()}, to_float(s.mean)});
    ck.tensors.push_back({bn_var_name(i), {s.var.size()}, to_float(s.var)});
  }
  if (adam != nullptr && adam->step > 0) {
    ck.tensors.push_back({std::string(kAdamPrefix) + "step", {1}, {static_cast<float>(adam->step)}});
    for (std::size_t i = 0; i < model.params().size(); ++i) {
      const auto& p = model.params()[i];
      ck.tensors.push_back({kAdamPrefix + std::string("m.") + p.name, p.var->value.dims, to_float(adam->m[i])});
      ck.tensors.push_back({kAdamPrefix + std::string("v.") + p.name, p.var->value.dims, to_float(adam->v[i])});
    }
  }
  return ck;
}

/// Number of trainable values stored (excludes statistics and moments).
inline std::size_t checkpoint_param_count(const ModelCheckpoint& ck) {
  std::set<std::string> names;
  for (const auto& s : layer_inventory(ck.config)) names.insert(s.name);
  std::size_t total = 0;
  for (const auto& t : ck.tensors) {
    if (names.count(t.name)) total += t.data.size();
  }
  return total;
}

template <typename T>
PvadNet<T> model_from_checkpoint(const ModelCheckpoint& ck) {
  PvadNet<T> model(ck.config);
  std::map<std::string, int> seen;
  for (const auto& t : ck.tensors) ++seen[t.name];
  const auto fetch = [&](const std::string& name, const nn::Shape& dims) -> const NamedTensor& {
    const auto it = seen.find(name);
    require(it != seen.end(), "checkpoint is missing tensor '" + name + "'");
    require(it->second == 1, "checkpoint stores tensor '" + name + "' more than once");
    const NamedTensor* t = ck.find(name);
    require(t->dims == dims, "checkpoint tensor '" + name + "' has shape " + nn::shape_string(t->dims) +
                                 ", expected " + nn::shape_string(dims));
    return *t;
  };
  for (auto& p : model.params()) {
    const auto& t = fetch(p.name, p.var->value.dims);
    p.var->value.data.assign(t.data.begin(), t.data.end());
  }
  for (std::size_t i = 0; i < model.bn_stats().size(); ++i) {
    auto& s = model.bn_stats()[i];
    const auto& m = fetch(bn_mean_name(i), {s.mean.size()});
    const auto& v = fetch(bn_var_name(i), {s.var.size()});
    s.mean.assign(m.data.begin(), m.data.end());
    s.var.assign(v.data.begin(), v.data.end());
  }
  return model;
}

template <typename T>
std::optional<AdamState<T>> adam_from_checkpoint(const ModelCheckpoint& ck, const PvadNet<T>& model) {
  const NamedTensor* step = ck.find(std::string(kAdamPrefix) + "step");
  if (step == nullptr) return std::nullopt;
  AdamState<T> st;
  st.step = static_cast<std::uint64_t>(step->data.at(0));
  for (const auto& p : model.params()) {
    const NamedTensor* m = ck.find(kAdamPrefix + std::string("m.") + p.name);
    const NamedTensor* v = ck.find(kAdamPrefix + std::string("v.") + p.name);
    require(m && v, "checkpoint optimizer state is missing moments for '" + p.name + "'");
    st.m.emplace_back(m->data.begin(), m->data.end());
    st.v.emplace_back(v->data.begin(), v->data.end());
  }
  return st;
}

inline std::vector<char> encode_checkpoint(const ModelCheckpoint& ck) {
  nlohmann::json meta;
  meta["model"] = to_json(ck.config);
  meta["epoch"] = ck.epoch;
  // JSON has no infinity; an untrained snapshot stores null.
  if (std::isfinite(ck.best_val_loss)) meta["best_val_loss"] = ck.best_val_loss;
  else meta["best_val_loss"] = nullptr;
  io::ByteWriter w;
  w.magic("APVD");
  w.u32(kCheckpointFormatVersion);
  w.str(meta.dump());
  w.u32(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    require(t.data.size() == nn::shape_size(t.dims), "checkpoint tensor '" + t.name + "' size mismatch");
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) w.u32(static_cast<std::uint32_t>(d));
    w.f32s(t.data);
  }
  return w.bytes();
}

inline ModelCheckpoint decode_checkpoint(io::ByteReader& r) {
  r.expect_magic("APVD");
  const std::uint32_t version = r.u32();
  require(version == kCheckpointFormatVersion,
          r.origin() + ": unsupported checkpoint version " + std::to_string(version));
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw Error(r.origin() + ": malformed checkpoint config: " + e.what());
  }
  ModelCheckpoint ck;
  ck.config = model_config_from_json(meta.at("model"));
  ck.epoch = meta.value("epoch", 0u);
  const auto& best = meta.at("best_val_loss");
  ck.best_val_loss = best.is_null() ? std::numeric_limits<double>::infinity() : best.get<double>();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str();
    const std::uint32_t ndim = r.u32();
    for (std::uint32_t k = 0; k < ndim; ++k) t.dims.push_back(r.u32());
    t.data = r.f32s(nn::shape_size(t.dims));
    ck.tensors.push_back(std::move(t));
  }
  require(r.at_end(), r.origin() + ": trailing bytes after checkpoint");
  require(checkpoint_param_count(ck) == count_params(ck.config),
          r.origin() + ": checkpoint parameter count does not match its config");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ck) {
  io::write_file_atomic(path, encode_checkpoint(ck));
}

inline ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  auto r = io::open_reader(path);
  return decode_checkpoint(r);
}

}  // namespace coher_pvad
