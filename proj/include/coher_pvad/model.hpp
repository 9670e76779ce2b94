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
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "coher_pvad/autodiff.hpp"
#include "coher_pvad/embedding.hpp"
#include "coher_pvad/error.hpp"
#include "coher_pvad/features.hpp"
#include "coher_pvad/layers.hpp"
#include "coher_pvad/rng.hpp"
#include "json.hpp"

namespace coher_pvad {

/// Architecture of the speaker-conditioned convolutional-recurrent detector.
///
/// Four blocks of [depthwise (kf x kt) conv, stride (sf, 1) -> pointwise conv
/// -> batch norm -> ReLU] shrink the band axis by sf per block.  The flattened
/// per-frame output feeds a GRU whose states are modulated by the speaker
/// embedding (FiLM) and mapped to one logit per frame.
struct ModelConfig {
  std::vector<std::size_t> conv_channels{12, 24, 48, 96};
  std::array<std::size_t, 2> kernel{3, 2};  // (frequency, time)
  std::array<std::size_t, 2> stride{2, 1};  // (frequency, time)
  std::size_t in_channels = 3;
  std::size_t bands = 32;
  std::size_t gru_hidden = 96;
  std::size_t embedding_dim = kDefaultEmbeddingDim;

  std::size_t freq_padding() const { return kernel[0] / 2; }

  /// Band count after block `i` (i = 0 is the input).
  std::size_t freq_after(std::size_t blocks) const {
    std::size_t f = bands;
    for (std::size_t i = 0; i < blocks; ++i) f = (f + 2 * freq_padding() - kernel[0]) / stride[0] + 1;
    return f;
  }

  std::size_t flat_width() const { return conv_channels.back() * freq_after(conv_channels.size()); }

  void validate() const {
    require(conv_channels.size() == 4, "model config: conv_channels must list exactly 4 blocks");
    for (auto c : conv_channels) require(c > 0, "model config: channel counts must be positive");
    require(kernel[0] >= 1 && kernel[1] >= 1, "model config: kernel extents must be positive");
    require(stride[0] >= 1, "model config: frequency stride must be positive");
    require(stride[1] == 1, "model config: time stride must be 1 (one output per frame)");
    require(in_channels == kFeatureChannels, "model config: in_channels must be 3");
    require(gru_hidden > 0 && embedding_dim > 0, "model config: gru_hidden and embedding_dim must be positive");
    std::size_t divisor = 1;
    for (std::size_t i = 0; i < conv_channels.size(); ++i) divisor *= stride[0];
    require(bands > 0 && bands % divisor == 0,
            "model config: bands must be divisible by stride^4 (" + std::to_string(divisor) + ")");
    std::size_t f = bands;
    for (std::size_t i = 0; i < conv_channels.size(); ++i) {
      require(f + 2 * freq_padding() >= kernel[0], "model config: band axis collapses before the last block");
      f = (f + 2 * freq_padding() - kernel[0]) / stride[0] + 1;
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"conv_channels", c.conv_channels}, {"kernel", c.kernel},       {"stride", c.stride},
          {"in_channels", c.in_channels},     {"bands", c.bands},         {"gru_hidden", c.gru_hidden},
          {"embedding_dim", c.embedding_dim}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "conv_channels") c.conv_channels = value.get<std::vector<std::size_t>>();
    else if (key == "kernel") c.kernel = value.get<std::array<std::size_t, 2>>();
    else if (key == "stride") c.stride = value.get<std::array<std::size_t, 2>>();
    else if (key == "in_channels") c.in_channels = value.get<std::size_t>();
    else if (key == "bands") c.bands = value.get<std::size_t>();
    else if (key == "gru_hidden") c.gru_hidden = value.get<std::size_t>();
    else if (key == "embedding_dim") c.embedding_dim = value.get<std::size_t>();
    else throw Error("model config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

struct ParamSpec {
  std::string name;
  nn::Shape shape;
};

/// Every trainable tensor of the architecture, in canonical order.
inline std::vector<ParamSpec> layer_inventory(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> out;
  std::size_t cin = cfg.in_channels;
  for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    const std::size_t cout = cfg.conv_channels[i];
    out.push_back({p + "depthwise.weight", {cin, cfg.kernel[0], cfg.kernel[1]}});
    out.push_back({p + "depthwise.bias", {cin}});
    out.push_back({p + "pointwise.weight", {cout, cin}});
    out.push_back({p + "pointwise.bias", {cout}});
    out.push_back({p + "bn.weight", {cout}});
    out.push_back({p + "bn.bias", {cout}});
    cin = cout;
  }
  const std::size_t H = cfg.gru_hidden, D = cfg.embedding_dim;
  out.push_back({"gru.weight_ih", {3 * H, cfg.flat_width()}});
  out.push_back({"gru.weight_hh", {3 * H, H}});
  out.push_back({"gru.bias_ih", {3 * H}});
  out.push_back({"gru.bias_hh", {3 * H}});
  out.push_back({"film.scale.weight", {H, D}});
  out.push_back({"film.scale.bias", {H}});
  out.push_back({"film.shift.weight", {H, D}});
  out.push_back({"film.shift.bias", {H}});
  out.push_back({"classifier.weight", {1, H}});
  out.push_back({"classifier.bias", {1}});
  return out;
}

inline std::size_t count_params(const ModelConfig& cfg) {
  std::size_t total = 0;
  for (const auto& p : layer_inventory(cfg)) total += nn::shape_size(p.shape);
  return total;
}

enum class Mode { kTrain, kEval };

template <typename T>
class PvadNet {
 public:
  struct Param {
    std::string name;
    nn::Var<T> var;
  };

  explicit PvadNet(ModelConfig cfg = {}) : cfg_(std::move(cfg)) {
    for (const auto& spec : layer_inventory(cfg_)) {
      params_.push_back({spec.name, nn::make_var(nn::Tensor<T>(spec.shape), true)});
    }
    for (std::size_t c : cfg_.conv_channels) {
      bn_stats_.push_back({std::vector<T>(c, T(0)), std::vector<T>(c, T(1))});
    }
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  std::vector<nn::BatchNormStats<T>>& bn_stats() { return bn_stats_; }
  const std::vector<nn::BatchNormStats<T>>& bn_stats() const { return bn_stats_; }

  nn::Var<T>& param(const std::string& name) {
    for (auto& p : params_) {
      if (p.name == name) return p.var;
    }
    throw Error("unknown parameter '" + name + "'");
  }

  /// Uniform fan-in initialization.  FiLM starts near identity (scale bias 1).
  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& p : params_) {
      auto& t = p.var->value;
      const auto fill = [&](double bound) {
        for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
      };
      const auto& name = p.name;
      const auto ends_with = [&](const char* suffix) {
        const std::string s(suffix);
        return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
      };
      if (ends_with("bn.weight")) {
        std::fill(t.data.begin(), t.data.end(), T(1));
      } else if (ends_with("bn.bias") || ends_with("classifier.bias") || name == "film.shift.bias") {
        std::fill(t.data.begin(), t.data.end(), T(0));
      } else if (name == "film.scale.bias") {
        std::fill(t.data.begin(), t.data.end(), T(1));
      } else if (name.starts_with("film.")) {
        fill(0.5 / std::sqrt(static_cast<double>(cfg_.embedding_dim)));
      } else if (name.starts_with("gru.")) {
        fill(1.0 / std::sqrt(static_cast<double>(cfg_.gru_hidden)));
      } else if (name == "classifier.weight") {
        fill(1.0 / std::sqrt(static_cast<double>(cfg_.gru_hidden)));
      } else if (ends_with("depthwise.weight") || ends_with("depthwise.bias")) {
        fill(1.0 / std::sqrt(static_cast<double>(cfg_.kernel[0] * cfg_.kernel[1])));
      } else {
        // pointwise: fan-in is the input channel count
        const auto& w = param(name.substr(0, name.rfind('.')) + ".weight")->value;
        fill(1.0 / std::sqrt(static_cast<double>(w.dim(1))));
      }
    }
    for (auto& s : bn_stats_) {
      std::fill(s.mean.begin(), s.mean.end(), T(0));
      std::fill(s.var.begin(), s.var.end(), T(1));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.var->grad.assign(p.var->value.size(), T(0));
  }

  /// Per-frame logits (L).  `conditioned = false` bypasses the FiLM layer.
  nn::Var<T> forward_logits(nn::Tape<T>& tape, const InputFeature& feat, const SpeakerEmbedding& emb,
                            Mode mode, bool conditioned = true) {
    require(feat.num_bands == cfg_.bands,
            "feature has " + std::to_string(feat.num_bands) + " bands, model expects " + std::to_string(cfg_.bands));
    require(feat.num_frames >= 1, "feature has no frames");
    require(emb.dim() == cfg_.embedding_dim,
            "embedding dimension " + std::to_string(emb.dim()) + " does not match model (" +
                std::to_string(cfg_.embedding_dim) + ")");
    const std::size_t L = feat.num_frames;
    nn::Tensor<T> input({kFeatureChannels, L, feat.num_bands});
    for (std::size_t i = 0; i < input.size(); ++i) input.data[i] = static_cast<T>(feat.data[i]);
    auto x = nn::make_var(std::move(input));

    const bool training = mode == Mode::kTrain;
    for (std::size_t i = 0; i < cfg_.conv_channels.size(); ++i) {
      const auto& p = block_params(i);
      x = nn::depthwise_conv(tape, x, p[0], p[1], cfg_.stride[0], cfg_.freq_padding());
      x = nn::pointwise_conv(tape, x, p[2], p[3]);
      x = nn::batch_norm(tape, x, p[4], p[5], &bn_stats_[i], training);
      x = nn::relu(tape, x);
    }
    x = nn::flatten_frames(tape, x);
    x = nn::gru(tape, x, param_at(kGru + 0), param_at(kGru + 1), param_at(kGru + 2), param_at(kGru + 3));
    if (conditioned) {
      nn::Tensor<T> e({emb.dim()});
      for (std::size_t i = 0; i < emb.dim(); ++i) e.data[i] = static_cast<T>(emb.vector[i]);
      auto ev = nn::make_var(std::move(e));
      x = nn::film(tape, x, ev, param_at(kFilm + 0), param_at(kFilm + 1), param_at(kFilm + 2), param_at(kFilm + 3));
    }
    x = nn::dense(tape, x, param_at(kFilm + 4), param_at(kFilm + 5));
    x->value.dims = {L};
    return x;
  }

  /// Per-frame probabilities in evaluation mode, clamped like the loss.
  std::vector<double> predict(const InputFeature& feat, const SpeakerEmbedding& emb, bool conditioned = true) {
    nn::Tape<T> tape;
    auto logits = forward_logits(tape, feat, emb, Mode::kEval, conditioned);
    std::vector<double> probs(logits->value.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const double p = static_cast<double>(nn::detail::sigmoid(logits->value.data[i]));
      probs[i] = std::clamp(p, nn::kProbClamp, 1.0 - nn::kProbClamp);
    }
    return probs;
  }

 private:
  static constexpr std::size_t kPerBlock = 6;
  static constexpr std::size_t kGru = 4 * kPerBlock;
  static constexpr std::size_t kFilm = kGru + 4;

  std::array<nn::Var<T>, kPerBlock> block_params(std::size_t i) {
    std::array<nn::Var<T>, kPerBlock> out;
    for (std::size_t k = 0; k < kPerBlock; ++k) out[k] = params_[i * kPerBlock + k].var;
    return out;
  }
  nn::Var<T>& param_at(std::size_t i) { return params_[i].var; }

  ModelConfig cfg_;
  std::vector<Param> params_;
  std::vector<nn::BatchNormStats<T>> bn_stats_;
};

}  // namespace coher_pvad
