// Copyright 2026 The drgrade Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/**
 * @file
 * @brief The grading network: conv-relu-pool trunk, spatial attention
 * pooling, dense head and 5-way softmax.
 *
 * Layer stack for a config with blocks b_0..b_{k-1}:
 *
 *     x[N,3,S,S] in [0,1], shifted by -0.5
 *     -> per block: conv3x3(pad 1, stride s) + bias -> relu -> maxpool(p, p)
 *     -> proj: conv1x1 -> A channels + bias -> relu            F[N,A,h,w]
 *     -> score: conv1x1 -> 1 channel + bias -> reshape [N,hw]
 *     -> softmax over hw                                       alpha[N,hw]
 *     -> sum_hw alpha * F                                      [N,A]
 *     -> dense A->H + relu -> dense H->5                       logits
 *     -> softmax                                               probs
 */
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "drgrade/graph.hpp"
#include "drgrade/image.hpp"
#include "drgrade/preprocess.hpp"
#include "drgrade/rng.hpp"
#include "drgrade/tensor.hpp"

namespace drgrade {

/// Subtracted from every [0,1] input value before the first convolution.
inline constexpr double kInputCenter = 0.5;

struct ConvBlock {
  std::size_t out_channels = 16;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pool = 2;  ///< maxpool window and stride; 1 disables pooling

  bool operator==(const ConvBlock&) const = default;
};

struct ModelConfig {
  std::size_t input_size = kModelInputSize;
  std::vector<ConvBlock> conv_blocks = {{16}, {32}, {64}, {64}};
  std::size_t attention_channels = 64;
  std::size_t hidden_units = 64;
  std::size_t classes = GradeLabel::kCount;
  std::uint64_t seed = 0;

  bool operator==(const ModelConfig&) const = default;

  /// Spatial extent after each block; throws std::invalid_argument when the
  /// config is unusable.
  std::vector<std::size_t> extents() const {
    if (classes != static_cast<std::size_t>(GradeLabel::kCount)) {
      throw std::invalid_argument("model config: classes must be 5, got " +
                                  std::to_string(classes));
    }
    if (conv_blocks.empty()) throw std::invalid_argument("model config: no conv blocks");
    if (attention_channels == 0 || hidden_units == 0) {
      throw std::invalid_argument("model config: attention_channels and hidden_units must be positive");
    }
    std::vector<std::size_t> out;
    long size = static_cast<long>(input_size);
    for (std::size_t i = 0; i < conv_blocks.size(); ++i) {
      const auto& b = conv_blocks[i];
      if (b.out_channels == 0 || b.kernel == 0 || b.kernel % 2 == 0 ||
          b.stride == 0 || b.pool == 0) {
        throw std::invalid_argument("model config: block " + std::to_string(i) +
                                    " needs positive channels/stride/pool and an odd kernel");
      }
      const long k = static_cast<long>(b.kernel);
      size = (size + 2 * (k / 2) - k) / static_cast<long>(b.stride) + 1;
      size /= static_cast<long>(b.pool);
      if (size <= 0) {
        throw std::invalid_argument("model config: block " + std::to_string(i) +
                                    " produces a non-positive spatial extent");
      }
      out.push_back(static_cast<std::size_t>(size));
    }
    if (out.back() < 4) {
      throw std::invalid_argument("model config: spatial extent before attention is " +
                                  std::to_string(out.back()) + ", need at least 4");
    }
    return out;
  }

  void validate() const { (void)extents(); }
};

inline void to_json(nlohmann::json& j, const ConvBlock& b) {
  j = {{"out_channels", b.out_channels}, {"kernel", b.kernel},
       {"stride", b.stride}, {"pool", b.pool}};
}

inline void from_json(const nlohmann::json& j, ConvBlock& b) {
  j.at("out_channels").get_to(b.out_channels);
  b.kernel = j.value("kernel", std::size_t{3});
  b.stride = j.value("stride", std::size_t{1});
  b.pool = j.value("pool", std::size_t{2});
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"input_size", c.input_size},
       {"conv_blocks", c.conv_blocks},
       {"attention_channels", c.attention_channels},
       {"hidden_units", c.hidden_units},
       {"classes", c.classes},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.input_size = j.value("input_size", d.input_size);
  c.conv_blocks = j.contains("conv_blocks")
                      ? j.at("conv_blocks").get<std::vector<ConvBlock>>()
                      : d.conv_blocks;
  c.attention_channels = j.value("attention_channels", d.attention_channels);
  c.hidden_units = j.value("hidden_units", d.hidden_units);
  c.classes = j.value("classes", d.classes);
  c.seed = j.value("seed", d.seed);
}

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
  std::size_t fan_in = 0;  ///< 0 for biases

  bool operator==(const NamedTensor&) const = default;
};

/// Graph handles produced by one forward pass.
struct ForwardVars {
  Var logits;     ///< N×5
  Var probs;      ///< N×5
  Var attention;  ///< N×(h·w), rows sum to 1
};

/// Spatial soft-attention pooling of `features` (N×C×H×W) with 1×1 score
/// kernel `score_w` (1×C×1×1) and bias `score_b` ({1}).
template <typename T>
std::pair<Var, Var> attention_pool(Graph<T>& g, Var features, Var score_w,
                                   Var score_b) {
  const auto& f = g.value(features);
  const std::size_t n = f.dim(0), hw = f.dim(2) * f.dim(3);
  Var scores = g.add_channel_bias(g.conv2d(features, score_w, 1, 0), score_b);
  Var alpha = g.softmax(g.reshape(scores, {n, hw}));
  return {g.weighted_spatial_sum(features, alpha), alpha};
}

/// Parameter tensors plus the config that shapes them.
template <typename T>
class Network {
 public:
  using value_type = T;

  Network() = default;

  /// He-uniform weights U(±sqrt(6/fan_in)) drawn from config.seed; zero biases.
  explicit Network(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    std::size_t in_c = 3;
    for (std::size_t i = 0; i < config_.conv_blocks.size(); ++i) {
      const auto& b = config_.conv_blocks[i];
      const std::string prefix = "block" + std::to_string(i) + ".conv";
      add(prefix + ".weight", {b.out_channels, in_c, b.kernel, b.kernel},
          in_c * b.kernel * b.kernel);
      add(prefix + ".bias", {b.out_channels}, 0);
      in_c = b.out_channels;
    }
    const std::size_t a = config_.attention_channels, h = config_.hidden_units;
    add("attention.proj.weight", {a, in_c, 1, 1}, in_c);
    add("attention.proj.bias", {a}, 0);
    add("attention.score.weight", {1, a, 1, 1}, a);
    add("attention.score.bias", {1}, 0);
    add("head.hidden.weight", {a, h}, a);
    add("head.hidden.bias", {h}, 0);
    add("head.out.weight", {h, config_.classes}, h);
    add("head.out.bias", {config_.classes}, 0);

    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (p.fan_in == 0) continue;
      Rng rng(derive_seed(config_.seed, i));
      const double bound = std::sqrt(6.0 / static_cast<double>(p.fan_in));
      for (auto& v : p.value.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    }
  }

  const ModelConfig& config() const { return config_; }
  const std::vector<NamedTensor<T>>& parameters() const { return params_; }
  std::vector<NamedTensor<T>>& parameters() { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  Tensor<T>& parameter(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p.value;
    throw std::out_of_range("no parameter named '" + name + "'");
  }
  const Tensor<T>& parameter(const std::string& name) const {
    return const_cast<Network*>(this)->parameter(name);
  }

  template <typename U>
  Network<U> cast() const {
    Network<U> out;
    out.config_ = config_;
    for (const auto& p : params_)
      out.params_.push_back({p.name, p.value.template cast<U>(), p.fan_in});
    return out;
  }

  /// Binds every parameter as a borrowed leaf of `g`.
  std::vector<Var> bind(Graph<T>& g, bool requires_grad) const {
    std::vector<Var> vars;
    vars.reserve(params_.size());
    for (const auto& p : params_) vars.push_back(g.parameter(p.value, requires_grad));
    return vars;
  }

  /// Forward pass of `input` (N×3×S×S) with parameters supplied as graph
  /// handles in parameters() order.
  template <typename G>
  ForwardVars forward(G& g, const std::vector<Var>& p, Var input) const {
    if (p.size() != params_.size()) {
      throw std::invalid_argument("forward: expected " + std::to_string(params_.size()) +
                                  " parameter handles, got " + std::to_string(p.size()));
    }
    const auto& x = g.value(input);
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != config_.input_size ||
        x.dim(3) != config_.input_size) {
      throw ShapeError("forward: expected N x 3 x " + std::to_string(config_.input_size) +
                       " x " + std::to_string(config_.input_size) + " input, got " +
                       shape_str(x.shape()));
    }
    using S = typename G::value_type;
    Var h = g.add_channel_bias(input, g.constant(Tensor<S>({3}, static_cast<S>(-kInputCenter))));
    std::size_t i = 0;
    for (const auto& b : config_.conv_blocks) {
      h = g.add_channel_bias(g.conv2d(h, p[i], b.stride, b.kernel / 2), p[i + 1]);
      h = g.relu(h);
      if (b.pool > 1) h = g.maxpool(h, b.pool, b.pool);
      i += 2;
    }
    Var features = g.relu(g.add_channel_bias(g.conv2d(h, p[i], 1, 0), p[i + 1]));
    auto [pooled, alpha] = attention_pool(g, features, p[i + 2], p[i + 3]);
    Var hidden = g.relu(g.dense(pooled, p[i + 4], p[i + 5]));
    Var logits = g.dense(hidden, p[i + 6], p[i + 7]);
    return {logits, g.softmax(logits), alpha};
  }

  /// Convenience forward with borrowed, non-trainable parameters.
  ForwardVars forward(Graph<T>& g, Var input) const {
    return forward(g, bind(g, false), input);
  }

 private:
  template <typename>
  friend class Network;

  void add(std::string name, Shape shape, std::size_t fan_in) {
    params_.push_back({std::move(name), Tensor<T>(std::move(shape)), fan_in});
  }

  ModelConfig config_;
  std::vector<NamedTensor<T>> params_;
};

using Model = Network<float>;

struct PredictionResult {
  std::array<double, GradeLabel::kCount> probabilities{};
  GradeLabel grade;
  std::string model_id;
};

/// Index of the largest value; ties resolve to the lowest index.
template <typename Range>
std::size_t argmax_lowest(const Range& values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < std::size(values); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

/// Prediction for an already preprocessed 3×S×S tensor.
inline PredictionResult predict_tensor(const Model& model, const Tensor<float>& chw,
                                       std::string model_id = {}) {
  Graph<float> g;
  Var x = g.constant(chw.reshaped({1, chw.dim(0), chw.dim(1), chw.dim(2)}));
  const auto& probs = g.value(model.forward(g, x).probs);
  PredictionResult r;
  for (std::size_t c = 0; c < r.probabilities.size(); ++c) r.probabilities[c] = probs[c];
  r.grade = GradeLabel(static_cast<int>(argmax_lowest(r.probabilities)));
  r.model_id = std::move(model_id);
  return r;
}

inline PredictionResult predict(const Model& model, const FundusImage& img,
                                std::string model_id = {}) {
  return predict_tensor(model, preprocess(img, static_cast<int>(model.config().input_size)),
                        std::move(model_id));
}

}  // namespace drgrade
