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

// Finite-difference cases for every differentiable operator and for the
// full model loss, shared by the unit tests and the acceptance run.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "drgrade/model.hpp"
#include "gradcheck.hpp"

namespace drgrade::testing {

inline constexpr int kGradSeeds = 20;
inline constexpr double kOperatorTolerance = 1e-4;
inline constexpr double kEndToEndTolerance = 1e-3;

// sum(y ⊙ R) for a fixed random R: a scalar that exercises every output
// coordinate with a distinct weight.
template <typename G>
Var project(G& g, Var y, const Tensor<float>& r) {
  using T = typename std::decay_t<G>::value_type;
  return g.sum(g.mul(y, g.constant(r.template cast<T>())));
}

inline Tensor<float> one_hot(std::vector<std::size_t> labels, std::size_t classes) {
  Tensor<float> t({labels.size(), classes});
  for (std::size_t n = 0; n < labels.size(); ++n) t[n * classes + labels[n]] = 1;
  return t;
}

struct OperatorCase {
  std::string name;
  std::function<GradCheckResult(int seed)> run;
};

inline std::vector<OperatorCase> operator_cases() {
  std::vector<OperatorCase> cases;
  cases.push_back({"conv2d", [](int seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    auto x = random_tensor({1, 2, 8, 8}, rng);
    auto k = random_tensor({3, 2, 3, 3}, rng);
    auto r = random_tensor({1, 3, 4, 4}, rng);
    return gradcheck([&](auto& g, const std::vector<Var>& v) {
      return project(g, g.conv2d(v[0], v[1], 2, 1), r);
    }, {x, k});
  }});
  cases.push_back({"dense", [](int seed) {
    Rng rng(static_cast<std::uint64_t>(100 + seed));
    auto x = random_tensor({3, 5}, rng);
    auto w = random_tensor({5, 2}, rng);
    auto b = random_tensor({2}, rng);
    auto r = random_tensor({3, 2}, rng);
    return gradcheck([&](auto& g, const std::vector<Var>& v) {
      return project(g, g.dense(v[0], v[1], v[2]), r);
    }, {x, w, b});
  }});
  cases.push_back({"maxpool", [](int seed) {
    Rng rng(static_cast<std::uint64_t>(200 + seed));
    auto x = separated_tensor({1, 2, 6, 6}, rng);
    auto r = random_tensor({1, 2, 3, 3}, rng);
    return gradcheck([&](auto& g, const std::vector<Var>& v) {
      return project(g, g.maxpool(v[0], 2, 2), r);
    }, {x});
  }});
  cases.push_back({"relu", [](int seed) {
    Rng rng(static_cast<std::uint64_t>(300 + seed));
    auto x = separated_tensor({2, 3, 4}, rng, 0.02);
    auto r = random_tensor({2, 3, 4}, rng);
    return gradcheck([&](auto& g, const std::vector<Var>& v) {
      return project(g, g.relu(v[0]), r);
    }, {x});
  }});
  cases.push_back({"softmax", [](int seed) {
    Rng rng(static_cast<std::uint64_t>(500 + seed));
    auto x = random_tensor({4, 5}, rng, -2, 2);
    auto r = random_tensor({4, 5}, rng);
    return gradcheck([&](auto& g, const std::vector<Var>& v) {
      return project(g, g.softmax(v[0]), r);
    }, {x});
  }});
  cases.push_back({"cross_entropy", [](int seed) {
    Rng rng(static_cast<std::uint64_t>(600 + seed));
    auto x = random_tensor({3, 5}, rng, -2, 2);
    auto labels = one_hot({static_cast<std::size_t>(seed % 5), 1, 4}, 5);
    return gradcheck([&](auto& g, const std::vector<Var>& v) {
      using T = typename std::decay_t<decltype(g)>::value_type;
      return g.cross_entropy(g.softmax(v[0]), labels.template cast<T>());
    }, {x});
  }});
  cases.push_back({"channel_bias+spatial_sum+reshape+scale+pick", [](int seed) {
    Rng rng(static_cast<std::uint64_t>(700 + seed));
    auto f = random_tensor({2, 3, 2, 3}, rng);
    auto w = random_tensor({2, 6}, rng);
    auto b = random_tensor({3}, rng);
    auto r = random_tensor({2, 3}, rng);
    return gradcheck([&](auto& g, const std::vector<Var>& v) {
      auto biased = g.add_channel_bias(v[0], v[2]);
      auto pooled = g.weighted_spatial_sum(biased, v[1]);
      auto shaped = g.reshape(g.scale(pooled, 0.5), {3, 2});
      return g.add(project(g, g.reshape(shaped, {2, 3}), r), g.pick(pooled, 1));
    }, {f, w, b});
  }});
  return cases;
}

// -- end to end -----------------------------------------------------------------

inline ModelConfig gradcheck_model_config(std::uint64_t seed = 0) {
  ModelConfig c;
  c.input_size = 16;
  c.conv_blocks = {{4}, {6}};
  c.attention_channels = 5;
  c.hidden_units = 6;
  c.seed = seed;
  return c;
}

// The attention score bias shifts every location score equally, so the
// softmax cancels it and its gradient is identically zero; it is bound as a
// constant here.
inline constexpr std::size_t kScoreBias = 7;  // index in gradcheck_model_config() order

template <typename G>
Var model_loss(G& g, const std::vector<Var>& v, const Model& m, GradeLabel label) {
  using T = typename G::value_type;
  std::vector<Var> params(v.begin() + 1, v.end());
  params.insert(params.begin() + kScoreBias,
                g.constant(m.parameters()[kScoreBias].value.template cast<T>()));
  auto f = m.forward(g, params, v[0]);
  Tensor<T> target({1, 5});
  target[static_cast<std::size_t>(label.value())] = T(1);
  return g.cross_entropy(f.probs, target);
}

inline std::vector<Tensor<float>> model_gradcheck_inputs(Model& m, Rng& rng, std::size_t size) {
  std::vector<Tensor<float>> inputs = {random_tensor({1, 3, size, size}, rng, 0, 1)};
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    auto& p = m.parameters()[i];
    // Nonzero biases so that every parameter carries a generic gradient.
    if (!p.fan_in) p.value = random_tensor(p.value.shape(), rng, -0.1, 0.1);
    if (i != kScoreBias) inputs.push_back(p.value);
  }
  return inputs;
}

/// Gradient check of the cross-entropy loss of a small model for `seed`.
inline GradCheckResult model_gradient_case(std::uint64_t seed) {
  Model m(gradcheck_model_config(seed));
  if (m.parameters()[kScoreBias].name != "attention.score.bias")
    throw std::logic_error("unexpected parameter order");
  Rng rng(derive_seed(seed, 77));
  const auto inputs = model_gradcheck_inputs(m, rng, 16);
  const GradeLabel label(static_cast<int>(seed % 5));
  return gradcheck([&](auto& g, const std::vector<Var>& v) { return model_loss(g, v, m, label); },
                   inputs);
}

}  // namespace drgrade::testing
