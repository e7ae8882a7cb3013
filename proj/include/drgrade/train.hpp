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
 * @brief Mini-batch Adam training on cross-entropy.
 *
 * Each sample of a batch gets its own graph; per-sample gradients are added
 * into the batch accumulator in batch order, so a run is bit-reproducible
 * for a given seed and independent of thread scheduling.
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "drgrade/graph.hpp"
#include "drgrade/manifest.hpp"
#include "drgrade/model.hpp"
#include "drgrade/preprocess.hpp"
#include "drgrade/rng.hpp"

namespace drgrade {

/// Preprocessed inputs with their grades.
struct TrainingSet {
  std::vector<Tensor<float>> inputs;  ///< each 3×S×S
  std::vector<GradeLabel> labels;
  std::vector<std::string> sources;

  std::size_t size() const { return inputs.size(); }
};

/// Decodes and preprocesses every manifest entry. Failures are rethrown as
/// ImageError naming the entry path.
inline TrainingSet load_training_set(const DatasetManifest& manifest,
                                     std::size_t input_size = kModelInputSize) {
  TrainingSet set;
  set.inputs.reserve(manifest.size());
  for (const auto& e : manifest.entries) {
    const auto path = manifest.resolve(e);
    try {
      set.inputs.push_back(preprocess(load_image(path), static_cast<int>(input_size)));
    } catch (const ImageError& err) {
      throw ImageError("cannot load training image '" + path.string() + "': " + err.what());
    }
    set.labels.push_back(e.label);
    set.sources.push_back(path.string());
  }
  return set;
}

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(const Model& model, AdamOptions options) : options_(options) {
    for (const auto& p : model.parameters()) {
      m_.emplace_back(p.value.size(), 0.0);
      v_.emplace_back(p.value.size(), 0.0);
    }
  }

  std::size_t steps() const { return t_; }

  /// Applies one update from `grads` (same order and shapes as the parameters).
  void step(Model& model, const std::vector<Tensor<float>>& grads) {
    ++t_;
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    auto& params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto w = params[i].value.data();
      const auto g = grads[i].data();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        m[k] = b1 * m[k] + (1.0 - b1) * g[k];
        v[k] = b2 * v[k] + (1.0 - b2) * double(g[k]) * g[k];
        const double update =
            options_.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + options_.epsilon);
        w[k] = static_cast<float>(w[k] - update);
      }
    }
  }

 private:
  AdamOptions options_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

struct TrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  AdamOptions adam;
  std::uint64_t seed = 0;
  /// Random geometric augmentation of each sample per epoch.
  bool augment = false;
  AugmentParams augment_params;
};

struct EpochStats {
  std::size_t epoch = 0;  ///< 1-based
  double loss = 0.0;      ///< mean sample loss over the epoch
  double accuracy = 0.0;  ///< fraction of samples whose pre-update prediction was right
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::optional<double> final_loss;  ///< last epoch's loss
  double final_train_accuracy = 0.0; ///< clean pass over the training set after training
};

struct SampleGradient {
  double loss = 0.0;
  bool correct = false;
};

/// Adds d(scale·loss)/dparams for one sample into `grads`.
inline SampleGradient accumulate_sample_gradient(const Model& model, const Tensor<float>& chw,
                                                 GradeLabel label, float scale,
                                                 std::vector<Tensor<float>>& grads) {
  Graph<float> g;
  auto params = model.bind(g, true);
  Var x = g.constant(chw.reshaped({1, chw.dim(0), chw.dim(1), chw.dim(2)}));
  auto fwd = model.forward(g, params, x);
  Tensor<float> one_hot({1, static_cast<std::size_t>(GradeLabel::kCount)});
  one_hot[static_cast<std::size_t>(label.value())] = 1.0f;
  Var loss = g.cross_entropy(fwd.probs, one_hot);
  g.backward(g.scale(loss, scale));

  SampleGradient out;
  out.loss = g.value(loss)[0];
  const auto& probs = g.value(fwd.probs);
  out.correct = static_cast<int>(argmax_lowest(probs.data())) == label.value();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor<float>* gi = g.grad(params[i]);
    if (!gi) continue;
    auto dst = grads[i].data();
    const auto src = gi->data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
  return out;
}

inline std::vector<Tensor<float>> zero_gradients(const Model& model) {
  std::vector<Tensor<float>> grads;
  for (const auto& p : model.parameters()) grads.emplace_back(p.value.shape());
  return grads;
}

/// Mean cross-entropy of `model` on the samples `indices` of `set`.
inline double batch_loss(const Model& model, const TrainingSet& set,
                         const std::vector<std::size_t>& indices) {
  double total = 0.0;
  for (auto i : indices) {
    Graph<float> g;
    const auto& chw = set.inputs[i];
    Var x = g.constant(chw.reshaped({1, chw.dim(0), chw.dim(1), chw.dim(2)}));
    Tensor<float> one_hot({1, static_cast<std::size_t>(GradeLabel::kCount)});
    one_hot[static_cast<std::size_t>(set.labels[i].value())] = 1.0f;
    total += g.value(g.cross_entropy(model.forward(g, x).probs, one_hot))[0];
  }
  return total / static_cast<double>(indices.size());
}

inline double set_accuracy(const Model& model, const TrainingSet& set) {
  std::size_t right = 0;
  for (std::size_t i = 0; i < set.size(); ++i)
    right += predict_tensor(model, set.inputs[i]).grade == set.labels[i];
  return set.size() ? static_cast<double>(right) / static_cast<double>(set.size()) : 0.0;
}

/// Epoch order: Fisher-Yates shuffle seeded by derive_seed(seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed,
                                            std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, epoch));
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(
                                0, static_cast<std::int64_t>(i - 1)))]);
  return order;
}

using EpochCallback = std::function<void(const EpochStats&)>;

inline TrainReport train(Model& model, const TrainingSet& set, const TrainOptions& options,
                         const EpochCallback& on_epoch = {}) {
  if (set.size() == 0) throw std::invalid_argument("train: empty training set");
  if (options.batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  const auto s = static_cast<int>(model.config().input_size);
  Adam adam(model, options.adam);
  TrainReport report;
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    const auto order = epoch_order(set.size(), options.seed, epoch);
    double loss_sum = 0.0;
    std::size_t right = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      auto grads = zero_gradients(model);
      const float scale = 1.0f / static_cast<float>(end - start);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        SampleGradient r;
        if (options.augment) {
          const auto img = tensor_to_image(set.inputs[i]);
          const auto seed = derive_seed(derive_seed(options.seed, epoch), i);
          r = accumulate_sample_gradient(
              model, preprocess(augment(img, seed, options.augment_params), s),
              set.labels[i], scale, grads);
        } else {
          r = accumulate_sample_gradient(model, set.inputs[i], set.labels[i], scale, grads);
        }
        loss_sum += r.loss;
        right += r.correct;
      }
      adam.step(model, grads);
    }
    EpochStats stats{epoch, loss_sum / static_cast<double>(set.size()),
                     static_cast<double>(right) / static_cast<double>(set.size())};
    report.epochs.push_back(stats);
    report.final_loss = stats.loss;
    if (on_epoch) on_epoch(stats);
  }
  report.final_train_accuracy = set_accuracy(model, set);
  return report;
}

}  // namespace drgrade
