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
 * @brief Integrated Gradients attribution and heat-map overlays.
 *
 * For input x, baseline x' and target score F (the pre-softmax logit of the
 * target grade), the attribution of feature i is
 *
 *     IG_i = (x_i - x'_i) * (1/m) * sum_{k=1..m} dF/dx_i (x' + (k/m)(x - x'))
 *
 * Per-pixel mask values are the channel sums of IG_i. Sums are accumulated
 * in double in path order.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "drgrade/graph.hpp"
#include "drgrade/image.hpp"
#include "drgrade/model.hpp"
#include "drgrade/preprocess.hpp"

namespace drgrade {

struct IGConfig {
  enum class Baseline { black, custom };

  Baseline baseline = Baseline::black;
  /// Preprocessed 3×S×S baseline, required when baseline == custom.
  std::optional<Tensor<float>> custom_baseline;
  std::size_t steps = 50;
  /// Target grade; nullopt means the predicted grade.
  std::optional<GradeLabel> target;
};

struct AttributionMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;  ///< height×width, row-major
  GradeLabel target;
  std::size_t steps = 0;
  double score_input = 0.0;     ///< F(x)
  double score_baseline = 0.0;  ///< F(x')
  double attribution_sum = 0.0;
  double completeness_gap = 0.0;

  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

/// Result of a path integral over a flat feature vector.
struct PathIntegral {
  std::vector<double> attributions;
  double score_input = 0.0;
  double score_baseline = 0.0;
  double attribution_sum = 0.0;
  double completeness_gap = 0.0;
};

/**
 * Right-endpoint Riemann approximation of Integrated Gradients.
 *
 * `score_grad(point, grad)` must return F(point) and overwrite `grad` with
 * dF/dpoint. The final evaluation (k = m) is at x itself and supplies F(x).
 */
template <typename ScoreGrad>
PathIntegral integrate_path(std::span<const double> x, std::span<const double> baseline,
                            std::size_t steps, ScoreGrad&& score_grad) {
  if (steps == 0) throw std::invalid_argument("integrated gradients: steps must be >= 1");
  if (x.size() != baseline.size()) {
    throw std::invalid_argument("integrated gradients: baseline has " +
                                std::to_string(baseline.size()) + " features, input has " +
                                std::to_string(x.size()));
  }
  const std::size_t n = x.size();
  PathIntegral out;
  std::vector<double> sum(n, 0.0), point(n), grad(n);
  for (std::size_t k = 1; k <= steps; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(steps);
    for (std::size_t i = 0; i < n; ++i) point[i] = baseline[i] + t * (x[i] - baseline[i]);
    if (k == steps) std::copy(x.begin(), x.end(), point.begin());
    const double f = score_grad(std::span<const double>(point), std::span<double>(grad));
    if (k == steps) out.score_input = f;
    for (std::size_t i = 0; i < n; ++i) sum[i] += grad[i];
  }
  std::copy(baseline.begin(), baseline.end(), point.begin());
  out.score_baseline = score_grad(std::span<const double>(point), std::span<double>(grad));

  out.attributions.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.attributions[i] = (x[i] - baseline[i]) * (sum[i] / static_cast<double>(steps));
    out.attribution_sum += out.attributions[i];
  }
  out.completeness_gap =
      std::abs(out.attribution_sum - (out.score_input - out.score_baseline));
  return out;
}

/// Pre-softmax logit of `target` at a 3×S×S point and its input gradient.
inline double logit_and_gradient(const Model& model, std::span<const double> point,
                                 GradeLabel target, std::span<double> grad) {
  const std::size_t s = model.config().input_size;
  Tensor<float> x({1, 3, s, s});
  auto xd = x.data();
  for (std::size_t i = 0; i < xd.size(); ++i) xd[i] = static_cast<float>(point[i]);
  Graph<float> g;
  Var in = g.variable(std::move(x), true);
  auto fwd = model.forward(g, in);
  Var score = g.pick(fwd.logits, static_cast<std::size_t>(target.value()));
  g.backward(score);
  const Tensor<float>* gi = g.grad(in);
  if (gi) {
    const auto gd = gi->data();
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = gd[i];
  } else {
    std::fill(grad.begin(), grad.end(), 0.0);
  }
  return g.value(score)[0];
}

/// Integrated Gradients of a preprocessed 3×S×S input.
inline AttributionMask integrated_gradients_tensor(const Model& model, const Tensor<float>& chw,
                                                   const IGConfig& config = {}) {
  const std::size_t s = model.config().input_size;
  if (chw.shape() != Shape{3, s, s}) {
    throw ShapeError("integrated gradients: expected 3 x " + std::to_string(s) + " x " +
                     std::to_string(s) + " input, got " + shape_str(chw.shape()));
  }
  std::vector<double> baseline(chw.size(), 0.0);
  if (config.baseline == IGConfig::Baseline::custom) {
    if (!config.custom_baseline || config.custom_baseline->shape() != chw.shape()) {
      throw ShapeError("integrated gradients: custom baseline must have shape " +
                       shape_str(chw.shape()));
    }
    const auto b = config.custom_baseline->data();
    std::copy(b.begin(), b.end(), baseline.begin());
  }
  const GradeLabel target = config.target ? *config.target : predict_tensor(model, chw).grade;
  const auto xd = chw.data();
  const std::vector<double> x(xd.begin(), xd.end());

  auto path = integrate_path(x, baseline, config.steps,
                             [&](std::span<const double> p, std::span<double> grad) {
                               return logit_and_gradient(model, p, target, grad);
                             });
  AttributionMask mask;
  mask.height = mask.width = s;
  mask.values.assign(s * s, 0.0);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < s * s; ++i) mask.values[i] += path.attributions[c * s * s + i];
  mask.target = target;
  mask.steps = config.steps;
  mask.score_input = path.score_input;
  mask.score_baseline = path.score_baseline;
  mask.attribution_sum = path.attribution_sum;
  mask.completeness_gap = path.completeness_gap;
  return mask;
}

inline AttributionMask integrated_gradients(const Model& model, const FundusImage& img,
                                            const IGConfig& config = {}) {
  return integrated_gradients_tensor(
      model, preprocess(img, static_cast<int>(model.config().input_size)), config);
}

/// Nearest-rank percentile (q in (0,100]): the ceil(q/100 * n)-th smallest value.
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  const auto n = values.size();
  auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(values.begin(), values.begin() + static_cast<long>(rank - 1), values.end());
  return values[rank - 1];
}

/// "hot" colormap: black, red, yellow, white as t goes 0 to 1.
inline std::array<double, 3> hot_colormap(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return {std::clamp(3.0 * t, 0.0, 1.0) * 255.0, std::clamp(3.0 * t - 1.0, 0.0, 1.0) * 255.0,
          std::clamp(3.0 * t - 2.0, 0.0, 1.0) * 255.0};
}

/// Mask intensities in [0,1]: |v| clipped at its 99th percentile and divided
/// by it. When the percentile is 0 the maximum is used instead.
inline std::vector<double> normalized_intensity(const AttributionMask& mask) {
  std::vector<double> a(mask.values.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::abs(mask.values[i]);
  double scale = percentile(a, 99.0);
  if (scale <= 0.0) scale = a.empty() ? 0.0 : *std::max_element(a.begin(), a.end());
  for (auto& v : a) v = scale > 0.0 ? std::min(v, scale) / scale : 0.0;
  return a;
}

inline constexpr double kOverlayAlpha = 0.5;

/**
 * Heat-map overlay at mask resolution: 0.5·gray(img) + 0.5·hot(intensity).
 * `img` is resized to the mask resolution first when it differs.
 */
inline FundusImage render_overlay(const AttributionMask& mask, const FundusImage& img) {
  const int w = static_cast<int>(mask.width), h = static_cast<int>(mask.height);
  const FundusImage base = to_grayscale(
      img.width == w && img.height == h ? img : resize_bilinear(img, w, h));
  const auto intensity = normalized_intensity(mask);
  FundusImage out(w, h, img.source_id);
  for (std::size_t i = 0; i < intensity.size(); ++i) {
    const auto color = hot_colormap(intensity[i]);
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = (1.0 - kOverlayAlpha) * base.pixels[i * 3 + c] + kOverlayAlpha * color[c];
      out.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return out;
}

/// Raw mask as CSV: one line per row, 6 significant digits.
inline std::string mask_to_csv(const AttributionMask& mask) {
  std::string out;
  char buf[32];
  for (std::size_t y = 0; y < mask.height; ++y) {
    for (std::size_t x = 0; x < mask.width; ++x) {
      std::snprintf(buf, sizeof buf, "%.6g", mask.at(y, x));
      if (x) out.push_back(',');
      out += buf;
    }
    out.push_back('\n');
  }
  return out;
}

inline void save_mask_csv(const AttributionMask& mask, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << mask_to_csv(mask);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
}

}  // namespace drgrade
