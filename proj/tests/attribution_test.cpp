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

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "drgrade/attribution.hpp"
#include "gradcheck.hpp"
#include "test_images.hpp"
#include "toy_model.hpp"

namespace drgrade {
namespace {

using testing::random_tensor;

ModelConfig small_config(std::uint64_t seed) {
  ModelConfig c;
  c.input_size = 16;
  c.conv_blocks = {{4}, {6}};
  c.attention_channels = 5;
  c.hidden_units = 6;
  c.seed = seed;
  return c;
}

std::vector<double> random_vector(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

TEST(IntegratePath, LinearModelIsExactForAnyStepCount) {
  Rng rng(3);
  for (std::size_t m : {1u, 10u, 50u}) {
    for (int trial = 0; trial < 5; ++trial) {
      const auto w = random_vector(rng, 300, -2, 2);
      const auto x = random_vector(rng, 300, 0, 1);
      const auto base = random_vector(rng, 300, 0, 1);
      const double b = rng.uniform(-1, 1);
      auto linear = [&](std::span<const double> p, std::span<double> g) {
        std::copy(w.begin(), w.end(), g.begin());
        return std::inner_product(w.begin(), w.end(), p.begin(), b);
      };
      const auto r = integrate_path(x, base, m, linear);
      for (std::size_t i = 0; i < w.size(); ++i)
        ASSERT_NEAR(r.attributions[i], w[i] * (x[i] - base[i]), 1e-6) << "m=" << m;
      EXPECT_LT(r.completeness_gap, 1e-9);
    }
  }
}

TEST(IntegratePath, EvaluatesRightEndpoints) {
  std::vector<double> seen;
  const std::vector<double> x = {1.0}, base = {0.0};
  integrate_path(x, base, 4, [&](std::span<const double> p, std::span<double> g) {
    seen.push_back(p[0]);
    g[0] = p[0];
    return 0.5 * p[0] * p[0];
  });
  EXPECT_EQ(seen, (std::vector<double>{0.25, 0.5, 0.75, 1.0, 0.0}));
}

TEST(IntegratePath, QuadraticConvergesAtFirstOrder) {
  // F = x^2/2 along [0,1]: right sums give (m+1)/(2m), gap 1/(2m).
  const std::vector<double> x = {1.0}, base = {0.0};
  for (std::size_t m : {1u, 4u, 100u}) {
    const auto r = integrate_path(x, base, m, [](std::span<const double> p, std::span<double> g) {
      g[0] = p[0];
      return 0.5 * p[0] * p[0];
    });
    EXPECT_NEAR(r.completeness_gap, 0.5 / static_cast<double>(m), 1e-12);
  }
}

TEST(IntegratePath, RejectsBadArguments) {
  const std::vector<double> a = {1.0, 2.0}, b = {0.0};
  auto f = [](std::span<const double>, std::span<double>) { return 0.0; };
  EXPECT_THROW(integrate_path(a, a, 0, f), std::invalid_argument);
  EXPECT_THROW(integrate_path(a, b, 5, f), std::invalid_argument);
}

TEST(IntegratedGradients, InputEqualToBaselineGivesZeroMask) {
  const Model model(small_config(4));
  Rng rng(8);
  const auto x = random_tensor({3, 16, 16}, rng, 0.0, 1.0);
  IGConfig cfg;
  cfg.baseline = IGConfig::Baseline::custom;
  cfg.custom_baseline = x;
  cfg.steps = 20;
  const auto mask = integrated_gradients_tensor(model, x, cfg);
  for (double v : mask.values) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(mask.completeness_gap, 0.0);

  const auto black = integrated_gradients(model, testing::constant_image(40, 40, 0, 0, 0));
  for (double v : black.values) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(black.completeness_gap, 0.0);
}

TEST(IntegratedGradients, MaskIsChannelSumAndKeepsAccounting) {
  const Model model(small_config(5));
  const auto img = testing::scene_image(50, 50, 2);
  IGConfig cfg;
  cfg.steps = 30;
  const auto mask = integrated_gradients(model, img, cfg);
  EXPECT_EQ(mask.height, 16u);
  EXPECT_EQ(mask.width, 16u);
  EXPECT_EQ(mask.steps, 30u);
  const double sum = std::accumulate(mask.values.begin(), mask.values.end(), 0.0);
  EXPECT_NEAR(sum, mask.attribution_sum, 1e-9);
  EXPECT_NEAR(mask.completeness_gap,
              std::abs(mask.attribution_sum - (mask.score_input - mask.score_baseline)), 1e-12);
  for (double v : mask.values) EXPECT_TRUE(std::isfinite(v));
}

TEST(IntegratedGradients, ScoresArePreSoftmaxLogits) {
  const Model model(small_config(6));
  const auto img = testing::scene_image(30, 30, 3);
  const auto x = preprocess(img, 16);
  IGConfig cfg;
  cfg.target = GradeLabel(2);
  cfg.steps = 3;
  const auto mask = integrated_gradients_tensor(model, x, cfg);
  Graph<float> g;
  const auto logits = g.value(model.forward(g, g.constant(x.reshaped({1, 3, 16, 16}))).logits);
  EXPECT_EQ(mask.score_input, logits[2]);
  EXPECT_EQ(mask.target, GradeLabel(2));
}

TEST(IntegratedGradients, DefaultTargetIsPredictedGrade) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Model model(small_config(seed));
    const auto img = testing::noise_image(20, 20, seed);
    IGConfig cfg;
    cfg.steps = 2;
    EXPECT_EQ(integrated_gradients(model, img, cfg).target, predict(model, img).grade);
  }
}

TEST(IntegratedGradients, BitIdenticalAcrossRuns) {
  const Model model(small_config(9));
  const auto img = testing::scene_image(64, 48, 5);
  const auto a = integrated_gradients(model, img);
  const auto b = integrated_gradients(model, img);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.completeness_gap, b.completeness_gap);
}

TEST(IntegratedGradients, RejectsBadConfigurations) {
  const Model model(small_config(1));
  const auto x = preprocess(testing::noise_image(20, 20, 1), 16);
  IGConfig cfg;
  cfg.steps = 0;
  EXPECT_THROW(integrated_gradients_tensor(model, x, cfg), std::invalid_argument);
  cfg.steps = 5;
  cfg.baseline = IGConfig::Baseline::custom;
  EXPECT_THROW(integrated_gradients_tensor(model, x, cfg), ShapeError);
  cfg.custom_baseline = Tensor<float>({3, 8, 8});
  EXPECT_THROW(integrated_gradients_tensor(model, x, cfg), ShapeError);
  EXPECT_THROW(integrated_gradients_tensor(model, Tensor<float>({3, 8, 8})), ShapeError);
  EXPECT_THROW(cfg.target = GradeLabel(7), std::out_of_range);
}

TEST(IntegratedGradients, TrainedToyModelCompleteness) {
  const auto toy = testing::train_toy_model();
  EXPECT_GT(toy.report.final_train_accuracy, 0.6);
  const auto images = testing::toy_images(10, 999);
  for (std::size_t i = 0; i < images.size(); ++i) {
    IGConfig cfg;
    cfg.steps = 50;
    const auto m50 = integrated_gradients_tensor(toy.model, images.inputs[i], cfg);
    cfg.steps = 300;
    const auto m300 = integrated_gradients_tensor(toy.model, images.inputs[i], cfg);
    cfg.steps = 500;
    const auto m500 = integrated_gradients_tensor(toy.model, images.inputs[i], cfg);
    const double delta = std::abs(m300.score_input - m300.score_baseline);
    EXPECT_LE(m300.completeness_gap, 0.01 * delta + 1e-4) << "image " << i;
    EXPECT_LE(m500.completeness_gap, m50.completeness_gap) << "image " << i;
  }
}

// -- overlay ----------------------------------------------------------------------

AttributionMask mask_of(std::size_t h, std::size_t w, std::vector<double> values) {
  AttributionMask m;
  m.height = h;
  m.width = w;
  m.values = std::move(values);
  return m;
}

TEST(Overlay, HotColormapEndpoints) {
  EXPECT_EQ(hot_colormap(0.0), (std::array<double, 3>{0, 0, 0}));
  EXPECT_EQ(hot_colormap(1.0), (std::array<double, 3>{255, 255, 255}));
  EXPECT_EQ(hot_colormap(1.0 / 3.0)[0], 255.0);
  EXPECT_EQ(hot_colormap(-4.0), hot_colormap(0.0));
}

TEST(Overlay, ZeroMaskIsHalfBlendOfGrayscale) {
  const auto img = testing::scene_image(32, 32, 1);
  const auto out = render_overlay(mask_of(32, 32, std::vector<double>(32 * 32, 0.0)), img);
  const auto gray = to_grayscale(img);
  ASSERT_EQ(out.width, 32);
  for (std::size_t i = 0; i < out.pixels.size(); ++i)
    ASSERT_EQ(out.pixels[i], std::lround(0.5 * gray.pixels[i])) << i;
}

TEST(Overlay, SingleNonzeroPixelOnlyChangesThatPixel) {
  const auto img = testing::scene_image(32, 32, 2);
  std::vector<double> v(32 * 32, 0.0);
  const auto zero = render_overlay(mask_of(32, 32, v), img);
  v[5 * 32 + 7] = -0.3;
  const auto one = render_overlay(mask_of(32, 32, v), img);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c) {
        if (x == 7 && y == 5) continue;
        ASSERT_EQ(one.at(x, y, c), zero.at(x, y, c));
      }
  EXPECT_NE(one.at(7, 5, 0), zero.at(7, 5, 0));
}

TEST(Overlay, OutlierClipsToPercentile) {
  Rng rng(12);
  std::vector<double> v(64 * 64);
  for (auto& x : v) x = rng.uniform(-1, 1);
  v[100] = 1e6;
  auto clipped = v;
  clipped[100] = percentile([&] {
    std::vector<double> a;
    for (double x : v) a.push_back(std::abs(x));
    return a;
  }(), 99.0);
  const auto img = testing::scene_image(64, 64, 3);
  EXPECT_TRUE(render_overlay(mask_of(64, 64, v), img)
                  .same_pixels(render_overlay(mask_of(64, 64, clipped), img)));
}

TEST(Overlay, ResizesImageToMaskResolution) {
  const auto img = testing::scene_image(200, 150, 4);
  const auto out = render_overlay(mask_of(128, 128, std::vector<double>(128 * 128, 0.5)), img);
  EXPECT_EQ(out.width, 128);
  EXPECT_EQ(out.height, 128);
}

TEST(Overlay, Deterministic) {
  const Model model(small_config(2));
  const auto img = testing::scene_image(40, 40, 9);
  const auto mask = integrated_gradients(model, img);
  EXPECT_EQ(encode_png(render_overlay(mask, img)), encode_png(render_overlay(mask, img)));
}

TEST(Percentile, NearestRank) {
  EXPECT_EQ(percentile({5, 1, 4, 2, 3}, 50), 3.0);
  EXPECT_EQ(percentile({0, 10}, 99), 10.0);
  std::vector<double> v(200);
  std::iota(v.begin(), v.end(), 1.0);
  EXPECT_EQ(percentile(v, 99), 198.0);
  EXPECT_EQ(percentile({}, 99), 0.0);
}

TEST(MaskCsv, SixSignificantDigitsRowMajor) {
  const auto m = mask_of(2, 3, {1.0, -0.123456789, 1234567.0, 0.0, 2.5e-7, 1.0 / 3.0});
  EXPECT_EQ(mask_to_csv(m), "1,-0.123457,1.23457e+06\n0,2.5e-07,0.333333\n");
}

}  // namespace
}  // namespace drgrade
