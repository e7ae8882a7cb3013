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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "drgrade/checkpoint.hpp"
#include "drgrade/model.hpp"
#include "drgrade/train.hpp"
#include "gradient_cases.hpp"
#include "test_images.hpp"

namespace drgrade {
namespace {

using testing::gradcheck;
using testing::random_tensor;

ModelConfig small_config(std::uint64_t seed = 0) { return testing::gradcheck_model_config(seed); }

std::vector<Tensor<float>> forward_outputs(const Model& m, const std::vector<Tensor<float>>& xs) {
  std::vector<Tensor<float>> out;
  for (const auto& x : xs) {
    Graph<float> g;
    auto f = m.forward(g, g.constant(x));
    out.push_back(g.value(f.logits));
    out.push_back(g.value(f.probs));
  }
  return out;
}

TrainingSet random_set(std::size_t n, std::size_t size, std::uint64_t seed) {
  TrainingSet s;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    s.inputs.push_back(random_tensor({3, size, size}, rng, 0.0, 1.0));
    s.labels.emplace_back(static_cast<int>(i % 5));
    s.sources.push_back("r" + std::to_string(i));
  }
  return s;
}

// ---------------------------------------------------------------- build

TEST(ModelBuild, DefaultConfigShapesAndCount) {
  const Model m(ModelConfig{});
  // Frozen output of tools/oracles/param_count.py (default config).
  EXPECT_EQ(m.parameter_count(), 69222u);
  EXPECT_EQ(m.config().extents(), (std::vector<std::size_t>{64, 32, 16, 8}));
  Graph<float> g;
  const auto img = testing::noise_image(128, 128, 1);
  auto f = m.forward(g, g.constant(preprocess(img).reshaped({1, 3, 128, 128})));
  EXPECT_EQ(g.value(f.probs).shape(), (Shape{1, 5}));
  EXPECT_EQ(g.value(f.attention).shape(), (Shape{1, 64}));
}

TEST(ModelBuild, SmallConfigCountMatchesShapeWalk) {
  // Frozen output of tools/oracles/param_count.py on the same config.
  EXPECT_EQ(Model(small_config()).parameter_count(), 446u);
  EXPECT_EQ(small_config().extents(), (std::vector<std::size_t>{8, 4}));
}

TEST(ModelBuild, SameSeedSameWeights) {
  const Model a(small_config(3)), b(small_config(3)), c(small_config(4));
  EXPECT_EQ(a.parameters(), b.parameters());
  EXPECT_NE(a.parameters(), c.parameters());
}

TEST(ModelBuild, HeUniformRangesAndZeroBiases) {
  const Model m(ModelConfig{});
  for (const auto& p : m.parameters()) {
    if (p.fan_in == 0) {
      for (float v : p.value.data()) ASSERT_EQ(v, 0.0f) << p.name;
      continue;
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(p.fan_in));
    double lo = 0, hi = 0;
    for (float v : p.value.data()) {
      ASSERT_LE(std::abs(v), bound) << p.name;
      lo = std::min(lo, double(v));
      hi = std::max(hi, double(v));
    }
    if (p.value.size() >= 64) {
      EXPECT_LT(lo, -0.8 * bound) << p.name;
      EXPECT_GT(hi, 0.8 * bound) << p.name;
    }
  }
}

TEST(ModelBuild, RejectsBadConfigs) {
  auto c = small_config();
  c.classes = 4;
  EXPECT_THROW(Model{c}, std::invalid_argument);
  c = small_config();
  c.input_size = 8;  // 8 -> 4 -> 2
  EXPECT_THROW(Model{c}, std::invalid_argument);
  c = small_config();
  c.input_size = 2;
  c.conv_blocks = {{4, 3, 1, 4}};
  EXPECT_THROW(Model{c}, std::invalid_argument);
  c = small_config();
  c.conv_blocks[0].kernel = 4;
  EXPECT_THROW(Model{c}, std::invalid_argument);
  c = small_config();
  c.conv_blocks.clear();
  EXPECT_THROW(Model{c}, std::invalid_argument);
}

TEST(ModelBuild, ConfigJsonRoundTrip) {
  auto c = small_config(99);
  c.conv_blocks[1].stride = 2;
  c.conv_blocks[1].pool = 1;
  const nlohmann::json j = c;
  EXPECT_EQ(j.get<ModelConfig>(), c);
  EXPECT_EQ(nlohmann::json::parse(R"({"seed": 5})").get<ModelConfig>().conv_blocks.size(), 4u);
}

TEST(ModelBuild, ForwardRejectsWrongInput) {
  const Model m(small_config());
  Graph<float> g;
  EXPECT_THROW(m.forward(g, g.constant(Tensor<float>({1, 3, 17, 17}))), ShapeError);
  EXPECT_THROW(m.forward(g, g.constant(Tensor<float>({1, 1, 16, 16}))), ShapeError);
}

// ---------------------------------------------------------------- attention

TEST(AttentionPool, ConstantFeaturesGiveChannelValues) {
  Rng rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor<float> f({2, 3, 4, 5});
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = static_cast<float>(rng.uniform(-2, 2));
        for (std::size_t p = 0; p < 20; ++p) f[(n * 3 + c) * 20 + p] = v;
      }
    Graph<float> g;
    auto [pooled, alpha] = attention_pool(g, g.constant(f),
                                          g.constant(random_tensor({1, 3, 1, 1}, rng, -3, 3)),
                                          g.constant(Tensor<float>({1}, 0.3f)));
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 3; ++c)
        EXPECT_NEAR(g.value(pooled)[n * 3 + c], f[(n * 3 + c) * 20], 1e-6);
  }
}

TEST(AttentionPool, ExtremeScoreSelectsLocation) {
  Rng rng(2);
  Tensor<float> f({1, 2, 3, 3});
  for (std::size_t p = 0; p < 9; ++p) {
    f[p] = static_cast<float>(rng.uniform(-1, 1));
    f[9 + p] = static_cast<float>(rng.uniform(-1, 1));
  }
  // Channel 1 is a marker: 1 at the chosen location, 0 elsewhere.
  const std::size_t chosen = 7;
  for (std::size_t p = 0; p < 9; ++p) f[9 + p] = p == chosen ? 1.0f : 0.0f;
  Graph<float> g;
  auto [pooled, alpha] = attention_pool(g, g.constant(f),
                                        g.constant(Tensor<float>({1, 2, 1, 1}, {0.0f, 1000.0f})),
                                        g.constant(Tensor<float>({1}, 0.0f)));
  EXPECT_FLOAT_EQ(g.value(alpha)[chosen], 1.0f);
  EXPECT_FLOAT_EQ(g.value(pooled)[0], f[chosen]);
  EXPECT_FLOAT_EQ(g.value(pooled)[1], 1.0f);
}

TEST(AttentionPool, ConvexCombinationProperty) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const auto f = random_tensor({2, 4, 3, 5}, rng, -3, 3);
    Graph<float> g;
    auto [pooled, alpha] = attention_pool(g, g.constant(f),
                                          g.constant(random_tensor({1, 4, 1, 1}, rng, -4, 4)),
                                          g.constant(random_tensor({1}, rng, -1, 1)));
    const auto& a = g.value(alpha);
    for (std::size_t n = 0; n < 2; ++n) {
      double total = 0;
      for (std::size_t p = 0; p < 15; ++p) {
        ASSERT_GE(a[n * 15 + p], 0.0f);
        total += a[n * 15 + p];
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
      for (std::size_t c = 0; c < 4; ++c) {
        const float* row = f.ptr() + (n * 4 + c) * 15;
        const float lo = *std::min_element(row, row + 15), hi = *std::max_element(row, row + 15);
        const float v = g.value(pooled)[n * 4 + c];
        EXPECT_GE(v, lo - 1e-6f);
        EXPECT_LE(v, hi + 1e-6f);
      }
    }
  }
}

TEST(AttentionPool, ModelAttentionRowsSumToOne) {
  const Model m(ModelConfig{});
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Graph<float> g;
    const auto x = preprocess(testing::scene_image(150, 140, seed)).reshaped({1, 3, 128, 128});
    auto f = m.forward(g, g.constant(x));
    double total = 0;
    for (float v : g.value(f.attention).data()) {
      ASSERT_GE(v, 0.0f);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

// ---------------------------------------------------------------- gradients

using testing::kScoreBias;
using testing::model_loss;

std::vector<Tensor<float>> gradcheck_inputs(Model& m, Rng& rng, std::size_t size) {
  return testing::model_gradcheck_inputs(m, rng, size);
}

TEST(ModelGradients, EndToEndLossMatchesFiniteDifferences) {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < testing::kGradSeeds; ++seed) {
    const auto r = testing::model_gradient_case(seed);
    EXPECT_LT(r.max_rel_error, testing::kEndToEndTolerance)
        << "seed " << seed << " per tensor " << ::testing::PrintToString(r.per_tensor);
    EXPECT_GT(r.checked, r.skipped) << "seed " << seed;
    worst = std::max(worst, r.max_rel_error);
  }
  RecordProperty("worst_rel_error", std::to_string(worst));
}

TEST(ModelGradients, ScoreBiasGradientVanishes) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Model m(small_config(seed));
    Rng rng(derive_seed(seed, 78));
    const auto inputs = gradcheck_inputs(m, rng, 16);
    Graph<float> g;
    auto params = m.bind(g, true);
    auto f = m.forward(g, params, g.constant(inputs[0]));
    Tensor<float> one_hot({1, 5});
    one_hot[seed % 5] = 1.0f;
    g.backward(g.cross_entropy(f.probs, one_hot));
    double largest = 0;
    for (std::size_t i = 0; i < params.size(); ++i)
      if (i != kScoreBias)
        for (float v : g.grad(params[i])->data()) largest = std::max(largest, double(std::abs(v)));
    EXPECT_LE(std::abs((*g.grad(params[kScoreBias]))[0]), 1e-5 * largest) << "seed " << seed;
  }
}

TEST(ModelGradients, DefaultConfigSpotCheck) {
  Model m(ModelConfig{});
  ASSERT_EQ(m.parameters()[kScoreBias + 4].name, "attention.score.bias");
  Rng rng(5);
  // Same check as above on the full-size network, three coordinates per tensor.
  std::vector<Tensor<float>> inputs = {random_tensor({1, 3, 128, 128}, rng, 0, 1)};
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    auto& p = m.parameters()[i];
    if (!p.fan_in) p.value = random_tensor(p.value.shape(), rng, -0.1, 0.1);
    if (i != kScoreBias + 4) inputs.push_back(p.value);
  }
  auto loss = [&](auto& g, const std::vector<Var>& v) {
    using T = typename std::remove_reference_t<decltype(g)>::value_type;
    std::vector<Var> params(v.begin() + 1, v.end());
    params.insert(params.begin() + kScoreBias + 4,
                  g.constant(m.parameters()[kScoreBias + 4].value.template cast<T>()));
    Tensor<T> one_hot({1, 5});
    one_hot[2] = T(1);
    return g.cross_entropy(m.forward(g, params, v[0]).probs, one_hot);
  };
  auto r = gradcheck(loss, inputs, 1e-3, 3);
  EXPECT_LT(r.max_rel_error, 1e-3) << ::testing::PrintToString(r.per_tensor);
}

// ---------------------------------------------------------------- predict

TEST(Predict, ZeroOutputLayerGivesUniform) {
  Model m(ModelConfig{});
  m.parameter("head.out.weight").fill(0.0f);
  const auto r = predict(m, testing::scene_image(200, 180, 1));
  for (double p : r.probabilities) EXPECT_NEAR(p, 0.2, 1e-7);
  EXPECT_EQ(r.grade.value(), 0);
}

TEST(Predict, DeterministicAndNormalized) {
  const Model m(ModelConfig{.seed = 11});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto img = testing::noise_image(100 + static_cast<int>(seed), 90, seed);
    const auto a = predict(m, img, "m1");
    const auto b = predict(m, img, "m1");
    EXPECT_EQ(a.probabilities, b.probabilities);
    EXPECT_EQ(a.grade, b.grade);
    EXPECT_EQ(a.model_id, "m1");
    double total = 0;
    for (double p : a.probabilities) total += p;
    EXPECT_NEAR(total, 1.0, 1e-6);
    EXPECT_EQ(a.grade.value(), static_cast<int>(argmax_lowest(a.probabilities)));
  }
}

TEST(Predict, ArgmaxTiesGoToLowerGrade) {
  EXPECT_EQ(argmax_lowest(std::array<double, 5>{0.1, 0.3, 0.3, 0.2, 0.1}), 1u);
  EXPECT_EQ(argmax_lowest(std::array<double, 5>{0.2, 0.2, 0.2, 0.2, 0.2}), 0u);
  EXPECT_EQ(argmax_lowest(std::array<double, 5>{0.1, 0.1, 0.1, 0.1, 0.6}), 4u);
}

TEST(Predict, IndependentOfOtherSamples) {
  const Model m(small_config(2));
  const auto set = random_set(6, 16, 4);
  std::vector<Tensor<float>> alone;
  for (const auto& x : set.inputs) alone.push_back(x.reshaped({1, 3, 16, 16}));
  auto first = forward_outputs(m, alone);
  std::reverse(alone.begin(), alone.end());
  auto second = forward_outputs(m, alone);
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_EQ(first[2 * i], second[2 * (set.size() - 1 - i)]);
  }
}

// ---------------------------------------------------------------- training

TEST(Train, ZeroLearningRateKeepsWeights) {
  Model m(small_config(1));
  const auto before = m.parameters();
  TrainOptions opt;
  opt.epochs = 3;
  opt.batch_size = 4;
  opt.adam.lr = 0.0;
  train(m, random_set(10, 16, 1), opt);
  EXPECT_EQ(m.parameters(), before);
}

TEST(Train, OverfitsSingleSample) {
  Model m(ModelConfig{.seed = 3});
  TrainingSet set;
  set.inputs.push_back(preprocess(testing::scene_image(128, 128, 9)));
  set.labels.emplace_back(3);
  set.sources.push_back("one");
  TrainOptions opt;
  opt.epochs = 200;
  opt.batch_size = 1;
  const auto report = train(m, set, opt);
  ASSERT_EQ(report.epochs.size(), 200u);
  EXPECT_LT(batch_loss(m, set, {0}), 0.01);
  EXPECT_EQ(report.final_train_accuracy, 1.0);
}

TEST(Train, SmallAdamStepDecreasesFrozenBatchLoss) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Model m(small_config(seed));
    const auto set = random_set(8, 16, derive_seed(seed, 5));
    std::vector<std::size_t> all(set.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const double before = batch_loss(m, set, all);
    auto grads = zero_gradients(m);
    for (auto i : all)
      accumulate_sample_gradient(m, set.inputs[i], set.labels[i], 1.0f / 8, grads);
    Adam adam(m, {.lr = 1e-4});
    adam.step(m, grads);
    EXPECT_LT(batch_loss(m, set, all), before) << "seed " << seed;
  }
}

TEST(Train, SeedDeterministic) {
  const auto set = random_set(12, 16, 2);
  TrainOptions opt;
  opt.epochs = 2;
  opt.batch_size = 5;
  opt.seed = 8;
  Model a(small_config(1)), b(small_config(1));
  const auto ra = train(a, set, opt);
  const auto rb = train(b, set, opt);
  EXPECT_EQ(a.parameters(), b.parameters());
  ASSERT_EQ(ra.epochs.size(), 2u);
  EXPECT_EQ(ra.epochs[1].loss, rb.epochs[1].loss);
  opt.seed = 9;
  Model c(small_config(1));
  train(c, set, opt);
  EXPECT_NE(a.parameters(), c.parameters());
}

TEST(Train, AugmentedRunIsDeterministic) {
  const auto set = random_set(6, 16, 3);
  TrainOptions opt;
  opt.epochs = 2;
  opt.batch_size = 3;
  opt.augment = true;
  Model a(small_config(1)), b(small_config(1));
  train(a, set, opt);
  train(b, set, opt);
  EXPECT_EQ(a.parameters(), b.parameters());
}

TEST(Train, EpochOrderIsPermutation) {
  for (std::size_t epoch = 1; epoch < 5; ++epoch) {
    auto order = epoch_order(37, 4, epoch);
    std::sort(order.begin(), order.end());
    for (std::size_t i = 0; i < order.size(); ++i) ASSERT_EQ(order[i], i);
  }
  EXPECT_NE(epoch_order(37, 4, 1), epoch_order(37, 4, 2));
}

TEST(Train, ReportsEpochsThroughCallback) {
  Model m(small_config());
  std::vector<std::size_t> seen;
  TrainOptions opt;
  opt.epochs = 3;
  train(m, random_set(5, 16, 0), opt, [&](const EpochStats& s) {
    seen.push_back(s.epoch);
    EXPECT_GE(s.accuracy, 0.0);
    EXPECT_LE(s.accuracy, 1.0);
    EXPECT_GT(s.loss, 0.0);
  });
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3}));
}

TEST(Train, LoadReportsBadPath) {
  const auto dir = testing::scratch_dir("trainload");
  save_png(testing::noise_image(20, 20, 1), dir / "a" / "ok.png");
  DatasetManifest m;
  m.root = dir;
  m.entries = {{"a/ok.png", GradeLabel(1), "a", 0}, {"a/missing.png", GradeLabel(2), "a", 0}};
  try {
    load_training_set(m);
    FAIL() << "expected ImageError";
  } catch (const ImageError& e) {
    EXPECT_NE(std::string(e.what()).find("missing.png"), std::string::npos);
  }
  m.entries.pop_back();
  const auto set = load_training_set(m);
  ASSERT_EQ(set.size(), 1u);
  EXPECT_EQ(set.inputs[0].shape(), (Shape{3, 128, 128}));
  std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------- checkpoints

TEST(Checkpoint, RoundTripIsBitExact) {
  Model m(ModelConfig{.seed = 21});
  TrainOptions opt;
  opt.epochs = 1;
  TrainingSet set;
  for (std::uint64_t i = 0; i < 3; ++i) {
    set.inputs.push_back(preprocess(testing::noise_image(128, 128, i)));
    set.labels.emplace_back(static_cast<int>(i));
  }
  const auto report = train(m, set, opt);
  const auto bytes = encode_checkpoint(m, {1, report.final_loss});
  const auto back = decode_checkpoint(bytes);
  EXPECT_EQ(back.model.config(), m.config());
  EXPECT_EQ(back.model.parameters(), m.parameters());
  EXPECT_EQ(back.training.epochs, 1u);
  EXPECT_EQ(back.training.final_loss, report.final_loss);
  std::vector<Tensor<float>> xs;
  for (const auto& x : set.inputs) xs.push_back(x.reshaped({1, 3, 128, 128}));
  EXPECT_EQ(forward_outputs(back.model, xs), forward_outputs(m, xs));
  EXPECT_EQ(encode_checkpoint(back.model, back.training), bytes);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto dir = testing::scratch_dir("ckpt");
  const Model m(small_config(4));
  save_checkpoint(m, dir / "sub" / "m.ckpt");
  const auto back = load_checkpoint(dir / "sub" / "m.ckpt");
  EXPECT_EQ(back.model.parameters(), m.parameters());
  EXPECT_FALSE(back.training.final_loss.has_value());
  EXPECT_THROW(load_checkpoint(dir / "nope.ckpt"), CheckpointError);
  std::filesystem::remove_all(dir);
}

CheckpointError::Kind decode_kind(std::span<const std::uint8_t> bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode unexpectedly succeeded";
  return CheckpointError::Kind::io;
}

TEST(Checkpoint, EveryTruncationIsStructuredError) {
  const auto bytes = encode_checkpoint(Model(small_config()));
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    const auto kind = decode_kind(std::span(bytes.data(), n));
    if (n < 6) {
      EXPECT_EQ(kind, CheckpointError::Kind::bad_magic) << n;
    } else {
      EXPECT_EQ(kind, CheckpointError::Kind::truncated) << n;
    }
  }
}

TEST(Checkpoint, RejectsMagicVersionAndShapes) {
  auto bytes = encode_checkpoint(Model(small_config()));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(decode_kind(bad), CheckpointError::Kind::bad_magic);
  bad = bytes;
  bad[6] = 2;
  EXPECT_EQ(decode_kind(bad), CheckpointError::Kind::version_mismatch);
  bad = bytes;
  bad.push_back(0);
  EXPECT_EQ(decode_kind(bad), CheckpointError::Kind::bad_header);

  // Rewrite the header so the config disagrees with the stored tensors.
  const std::size_t len = detail::get_le(bytes, 8, 4);
  auto header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<long>(len));
  auto rebuild = [&](const nlohmann::json& h) {
    const std::string text = h.dump();
    std::vector<std::uint8_t> out(bytes.begin(), bytes.begin() + 8);
    detail::put_le(out, text.size(), 4);
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), bytes.begin() + 12 + static_cast<long>(len), bytes.end());
    return out;
  };
  EXPECT_NO_THROW(decode_checkpoint(rebuild(header)));

  auto h = header;
  h["config"]["hidden_units"] = 7;
  EXPECT_EQ(decode_kind(rebuild(h)), CheckpointError::Kind::shape_mismatch);
  h = header;
  h["tensors"][0]["shape"] = {4, 3, 3, 2};
  EXPECT_EQ(decode_kind(rebuild(h)), CheckpointError::Kind::shape_mismatch);
  h = header;
  h["tensors"][1]["offset"] = 0;
  EXPECT_EQ(decode_kind(rebuild(h)), CheckpointError::Kind::shape_mismatch);
  h = header;
  h["config"]["classes"] = 3;
  EXPECT_EQ(decode_kind(rebuild(h)), CheckpointError::Kind::bad_header);
  h = header;
  h.erase("training");
  EXPECT_EQ(decode_kind(rebuild(h)), CheckpointError::Kind::bad_header);
  std::vector<std::uint8_t> garbage(bytes.begin(), bytes.begin() + 8);
  detail::put_le(garbage, 3, 4);
  garbage.insert(garbage.end(), {'{', 'x', '}'});
  EXPECT_EQ(decode_kind(garbage), CheckpointError::Kind::bad_header);
}

TEST(Checkpoint, GoldenMinimalFile) {
  // tests/data/minimal.ckpt is written by tools/oracles/golden_checkpoint.py.
  const auto ckpt = load_checkpoint(std::filesystem::path(DRGRADE_TEST_DATA_DIR) / "minimal.ckpt");
  const auto& c = ckpt.model.config();
  EXPECT_EQ(c.input_size, 8u);
  ASSERT_EQ(c.conv_blocks.size(), 1u);
  EXPECT_EQ(c.conv_blocks[0].out_channels, 2u);
  EXPECT_EQ(c.attention_channels, 2u);
  EXPECT_EQ(c.hidden_units, 3u);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(ckpt.training.epochs, 3u);
  EXPECT_EQ(ckpt.training.final_loss, 0.5);
  std::size_t k = 0;
  for (const auto& p : ckpt.model.parameters())
    for (float v : p.value.data()) {
      ASSERT_EQ(v, static_cast<float>(static_cast<int>(k % 17) - 8) / 8.0f) << p.name;
      ++k;
    }
  EXPECT_EQ(k, 94u);
  std::ifstream in(std::filesystem::path(DRGRADE_TEST_DATA_DIR) / "minimal.ckpt", std::ios::binary);
  std::vector<std::uint8_t> file(std::istreambuf_iterator<char>(in), {});
  EXPECT_EQ(encode_checkpoint(ckpt.model, ckpt.training), file);
}

}  // namespace
}  // namespace drgrade
