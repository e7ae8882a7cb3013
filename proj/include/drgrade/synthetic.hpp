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
 * @brief Synthetic fundus-like corpus with class-distinct lesions.
 *
 * Every image is a dark frame holding an orange retinal disc with vignetting,
 * an optic disc, a few background vessels and pixel noise. The grade decides
 * the lesions drawn on top:
 *
 *   0  none
 *   1  small dark-red dots (microaneurysm-like), radius 1.5 to 2.1 px
 *   2  medium pale-yellow blobs (exudate-like), radius 3 to 4.5 px
 *   3  large dark-red blobs (haemorrhage-like), radius 7 to 10 px
 *   4  vessel tufts: a cluster of thin bright-red tortuous segments
 *
 * Sizes are in pixels of a 128×128 image and scale with the output size.
 */
#pragma once

#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "drgrade/image.hpp"
#include "drgrade/manifest.hpp"
#include "drgrade/rng.hpp"

namespace drgrade {

namespace detail {

struct Canvas {
  int size;
  std::vector<double> rgb;  // size×size×3

  explicit Canvas(int s) : size(s), rgb(static_cast<std::size_t>(s) * s * 3, 0.0) {}

  void blend(int x, int y, const double (&color)[3], double alpha) {
    if (x < 0 || y < 0 || x >= size || y >= size || alpha <= 0.0) return;
    auto* p = &rgb[(static_cast<std::size_t>(y) * size + x) * 3];
    for (int c = 0; c < 3; ++c) p[c] += alpha * (color[c] - p[c]);
  }

  /// Soft-edged disc.
  void disc(double cx, double cy, double r, const double (&color)[3], double alpha) {
    const int x0 = static_cast<int>(std::floor(cx - r - 1)), x1 = static_cast<int>(std::ceil(cx + r + 1));
    const int y0 = static_cast<int>(std::floor(cy - r - 1)), y1 = static_cast<int>(std::ceil(cy + r + 1));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
        blend(x, y, color, alpha * std::clamp(r + 0.5 - d, 0.0, 1.0));
      }
  }

  /// Polyline of soft discs.
  void stroke(const std::vector<std::pair<double, double>>& pts, double width,
              const double (&color)[3], double alpha) {
    for (std::size_t i = 1; i < pts.size(); ++i) {
      const auto [ax, ay] = pts[i - 1];
      const auto [bx, by] = pts[i];
      const int n = std::max(1, static_cast<int>(std::hypot(bx - ax, by - ay) * 2));
      for (int k = 0; k <= n; ++k) {
        const double t = static_cast<double>(k) / n;
        disc(ax + t * (bx - ax), ay + t * (by - ay), width / 2, color, alpha);
      }
    }
  }
};

/// Random walk with smoothly turning heading.
inline std::vector<std::pair<double, double>> wander(Rng& rng, double x, double y, double heading,
                                                     int segments, double step, double turn) {
  std::vector<std::pair<double, double>> pts{{x, y}};
  for (int i = 0; i < segments; ++i) {
    heading += rng.uniform(-turn, turn);
    x += step * std::cos(heading);
    y += step * std::sin(heading);
    pts.emplace_back(x, y);
  }
  return pts;
}

}  // namespace detail

/// One synthetic fundus image of grade `grade`, size×size pixels.
inline FundusImage synthetic_fundus(GradeLabel grade, std::uint64_t seed, int size = 128) {
  using detail::Canvas;
  constexpr double kPi = std::numbers::pi;
  Rng rng(seed);
  Canvas cv(size);
  const double u = size / 128.0;
  const double cx = size / 2.0 + rng.uniform(-3, 3) * u, cy = size / 2.0 + rng.uniform(-3, 3) * u;
  const double radius = size * rng.uniform(0.44, 0.48);
  const double tint = rng.uniform(-0.08, 0.08);

  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy) / radius;
      auto* p = &cv.rgb[(static_cast<std::size_t>(y) * size + x) * 3];
      if (d > 1.0) {
        p[0] = p[1] = p[2] = 4.0;
        continue;
      }
      const double shade = 1.0 - 0.45 * d * d;
      p[0] = (205 + 30 * tint) * shade;
      p[1] = (95 + 20 * tint) * shade;
      p[2] = 45 * shade;
    }

  const double disc_angle = rng.uniform(0, 2 * kPi);
  const double ox = cx + 0.55 * radius * std::cos(disc_angle);
  const double oy = cy + 0.55 * radius * std::sin(disc_angle);
  const double optic[3] = {250, 215, 150};
  cv.disc(ox, oy, 9 * u, optic, 0.85);

  const double vessel[3] = {120, 30, 25};
  const int vessels = static_cast<int>(rng.uniform_int(4, 6));
  for (int i = 0; i < vessels; ++i) {
    const double h = disc_angle + kPi + rng.uniform(-1.2, 1.2);
    cv.stroke(detail::wander(rng, ox, oy, h, 14, 4.5 * u, 0.25), 1.6 * u, vessel, 0.7);
  }

  auto inside = [&](double margin) {
    for (;;) {
      const double a = rng.uniform(0, 2 * kPi), r = std::sqrt(rng.uniform()) * (radius - margin);
      const double x = cx + r * std::cos(a), y = cy + r * std::sin(a);
      if (std::hypot(x - ox, y - oy) > 12 * u + margin) return std::pair{x, y};
    }
  };

  switch (grade.value()) {
    case 1: {
      const double dot[3] = {60, 5, 5};
      const int n = static_cast<int>(rng.uniform_int(12, 20));
      for (int i = 0; i < n; ++i) {
        auto [x, y] = inside(4 * u);
        cv.disc(x, y, rng.uniform(1.5, 2.1) * u, dot, 1.0);
      }
      break;
    }
    case 2: {
      const double exudate[3] = {245, 225, 120};
      const int n = static_cast<int>(rng.uniform_int(4, 7));
      for (int i = 0; i < n; ++i) {
        auto [x, y] = inside(8 * u);
        cv.disc(x, y, rng.uniform(3.0, 4.5) * u, exudate, 0.9);
      }
      break;
    }
    case 3: {
      const double haem[3] = {80, 8, 8};
      const int n = static_cast<int>(rng.uniform_int(2, 4));
      for (int i = 0; i < n; ++i) {
        auto [x, y] = inside(14 * u);
        cv.disc(x, y, rng.uniform(7.0, 10.0) * u, haem, 0.9);
      }
      break;
    }
    case 4: {
      const double tuft[3] = {235, 40, 40};
      const int clusters = static_cast<int>(rng.uniform_int(1, 2));
      for (int k = 0; k < clusters; ++k) {
        auto [x, y] = inside(16 * u);
        const int strands = static_cast<int>(rng.uniform_int(8, 12));
        for (int i = 0; i < strands; ++i)
          cv.stroke(detail::wander(rng, x, y, rng.uniform(0, 2 * kPi), 6, 2.2 * u, 1.1), 1.0 * u,
                    tuft, 0.9);
      }
      break;
    }
    default:
      break;
  }

  FundusImage img(size, size, "synthetic-" + std::to_string(grade.value()) + "-" +
                                  std::to_string(seed));
  for (std::size_t i = 0; i < cv.rgb.size(); ++i) {
    const double v = cv.rgb[i] + rng.normal() * 3.0;
    img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  }
  return img;
}

struct SyntheticCorpus {
  DatasetManifest train;
  DatasetManifest holdout;
};

/**
 * Writes `count` images (grades cycling 0..4) as PNGs under `dir` plus
 * train.csv and holdout.csv. The last `holdout` images (in generation order)
 * form the held-out split. Image i uses derive_seed(seed, i).
 */
inline SyntheticCorpus write_synthetic_corpus(const std::filesystem::path& dir, std::size_t count,
                                              std::size_t holdout, std::uint64_t seed,
                                              int size = 128) {
  if (holdout > count) throw std::invalid_argument("synthetic corpus: holdout exceeds count");
  std::filesystem::create_directories(dir / "images");
  SyntheticCorpus corpus;
  corpus.train.root = corpus.holdout.root = dir;
  for (std::size_t i = 0; i < count; ++i) {
    const GradeLabel grade(static_cast<int>(i % GradeLabel::kCount));
    char name[32];
    std::snprintf(name, sizeof name, "images/%05zu.png", i);
    save_png(synthetic_fundus(grade, derive_seed(seed, i), size), dir / name);
    auto& split = i < count - holdout ? corpus.train : corpus.holdout;
    split.entries.push_back({name, grade, "synthetic", 0});
  }
  write_manifest(corpus.train, dir / "train.csv");
  write_manifest(corpus.holdout, dir / "holdout.csv");
  return corpus;
}

}  // namespace drgrade
