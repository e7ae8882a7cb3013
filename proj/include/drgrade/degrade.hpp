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
 * @brief Capture-defect simulation: uneven light transmission, defocus blur
 * and dust/reflection artifacts, plus the 2^3 combination expansion.
 *
 * All three operators are pure functions of (image, seed, params) and keep
 * the image dimensions. They run at the source resolution; resizing to the
 * model input happens later in preprocess().
 *
 * Degradation code: light·4 + blur·2 + artifacts. When several factors are
 * combined they are applied in the order light, blur, artifacts, each with
 * its own child seed of the variant seed, so variant 7 contains exactly the
 * same light field as variant 4 and the same blobs as variant 1.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "drgrade/image.hpp"
#include "drgrade/rng.hpp"

namespace drgrade {

/// Radial gain field g(r) = clamp(a + b·exp(−r²/2σ²), 0.2, 1.8) plus offset.
struct LightParams {
  double a_min = 0.75, a_max = 1.0;
  double b_min = -0.35, b_max = 0.35;
  double sigma_min = 0.25, sigma_max = 0.6;  ///< fraction of min(width, height)
  double offset_min = -20.0, offset_max = 20.0;
};

struct BlurParams {
  double sigma_min = 1.0, sigma_max = 3.0;  ///< pixels
};

struct ArtifactParams {
  int count_min = 2, count_max = 6;
  double radius_min = 0.02, radius_max = 0.08;  ///< fraction of min extent
  double alpha_max = 0.7;
};

struct DegradationParams {
  LightParams light;
  BlurParams blur;
  ArtifactParams artifacts;
};

struct DegradationSpec {
  bool light = false;
  bool blur = false;
  bool artifacts = false;
  std::uint64_t seed = 0;
  DegradationParams params;

  int code() const { return (light ? 4 : 0) | (blur ? 2 : 0) | (artifacts ? 1 : 0); }

  static DegradationSpec from_code(int code, std::uint64_t seed,
                                   const DegradationParams& params = {}) {
    if (code < 0 || code > 7) {
      throw std::out_of_range("degradation code must be in [0,7], got " +
                              std::to_string(code));
    }
    return {(code & 4) != 0, (code & 2) != 0, (code & 1) != 0, seed, params};
  }
};

namespace detail {
inline std::uint8_t clamp_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}
}  // namespace detail

inline FundusImage degrade_light(const FundusImage& img, std::uint64_t seed,
                                 const LightParams& p = {}) {
  require_valid(img);
  Rng rng(seed);
  const double a = rng.uniform(p.a_min, p.a_max);
  const double b = rng.uniform(p.b_min, p.b_max);
  const double sigma =
      rng.uniform(p.sigma_min, p.sigma_max) * std::min(img.width, img.height);
  const double offset = rng.uniform(p.offset_min, p.offset_max);
  const double cx = rng.uniform(0.0, img.width - 1.0);
  const double cy = rng.uniform(0.0, img.height - 1.0);
  const double inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);

  FundusImage out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      const double gain =
          std::clamp(a + b * std::exp(-r2 * inv_two_sigma2), 0.2, 1.8);
      for (int c = 0; c < 3; ++c)
        out.at(x, y, c) = detail::clamp_byte(img.at(x, y, c) * gain + offset);
    }
  return out;
}

/// Normalized 1-D Gaussian of radius ceil(3σ).
inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-(i * i) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = w;
    total += w;
  }
  for (auto& w : k) w /= total;
  return k;
}

inline double draw_blur_sigma(std::uint64_t seed, const BlurParams& p = {}) {
  Rng rng(seed);
  return rng.uniform(p.sigma_min, p.sigma_max);
}

/// Separable Gaussian blur with edge-replicate padding, before quantization.
inline std::vector<double> blur_values(const FundusImage& img, double sigma) {
  require_valid(img);
  const auto kernel = gaussian_kernel(sigma);
  const int radius = static_cast<int>(kernel.size() / 2);
  std::vector<double> tmp(img.pixels.size());
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int sx = std::clamp(x + i, 0, img.width - 1);
          acc += kernel[static_cast<std::size_t>(i + radius)] * img.at(sx, y, c);
        }
        tmp[img.index(x, y, c)] = acc;
      }
  std::vector<double> out(img.pixels.size());
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int sy = std::clamp(y + i, 0, img.height - 1);
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 tmp[img.index(x, sy, c)];
        }
        out[img.index(x, y, c)] = acc;
      }
  return out;
}

inline FundusImage degrade_blur(const FundusImage& img, std::uint64_t seed,
                                const BlurParams& p = {}) {
  const auto values = blur_values(img, draw_blur_sigma(seed, p));
  FundusImage out = img;
  for (std::size_t i = 0; i < values.size(); ++i)
    out.pixels[i] = detail::clamp_byte(values[i]);
  return out;
}

/// One soft-edged elliptical blob; [x0,x1]×[y0,y1] bounds every touched pixel.
struct ArtifactBlob {
  double cx, cy;
  double radius_x, radius_y;
  double angle;
  double alpha;
  bool bright;
  int x0, y0, x1, y1;
};

inline std::vector<ArtifactBlob> plan_artifacts(int width, int height,
                                                std::uint64_t seed,
                                                const ArtifactParams& p = {}) {
  Rng rng(seed);
  const auto count = rng.uniform_int(p.count_min, p.count_max);
  const double extent = std::min(width, height);
  std::vector<ArtifactBlob> blobs;
  for (std::int64_t i = 0; i < count; ++i) {
    ArtifactBlob b{};
    b.cx = rng.uniform(0.0, width - 1.0);
    b.cy = rng.uniform(0.0, height - 1.0);
    b.radius_x = std::max(1.0, rng.uniform(p.radius_min, p.radius_max) * extent);
    b.radius_y = b.radius_x * rng.uniform(0.6, 1.0);
    b.angle = rng.uniform(0.0, std::numbers::pi);
    b.alpha = rng.uniform(0.5 * p.alpha_max, p.alpha_max);
    b.bright = rng.bernoulli(0.5);
    const double c = std::cos(b.angle), s = std::sin(b.angle);
    const double hx = std::hypot(b.radius_x * c, b.radius_y * s);
    const double hy = std::hypot(b.radius_x * s, b.radius_y * c);
    b.x0 = std::max(0, static_cast<int>(std::floor(b.cx - hx)));
    b.x1 = std::min(width - 1, static_cast<int>(std::ceil(b.cx + hx)));
    b.y0 = std::max(0, static_cast<int>(std::floor(b.cy - hy)));
    b.y1 = std::min(height - 1, static_cast<int>(std::ceil(b.cy + hy)));
    blobs.push_back(b);
  }
  return blobs;
}

/**
 * Composites dark (dust) or bright (reflection) blobs. Blob opacity falls off
 * as alpha·exp(−d²/(2·0.35²)) in the ellipse-normalized distance d and is
 * zero for d > 1.
 */
inline FundusImage degrade_artifacts(const FundusImage& img, std::uint64_t seed,
                                     const ArtifactParams& p = {}) {
  require_valid(img);
  static constexpr double kDark[3] = {28.0, 20.0, 14.0};
  static constexpr double kBright[3] = {255.0, 250.0, 236.0};
  static constexpr double kFalloff = 1.0 / (2.0 * 0.35 * 0.35);
  FundusImage out = img;
  for (const auto& b : plan_artifacts(img.width, img.height, seed, p)) {
    const double c = std::cos(b.angle), s = std::sin(b.angle);
    const double* color = b.bright ? kBright : kDark;
    for (int y = b.y0; y <= b.y1; ++y)
      for (int x = b.x0; x <= b.x1; ++x) {
        const double dx = x - b.cx, dy = y - b.cy;
        const double u = (c * dx + s * dy) / b.radius_x;
        const double v = (-s * dx + c * dy) / b.radius_y;
        const double d2 = u * u + v * v;
        if (d2 > 1.0) continue;
        const double w = b.alpha * std::exp(-d2 * kFalloff);
        for (int ch = 0; ch < 3; ++ch)
          out.at(x, y, ch) = detail::clamp_byte((1.0 - w) * out.at(x, y, ch) +
                                                w * color[ch]);
      }
  }
  return out;
}

/// Applies the enabled factors of `spec` in the order light, blur, artifacts.
inline FundusImage apply_degradation(const FundusImage& img,
                                     const DegradationSpec& spec) {
  FundusImage out = img;
  if (spec.light)
    out = degrade_light(out, derive_seed(spec.seed, 1), spec.params.light);
  if (spec.blur)
    out = degrade_blur(out, derive_seed(spec.seed, 2), spec.params.blur);
  if (spec.artifacts)
    out = degrade_artifacts(out, derive_seed(spec.seed, 3),
                            spec.params.artifacts);
  return out;
}

struct DegradedVariant {
  FundusImage image;
  int code = 0;
};

/// The eight variants of one image, codes 0..7 in ascending order.
inline std::vector<DegradedVariant> degrade_variants(
    const FundusImage& img, std::uint64_t image_seed,
    const DegradationParams& params = {}) {
  std::vector<DegradedVariant> out;
  out.reserve(8);
  for (int code = 0; code < 8; ++code) {
    auto spec = DegradationSpec::from_code(code, image_seed, params);
    DegradedVariant v{apply_degradation(img, spec), code};
    v.image.source_id = img.source_id + "#d" + std::to_string(code);
    out.push_back(std::move(v));
  }
  return out;
}

/**
 * Eight variants per input; code 0 is the untouched source. Image i uses
 * seed derive_seed(base_seed, i).
 */
inline std::vector<DegradedVariant> expand_degraded(
    const std::vector<FundusImage>& images, std::uint64_t base_seed,
    const DegradationParams& params = {}) {
  if (images.empty()) {
    throw std::invalid_argument("expand_degraded: empty image list");
  }
  std::vector<DegradedVariant> out;
  out.reserve(images.size() * 8);
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (auto& v : degrade_variants(images[i], derive_seed(base_seed, i), params))
      out.push_back(std::move(v));
  }
  return out;
}

}  // namespace drgrade
