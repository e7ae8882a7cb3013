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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>

#include "drgrade/image.hpp"
#include "drgrade/rng.hpp"
#include "drgrade/tensor.hpp"

namespace drgrade {

inline constexpr int kModelInputSize = 128;
inline constexpr int kMinImageExtent = 16;

namespace detail {

// Pixel-center bilinear weights: output x maps to source (x + 0.5)·scale − 0.5.
struct Tap {
  int lo, hi;
  double frac;
};

inline std::vector<Tap> resize_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double scale = double(in) / double(out);
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, double(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    const int hi = std::min(lo + 1, in - 1);
    taps[static_cast<std::size_t>(i)] = {lo, hi, src - lo};
  }
  return taps;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

}  // namespace detail

/// Bilinear resample of channel values into an arbitrary grid, in [0,255].
inline std::vector<double> resize_bilinear_values(const FundusImage& img,
                                                  int out_w, int out_h) {
  require_valid(img);
  const auto tx = detail::resize_taps(img.width, out_w);
  const auto ty = detail::resize_taps(img.height, out_h);
  std::vector<double> out(static_cast<std::size_t>(out_w) *
                          static_cast<std::size_t>(out_h) * 3);
  for (int y = 0; y < out_h; ++y) {
    const auto& ry = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < out_w; ++x) {
      const auto& rx = tx[static_cast<std::size_t>(x)];
      for (int c = 0; c < 3; ++c) {
        const double top = img.at(rx.lo, ry.lo, c) * (1 - rx.frac) +
                           img.at(rx.hi, ry.lo, c) * rx.frac;
        const double bottom = img.at(rx.lo, ry.hi, c) * (1 - rx.frac) +
                              img.at(rx.hi, ry.hi, c) * rx.frac;
        out[(static_cast<std::size_t>(y) * static_cast<std::size_t>(out_w) +
             static_cast<std::size_t>(x)) *
                3 +
            static_cast<std::size_t>(c)] = top * (1 - ry.frac) + bottom * ry.frac;
      }
    }
  }
  return out;
}

inline FundusImage resize_bilinear(const FundusImage& img, int out_w,
                                   int out_h) {
  if (img.width == out_w && img.height == out_h) return img;
  auto values = resize_bilinear_values(img, out_w, out_h);
  FundusImage out(out_w, out_h, img.source_id);
  for (std::size_t i = 0; i < values.size(); ++i)
    out.pixels[i] = detail::to_byte(values[i]);
  return out;
}

/**
 * Model input: bilinear resize to size×size, channels scaled to [0,1],
 * laid out 3×size×size (CHW).
 */
inline Tensor<float> preprocess(const FundusImage& img,
                                int size = kModelInputSize) {
  require_valid(img);
  if (std::min(img.width, img.height) < kMinImageExtent) {
    throw ImageError("image '" + img.source_id + "' is degenerate: " +
                     std::to_string(img.width) + "x" +
                     std::to_string(img.height) + " (minimum extent " +
                     std::to_string(kMinImageExtent) + ")");
  }
  const auto s = static_cast<std::size_t>(size);
  Tensor<float> out({3, s, s});
  const auto values = resize_bilinear_values(img, size, size);
  for (std::size_t p = 0; p < s * s; ++p)
    for (std::size_t c = 0; c < 3; ++c)
      out[c * s * s + p] = static_cast<float>(values[p * 3 + c] / 255.0);
  return out;
}

/// Inverse of preprocess for a 3×H×W tensor: values rounded back to bytes.
inline FundusImage tensor_to_image(const Tensor<float>& chw,
                                   std::string source_id = {}) {
  if (chw.rank() != 3 || chw.dim(0) != 3) {
    throw ShapeError("tensor_to_image: expected 3xHxW, got " +
                     shape_str(chw.shape()));
  }
  const std::size_t h = chw.dim(1), w = chw.dim(2);
  FundusImage out(static_cast<int>(w), static_cast<int>(h),
                  std::move(source_id));
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t c = 0; c < 3; ++c)
      out.pixels[p * 3 + c] = detail::to_byte(chw[c * h * w + p] * 255.0);
  return out;
}

/// Random geometric augmentation ranges. A collapsed range fixes the value.
struct AugmentParams {
  double rotation_min_deg = 0.0;
  double rotation_max_deg = 360.0;
  double flip_probability = 0.5;
  double scale_min = 0.9;
  double scale_max = 1.1;
  double shift_min = -0.1;  ///< fraction of width
  double shift_max = 0.1;
};

struct AugmentDraw {
  double rotation_deg;
  bool flip;
  double scale;
  double shift_px;
};

inline AugmentDraw draw_augment(const FundusImage& img, std::uint64_t seed,
                                const AugmentParams& p = {}) {
  Rng rng(seed);
  AugmentDraw d{};
  d.rotation_deg = rng.uniform(p.rotation_min_deg, p.rotation_max_deg);
  d.flip = rng.bernoulli(p.flip_probability);
  d.scale = rng.uniform(p.scale_min, p.scale_max);
  d.shift_px = rng.uniform(p.shift_min, p.shift_max) * img.width;
  return d;
}

/**
 * Rotation about the image center, horizontal flip, uniform rescale and
 * horizontal shift, composed as out = shift(scale(rotate(flip(in)))). Each
 * output pixel samples the source bilinearly; samples landing outside the
 * source are black.
 */
inline FundusImage augment(const FundusImage& img, std::uint64_t seed,
                           const AugmentParams& params = {}) {
  require_valid(img);
  const AugmentDraw d = draw_augment(img, seed, params);
  const double cx = (img.width - 1) / 2.0;
  const double cy = (img.height - 1) / 2.0;
  const double theta = d.rotation_deg * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  constexpr double kSnap = 1e-6;

  FundusImage out(img.width, img.height, img.source_id);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      // Undo shift and scale, then rotate by -theta, then undo the flip.
      const double u = (x - cx - d.shift_px) / d.scale;
      const double v = (y - cy) / d.scale;
      double sx = cos_t * u + sin_t * v;
      double sy = -sin_t * u + cos_t * v;
      if (d.flip) sx = -sx;
      sx += cx;
      sy += cy;
      if (std::abs(sx - std::round(sx)) < kSnap) sx = std::round(sx);
      if (std::abs(sy - std::round(sy)) < kSnap) sy = std::round(sy);
      if (sx < 0 || sy < 0 || sx > img.width - 1 || sy > img.height - 1)
        continue;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const int x1 = std::min(x0 + 1, img.width - 1);
      const int y1 = std::min(y0 + 1, img.height - 1);
      const double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < 3; ++c) {
        const double top = img.at(x0, y0, c) * (1 - fx) + img.at(x1, y0, c) * fx;
        const double bottom =
            img.at(x0, y1, c) * (1 - fx) + img.at(x1, y1, c) * fx;
        out.at(x, y, c) = detail::to_byte(top * (1 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

}  // namespace drgrade
