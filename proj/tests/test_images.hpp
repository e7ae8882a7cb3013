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

// Small image fixtures shared by the test binaries.
#pragma once

#include <jpeglib.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "drgrade/image.hpp"
#include "drgrade/rng.hpp"

namespace drgrade::testing {

inline FundusImage noise_image(int w, int h, std::uint64_t seed,
                               int lo = 0, int hi = 255) {
  Rng rng(seed);
  FundusImage img(w, h, "noise" + std::to_string(seed));
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(lo, hi));
  return img;
}

inline FundusImage constant_image(int w, int h, std::uint8_t r, std::uint8_t g,
                                  std::uint8_t b) {
  FundusImage img(w, h, "constant");
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    img.pixels[i] = r;
    img.pixels[i + 1] = g;
    img.pixels[i + 2] = b;
  }
  return img;
}

inline FundusImage checkerboard(int w, int h, int cell = 1) {
  FundusImage img(w, h, "checker");
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::uint8_t v = ((x / cell + y / cell) % 2) ? 255 : 0;
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = v;
    }
  return img;
}

/// Smooth gradient with a few bright and dark features: non-constant and
/// free of black pixels.
inline FundusImage scene_image(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  FundusImage img(w, h, "scene" + std::to_string(seed));
  const double fx = rng.uniform(0.02, 0.08), fy = rng.uniform(0.02, 0.08);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double base = 120 + 60 * std::sin(fx * x) * std::cos(fy * y);
      img.at(x, y, 0) = static_cast<std::uint8_t>(std::clamp(base + 40, 1.0, 255.0));
      img.at(x, y, 1) = static_cast<std::uint8_t>(std::clamp(base, 1.0, 255.0));
      img.at(x, y, 2) = static_cast<std::uint8_t>(std::clamp(base - 50, 1.0, 255.0));
    }
  return img;
}

inline std::vector<std::uint8_t> encode_jpeg(const FundusImage& img,
                                             int quality = 95) {
  jpeg_compress_struct cinfo;
  jpeg_error_mgr jerr;
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_compress(&cinfo);
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(img.width);
  cinfo.image_height = static_cast<JDIMENSION>(img.height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(img.pixels.data() +
                                        cinfo.next_scanline * img.width * 3);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  std::vector<std::uint8_t> out(buffer, buffer + size);
  jpeg_destroy_compress(&cinfo);
  std::free(buffer);
  return out;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() /
             ("drgrade_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace drgrade::testing
