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
 * @brief RGB fundus rasters, severity grades and the PNG/JPEG codecs.
 */
#pragma once

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace drgrade {

/// Raised for unreadable, undecodable or degenerate images.
class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ordinal severity 0 (no DR) .. 4 (proliferative DR).
class GradeLabel {
 public:
  static constexpr int kCount = 5;

  constexpr GradeLabel() = default;
  explicit GradeLabel(int value) : value_(value) {
    if (value < 0 || value >= kCount) {
      throw std::out_of_range("grade label must be in [0,4], got " +
                              std::to_string(value));
    }
  }

  constexpr int value() const { return value_; }
  constexpr auto operator<=>(const GradeLabel&) const = default;

  std::string_view name() const {
    static constexpr std::array<std::string_view, kCount> kNames = {
        "No DR", "Mild DR", "Moderate DR", "Severe DR", "Proliferative DR"};
    return kNames[static_cast<std::size_t>(value_)];
  }

 private:
  int value_ = 0;
};

/// 8-bit RGB raster, row-major, interleaved.
struct FundusImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
  std::string source_id;

  FundusImage() = default;
  FundusImage(int w, int h, std::string id = {})
      : width(w),
        height(h),
        pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3,
               0),
        source_id(std::move(id)) {}

  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
            static_cast<std::size_t>(x)) *
               3 +
           static_cast<std::size_t>(c);
  }
  std::uint8_t& at(int x, int y, int c) { return pixels[index(x, y, c)]; }
  std::uint8_t at(int x, int y, int c) const { return pixels[index(x, y, c)]; }

  bool valid() const {
    return width > 0 && height > 0 &&
           pixels.size() == static_cast<std::size_t>(width) *
                                static_cast<std::size_t>(height) * 3;
  }

  /// Pixel equality; provenance is ignored.
  bool same_pixels(const FundusImage& other) const {
    return width == other.width && height == other.height &&
           pixels == other.pixels;
  }
};

inline void require_valid(const FundusImage& img) {
  if (!img.valid()) {
    throw ImageError("invalid image '" + img.source_id + "': " +
                     std::to_string(img.width) + "x" +
                     std::to_string(img.height) + " with " +
                     std::to_string(img.pixels.size()) + " bytes");
  }
}

namespace detail {

inline bool is_png(std::span<const std::uint8_t> b) {
  static constexpr std::uint8_t kSig[8] = {0x89, 'P',  'N',  'G',
                                           0x0D, 0x0A, 0x1A, 0x0A};
  return b.size() >= 8 && std::equal(kSig, kSig + 8, b.begin());
}

inline bool is_jpeg(std::span<const std::uint8_t> b) {
  return b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF;
}

inline FundusImage decode_png(std::span<const std::uint8_t> bytes,
                              std::string source_id) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw ImageError("cannot decode PNG '" + source_id + "': " +
                     image.message);
  }
  image.format = PNG_FORMAT_RGB;
  if (image.width == 0 || image.height == 0 || image.width > 1u << 15 ||
      image.height > 1u << 15) {
    png_image_free(&image);
    throw ImageError("PNG '" + source_id + "' has unsupported dimensions");
  }
  FundusImage img(static_cast<int>(image.width),
                  static_cast<int>(image.height), std::move(source_id));
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw ImageError("cannot decode PNG '" + img.source_id + "': " + msg);
  }
  return img;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

inline void jpeg_silent(j_common_ptr) {}

// Kept free of C++ objects with destructors between setjmp and longjmp.
inline bool decode_jpeg_raw(std::span<const std::uint8_t> bytes,
                            std::vector<std::uint8_t>& out, int& width,
                            int& height, char* message) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  err.base.output_message = jpeg_silent;
  if (setjmp(err.jump)) {
    std::snprintf(message, JMSG_LENGTH_MAX, "%s", err.message);
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  width = static_cast<int>(cinfo.output_width);
  height = static_cast<int>(cinfo.output_height);
  out.resize(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) *
             3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.data() + static_cast<std::size_t>(cinfo.output_scanline) *
                                    static_cast<std::size_t>(width) * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

inline FundusImage decode_jpeg(std::span<const std::uint8_t> bytes,
                               std::string source_id) {
  FundusImage img;
  char message[JMSG_LENGTH_MAX] = {0};
  if (!decode_jpeg_raw(bytes, img.pixels, img.width, img.height, message)) {
    throw ImageError("cannot decode JPEG '" + source_id + "': " + message);
  }
  img.source_id = std::move(source_id);
  if (!img.valid()) throw ImageError("JPEG '" + img.source_id + "' is empty");
  return img;
}

}  // namespace detail

/// Decodes PNG or JPEG bytes (sniffed by signature) into RGB.
inline FundusImage decode_image(std::span<const std::uint8_t> bytes,
                                std::string source_id = {}) {
  if (detail::is_png(bytes)) return detail::decode_png(bytes, std::move(source_id));
  if (detail::is_jpeg(bytes)) return detail::decode_jpeg(bytes, std::move(source_id));
  throw ImageError("'" + source_id + "' is neither PNG nor JPEG");
}

inline std::vector<std::uint8_t> read_file_bytes(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline FundusImage load_image(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  return decode_image(bytes, path.string());
}

inline std::vector<std::uint8_t> encode_png(const FundusImage& img) {
  require_valid(img);
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.pixels.data(),
                                 0, nullptr)) {
    throw ImageError(std::string("PNG size query failed: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0,
                                 img.pixels.data(), 0, nullptr)) {
    throw ImageError(std::string("PNG encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

inline void save_png(const FundusImage& img, const std::filesystem::path& path) {
  auto bytes = encode_png(img);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageError("cannot write '" + path.string() + "'");
}

/// ITU-R BT.601 luma, replicated into three channels.
inline FundusImage to_grayscale(const FundusImage& img) {
  require_valid(img);
  FundusImage out = img;
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    const double y = 0.299 * img.pixels[i] + 0.587 * img.pixels[i + 1] +
                     0.114 * img.pixels[i + 2];
    const auto v = static_cast<std::uint8_t>(std::lround(y));
    out.pixels[i] = out.pixels[i + 1] = out.pixels[i + 2] = v;
  }
  return out;
}

}  // namespace drgrade
