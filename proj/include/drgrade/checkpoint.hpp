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
 * @brief Checkpoint files.
 *
 * Layout, all integers little-endian:
 *
 *     offset 0   "DRCKPT"                 6 bytes
 *     offset 6   format version           u16
 *     offset 8   header length L          u32
 *     offset 12  JSON header              L bytes, UTF-8
 *     offset 12+L tensor data             float32 LE, concatenated
 *
 * Header:
 *
 *     {"format_version": 1,
 *      "config": {...ModelConfig...},
 *      "tensors": [{"name": str, "shape": [..], "offset": bytes, "length": bytes}, ...],
 *      "training": {"epochs": int, "final_loss": number|null}}
 *
 * Tensor offsets are relative to the start of the data section and must
 * appear in the network's parameter order without gaps.
 */
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drgrade/model.hpp"
#include "json.hpp"

namespace drgrade {

inline constexpr char kCheckpointMagic[6] = {'D', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, version_mismatch, truncated, bad_header, shape_mismatch };

  CheckpointError(Kind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  Kind kind() const { return kind_; }

  /// Stable machine-readable name of kind().
  const char* code() const {
    switch (kind_) {
      case Kind::io: return "io";
      case Kind::bad_magic: return "bad_magic";
      case Kind::version_mismatch: return "version_mismatch";
      case Kind::truncated: return "truncated";
      case Kind::bad_header: return "bad_header";
      case Kind::shape_mismatch: return "shape_mismatch";
    }
    return "unknown";
  }

 private:
  Kind kind_;
};

struct TrainingMetadata {
  std::size_t epochs = 0;
  std::optional<double> final_loss;

  bool operator==(const TrainingMetadata&) const = default;
};

struct Checkpoint {
  Model model;
  TrainingMetadata training;
  std::uint16_t format_version = kCheckpointVersion;
};

namespace detail {

static_assert(std::numeric_limits<float>::is_iec559);

inline void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t get_le(std::span<const std::uint8_t> in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t{in[at + static_cast<std::size_t>(i)]} << (8 * i);
  return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Model& model,
                                                   const TrainingMetadata& training = {}) {
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& p : model.parameters()) {
    const std::size_t length = p.value.size() * 4;
    tensors.push_back({{"name", p.name}, {"shape", p.value.shape()},
                       {"offset", offset}, {"length", length}});
    offset += length;
  }
  nlohmann::json header = {
      {"format_version", kCheckpointVersion},
      {"config", model.config()},
      {"tensors", tensors},
      {"training",
       {{"epochs", training.epochs},
        {"final_loss", training.final_loss ? nlohmann::json(*training.final_loss)
                                           : nlohmann::json(nullptr)}}}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  detail::put_le(out, kCheckpointVersion, 2);
  detail::put_le(out, text.size(), 4);
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const auto& p : model.parameters())
    for (float v : p.value.data()) detail::put_le(out, std::bit_cast<std::uint32_t>(v), 4);
  return out;
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  using Kind = CheckpointError::Kind;
  if (bytes.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw CheckpointError(Kind::bad_magic, "not a checkpoint: missing DRCKPT magic");
  }
  if (bytes.size() < 12) {
    throw CheckpointError(Kind::truncated, "checkpoint truncated inside the preamble (" +
                                               std::to_string(bytes.size()) + " bytes)");
  }
  const auto version = static_cast<std::uint16_t>(detail::get_le(bytes, 6, 2));
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::version_mismatch,
                          "checkpoint format version " + std::to_string(version) +
                              " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
  }
  const std::size_t header_len = detail::get_le(bytes, 8, 4);
  if (bytes.size() < 12 + header_len) {
    throw CheckpointError(Kind::truncated, "checkpoint truncated inside the header (" +
                                               std::to_string(bytes.size() - 12) + " of " +
                                               std::to_string(header_len) + " bytes)");
  }
  const auto data = bytes.subspan(12 + header_len);

  Checkpoint ckpt;
  ckpt.format_version = version;
  std::vector<std::pair<std::string, Shape>> declared;
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  ModelConfig config;
  try {
    const auto header = nlohmann::json::parse(bytes.begin() + 12,
                                              bytes.begin() + 12 + static_cast<long>(header_len));
    if (header.at("format_version").get<int>() != version) {
      throw CheckpointError(Kind::bad_header, "header format_version disagrees with preamble");
    }
    config = header.at("config").get<ModelConfig>();
    for (const auto& t : header.at("tensors")) {
      declared.emplace_back(t.at("name").get<std::string>(), t.at("shape").get<Shape>());
      ranges.emplace_back(t.at("offset").get<std::size_t>(), t.at("length").get<std::size_t>());
    }
    const auto& tr = header.at("training");
    ckpt.training.epochs = tr.at("epochs").get<std::size_t>();
    if (!tr.at("final_loss").is_null()) ckpt.training.final_loss = tr.at("final_loss").get<double>();
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(Kind::bad_header, std::string("checkpoint header: ") + e.what());
  }

  try {
    ckpt.model = Model(config);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(Kind::bad_header, std::string("checkpoint config: ") + e.what());
  }
  auto& params = ckpt.model.parameters();
  if (declared.size() != params.size()) {
    throw CheckpointError(Kind::shape_mismatch,
                          "checkpoint lists " + std::to_string(declared.size()) +
                              " tensors but its config needs " + std::to_string(params.size()));
  }
  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, shape] = declared[i];
    auto& p = params[i];
    if (name != p.name || shape != p.value.shape()) {
      throw CheckpointError(Kind::shape_mismatch,
                            "tensor " + std::to_string(i) + " is '" + name + "' " +
                                shape_str(shape) + " but the config expects '" + p.name +
                                "' " + shape_str(p.value.shape()));
    }
    const auto [offset, length] = ranges[i];
    if (offset != expected_offset || length != p.value.size() * 4) {
      throw CheckpointError(Kind::shape_mismatch,
                            "tensor '" + name + "' has byte range [" + std::to_string(offset) +
                                ", +" + std::to_string(length) + ") but shape " +
                                shape_str(shape) + " needs [" + std::to_string(expected_offset) +
                                ", +" + std::to_string(p.value.size() * 4) + ")");
    }
    if (data.size() < offset + length) {
      throw CheckpointError(Kind::truncated,
                            "checkpoint truncated inside tensor '" + name + "' (" +
                                std::to_string(data.size()) + " data bytes, need " +
                                std::to_string(offset + length) + ")");
    }
    auto values = p.value.data();
    for (std::size_t k = 0; k < values.size(); ++k)
      values[k] = std::bit_cast<float>(
          static_cast<std::uint32_t>(detail::get_le(data, offset + 4 * k, 4)));
    expected_offset += length;
  }
  if (data.size() != expected_offset) {
    throw CheckpointError(Kind::bad_header, "checkpoint has " +
                                                std::to_string(data.size() - expected_offset) +
                                                " unexpected trailing bytes");
  }
  return ckpt;
}

inline void save_checkpoint(const Model& model, const std::filesystem::path& path,
                            const TrainingMetadata& training = {}) {
  const auto bytes = encode_checkpoint(model, training);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot write '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::io, "cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes(std::istreambuf_iterator<char>(in), {});
  return decode_checkpoint(bytes);
}

}  // namespace drgrade
