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
 * @brief Dataset manifests: CSV `path,label,origin,degradation_code`.
 *
 * Paths are stored relative to the directory holding the manifest file
 * (layout `<root>/<origin>/<filename>`). In memory a manifest keeps its root
 * so entries from several manifests can be merged and written elsewhere.
 */
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "drgrade/image.hpp"
#include "drgrade/rng.hpp"

namespace drgrade {

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// build_balanced could not reach the requested count for some grade.
class InsufficientEntriesError : public ManifestError {
 public:
  InsufficientEntriesError(int label, std::size_t available,
                           std::size_t requested)
      : ManifestError("label " + std::to_string(label) + " has " +
                      std::to_string(available) + " entries, " +
                      std::to_string(requested) + " requested (shortfall " +
                      std::to_string(requested - available) + ")"),
        label_(label),
        shortfall_(requested - available) {}

  int label() const { return label_; }
  std::size_t shortfall() const { return shortfall_; }

 private:
  int label_;
  std::size_t shortfall_;
};

struct ManifestEntry {
  std::string path;
  GradeLabel label;
  std::string origin;
  int degradation_code = 0;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;

  std::array<std::size_t, GradeLabel::kCount> counts() const {
    std::array<std::size_t, GradeLabel::kCount> out{};
    for (const auto& e : entries) ++out[static_cast<std::size_t>(e.label.value())];
    return out;
  }

  std::filesystem::path resolve(const ManifestEntry& e) const {
    std::filesystem::path p(e.path);
    return p.is_absolute() || root.empty() ? p : root / p;
  }

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

inline constexpr const char* kManifestHeader = "path,label,origin,degradation_code";

namespace detail {

inline std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> csv_split(const std::string& line,
                                          std::size_t line_no) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  if (quoted) {
    throw ManifestError("manifest line " + std::to_string(line_no) +
                        ": unterminated quote");
  }
  return fields;
}

inline int parse_int_field(const std::string& s, const char* what,
                           std::size_t line_no) {
  try {
    std::size_t used = 0;
    int v = std::stoi(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ManifestError("manifest line " + std::to_string(line_no) + ": bad " +
                      what + " '" + s + "'");
}

}  // namespace detail

inline DatasetManifest parse_manifest(std::istream& in,
                                      std::filesystem::path root = {}) {
  DatasetManifest m;
  m.root = std::move(root);
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kManifestHeader) {
        throw ManifestError("manifest header must be '" +
                            std::string(kManifestHeader) + "', got '" + line +
                            "'");
      }
      header_seen = true;
      continue;
    }
    auto f = detail::csv_split(line, line_no);
    if (f.size() != 4) {
      throw ManifestError("manifest line " + std::to_string(line_no) +
                          ": expected 4 fields, got " +
                          std::to_string(f.size()));
    }
    ManifestEntry e;
    e.path = f[0];
    const int label = detail::parse_int_field(f[1], "label", line_no);
    if (label < 0 || label >= GradeLabel::kCount) {
      throw ManifestError("manifest line " + std::to_string(line_no) +
                          ": label " + f[1] + " outside [0,4]");
    }
    e.label = GradeLabel(label);
    e.origin = f[2];
    e.degradation_code = detail::parse_int_field(f[3], "degradation_code", line_no);
    if (e.degradation_code < 0 || e.degradation_code > 7) {
      throw ManifestError("manifest line " + std::to_string(line_no) +
                          ": degradation_code " + f[3] + " outside [0,7]");
    }
    m.entries.push_back(std::move(e));
  }
  if (!header_seen) throw ManifestError("empty manifest");
  return m;
}

inline DatasetManifest read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ManifestError("cannot open manifest '" + file.string() + "'");
  return parse_manifest(in, file.parent_path());
}

/// Serializes with every path made relative to `root`.
inline std::string format_manifest(const DatasetManifest& m,
                                   const std::filesystem::path& root) {
  const auto base = std::filesystem::absolute(root.empty() ? "." : root)
                        .lexically_normal();
  std::ostringstream out;
  out << kManifestHeader << '\n';
  for (const auto& e : m.entries) {
    const auto p = std::filesystem::absolute(m.resolve(e))
                       .lexically_normal()
                       .lexically_relative(base);
    out << detail::csv_quote(p.generic_string()) << ',' << e.label.value()
        << ',' << detail::csv_quote(e.origin) << ',' << e.degradation_code
        << '\n';
  }
  return out.str();
}

inline void write_manifest(const DatasetManifest& m,
                           const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  out << format_manifest(m, file.parent_path());
  if (!out) throw ManifestError("cannot write manifest '" + file.string() + "'");
}

/// Decodes every referenced image; throws ManifestError naming the first bad one.
inline void validate_manifest(const DatasetManifest& m) {
  for (const auto& e : m.entries) {
    try {
      load_image(m.resolve(e));
    } catch (const ImageError& err) {
      throw ManifestError("manifest entry '" + e.path + "': " + err.what());
    }
  }
}

/**
 * Uniform sample without replacement of exactly `per_label` entries of each
 * grade from the union of `manifests`. Output paths are resolved (root is
 * empty) and entries are grouped by grade in sampled order.
 */
inline DatasetManifest build_balanced(const std::vector<DatasetManifest>& manifests,
                                      std::size_t per_label, std::uint64_t seed) {
  if (per_label == 0) throw ManifestError("per_label must be positive");
  std::array<std::vector<ManifestEntry>, GradeLabel::kCount> pool;
  for (const auto& m : manifests)
    for (const auto& e : m.entries) {
      ManifestEntry r = e;
      r.path = m.resolve(e).string();
      pool[static_cast<std::size_t>(e.label.value())].push_back(std::move(r));
    }
  for (int label = 0; label < GradeLabel::kCount; ++label) {
    const auto have = pool[static_cast<std::size_t>(label)].size();
    if (have < per_label) throw InsufficientEntriesError(label, have, per_label);
  }
  DatasetManifest out;
  for (int label = 0; label < GradeLabel::kCount; ++label) {
    auto& cand = pool[static_cast<std::size_t>(label)];
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(label)));
    // Partial Fisher-Yates: the first per_label slots are the sample.
    for (std::size_t i = 0; i < per_label; ++i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(
          static_cast<std::int64_t>(i), static_cast<std::int64_t>(cand.size() - 1)));
      std::swap(cand[i], cand[j]);
      out.entries.push_back(cand[i]);
    }
  }
  return out;
}

}  // namespace drgrade
