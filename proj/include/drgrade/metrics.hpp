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
 * @brief Classification metrics and the evaluation report.
 *
 * Per-class rates are one-vs-rest. A rate whose denominator is zero is
 * undefined (std::nullopt) and is left out of macro averages; the classes
 * left out are listed in the report.
 *
 * Report table layout (one data row, numbers with 4 decimals, "undefined"
 * when a value cannot be computed):
 *
 *     Model | Precision | Recall | AUC    | Overall Accuracy
 *     ------+-----------+--------+--------+-----------------
 *     m1    |    0.5000 | 0.5000 | 0.7500 |           0.5000
 *     # precision, recall: macro over grades; AUC: macro one-vs-rest; undefined: ...
 *
 * Every column is as wide as the wider of its header and its value; the
 * model column is left-aligned, numeric columns right-aligned.
 */
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "drgrade/image.hpp"
#include "drgrade/manifest.hpp"
#include "drgrade/model.hpp"
#include "json.hpp"

namespace drgrade {

inline constexpr std::size_t kGrades = GradeLabel::kCount;

struct ConfusionMatrix {
  /// counts[true][predicted]
  std::array<std::array<std::uint64_t, kGrades>, kGrades> counts{};

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& row : counts)
      for (auto v : row) t += v;
    return t;
  }
  std::uint64_t trace() const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < kGrades; ++i) t += counts[i][i];
    return t;
  }
  std::uint64_t tp(std::size_t c) const { return counts.at(c)[c]; }
  std::uint64_t fn(std::size_t c) const {
    std::uint64_t s = 0;
    for (std::size_t p = 0; p < kGrades; ++p) s += p == c ? 0 : counts.at(c)[p];
    return s;
  }
  std::uint64_t fp(std::size_t c) const {
    std::uint64_t s = 0;
    for (std::size_t t = 0; t < kGrades; ++t) s += t == c ? 0 : counts[t].at(c);
    return s;
  }
  std::uint64_t tn(std::size_t c) const { return total() - tp(c) - fn(c) - fp(c); }

  bool operator==(const ConfusionMatrix&) const = default;
};

using LabelPair = std::pair<GradeLabel, GradeLabel>;  ///< (true, predicted)

inline ConfusionMatrix confusion(std::span<const LabelPair> pairs) {
  if (pairs.empty()) throw std::invalid_argument("confusion: no samples");
  ConfusionMatrix cm;
  for (const auto& [t, p] : pairs)
    ++cm.counts[static_cast<std::size_t>(t.value())][static_cast<std::size_t>(p.value())];
  return cm;
}

namespace detail {

inline std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

inline void check_class(std::size_t c) {
  if (c >= kGrades) throw std::out_of_range("class " + std::to_string(c) + " out of range");
}

}  // namespace detail

/// TP / (TP + FN).
inline std::optional<double> sensitivity(const ConfusionMatrix& cm, std::size_t c) {
  detail::check_class(c);
  return detail::ratio(cm.tp(c), cm.tp(c) + cm.fn(c));
}

/// TN / (TN + FP).
inline std::optional<double> specificity(const ConfusionMatrix& cm, std::size_t c) {
  detail::check_class(c);
  return detail::ratio(cm.tn(c), cm.tn(c) + cm.fp(c));
}

/// TP / (TP + FP).
inline std::optional<double> precision(const ConfusionMatrix& cm, std::size_t c) {
  detail::check_class(c);
  return detail::ratio(cm.tp(c), cm.tp(c) + cm.fp(c));
}

/// trace / total.
inline double accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw std::invalid_argument("accuracy: empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

/// Mean of the defined entries with the indices of the undefined ones.
struct MacroAverage {
  std::optional<double> value;
  std::vector<std::size_t> undefined;
};

inline MacroAverage macro_mean(const std::array<std::optional<double>, kGrades>& per_class) {
  MacroAverage out;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < kGrades; ++c) {
    if (per_class[c]) {
      sum += *per_class[c];
      ++n;
    } else {
      out.undefined.push_back(c);
    }
  }
  if (n) out.value = sum / static_cast<double>(n);
  return out;
}

struct MacroPrecisionRecall {
  MacroAverage precision;
  MacroAverage recall;
};

inline MacroPrecisionRecall macro_precision_recall(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw std::invalid_argument("macro_precision_recall: empty matrix");
  std::array<std::optional<double>, kGrades> p{}, r{};
  for (std::size_t c = 0; c < kGrades; ++c) {
    p[c] = precision(cm, c);
    r[c] = sensitivity(cm, c);
  }
  return {macro_mean(p), macro_mean(r)};
}

/**
 * Binary AUC from ranks (Mann-Whitney U with average ranks for ties):
 * P(score_pos > score_neg) + P(tie)/2. nullopt without both classes.
 */
inline std::optional<double> binary_auc(std::span<const double> scores,
                                        std::span<const bool> positive) {
  if (scores.size() != positive.size()) throw std::invalid_argument("binary_auc: size mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::uint64_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (positive[order[k]]) {
        pos_rank_sum += avg_rank;
        ++pos;
      }
    i = j;
  }
  const std::uint64_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  const double p = static_cast<double>(pos);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

struct ScoredSample {
  GradeLabel truth;
  std::array<double, kGrades> probabilities{};
};

struct AucResult {
  std::array<std::optional<double>, kGrades> per_class{};
  MacroAverage macro;  ///< undefined lists the excluded classes
};

/// Macro one-vs-rest AUC using each class probability as its score.
inline AucResult auc_ovr(std::span<const ScoredSample> samples) {
  std::array<bool, kGrades> seen{};
  for (const auto& s : samples) seen[static_cast<std::size_t>(s.truth.value())] = true;
  if (std::count(seen.begin(), seen.end(), true) < 2) {
    throw std::invalid_argument("auc_ovr: needs at least 2 distinct true classes");
  }
  AucResult out;
  std::vector<double> scores(samples.size());
  std::unique_ptr<bool[]> positive(new bool[samples.size()]);
  for (std::size_t c = 0; c < kGrades; ++c) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      scores[i] = samples[i].probabilities[c];
      positive[i] = static_cast<std::size_t>(samples[i].truth.value()) == c;
    }
    out.per_class[c] = binary_auc(scores, {positive.get(), samples.size()});
  }
  out.macro = macro_mean(out.per_class);
  return out;
}

struct ClassMetrics {
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::optional<double> sensitivity, specificity, precision, auc;
};

struct MetricReport {
  std::string model;
  std::uint64_t samples = 0;
  ConfusionMatrix confusion;
  std::array<ClassMetrics, kGrades> per_class;
  MacroAverage macro_precision;
  MacroAverage macro_recall;
  MacroAverage auc;
  double accuracy = 0.0;
};

/// Report from scored samples; the predicted grade is argmax (ties low).
inline MetricReport make_report(std::span<const ScoredSample> samples, std::string model_name) {
  std::vector<LabelPair> pairs;
  pairs.reserve(samples.size());
  for (const auto& s : samples)
    pairs.emplace_back(s.truth, GradeLabel(static_cast<int>(argmax_lowest(s.probabilities))));
  MetricReport r;
  r.model = std::move(model_name);
  r.confusion = confusion(pairs);
  r.samples = r.confusion.total();
  const auto pr = macro_precision_recall(r.confusion);
  r.macro_precision = pr.precision;
  r.macro_recall = pr.recall;
  r.accuracy = accuracy(r.confusion);
  const auto auc = auc_ovr(samples);
  r.auc = auc.macro;
  for (std::size_t c = 0; c < kGrades; ++c) {
    auto& m = r.per_class[c];
    m.tp = r.confusion.tp(c);
    m.tn = r.confusion.tn(c);
    m.fp = r.confusion.fp(c);
    m.fn = r.confusion.fn(c);
    m.sensitivity = sensitivity(r.confusion, c);
    m.specificity = specificity(r.confusion, c);
    m.precision = precision(r.confusion, c);
    m.auc = auc.per_class[c];
  }
  return r;
}

/// Prediction function used by evaluate(): image to result.
using Predictor = std::function<PredictionResult(const FundusImage&)>;

/**
 * Predicts every manifest entry and builds the report. Decode and model
 * errors are rethrown as std::runtime_error naming the entry.
 */
inline MetricReport evaluate(const DatasetManifest& manifest, const Predictor& predictor,
                             std::string model_name) {
  if (manifest.empty()) throw std::invalid_argument("evaluate: empty manifest");
  std::vector<ScoredSample> samples;
  samples.reserve(manifest.size());
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& e = manifest.entries[i];
    const auto path = manifest.resolve(e);
    try {
      samples.push_back({e.label, predictor(load_image(path)).probabilities});
    } catch (const std::exception& err) {
      throw std::runtime_error("sample " + std::to_string(i) + " '" + path.string() +
                               "': " + err.what());
    }
  }
  return make_report(samples, std::move(model_name));
}

inline MetricReport evaluate(const DatasetManifest& manifest, const Model& model,
                             std::string model_name) {
  return evaluate(
      manifest, [&](const FundusImage& img) { return predict(model, img); },
      std::move(model_name));
}

// -- output -------------------------------------------------------------------

namespace detail {

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline std::string fixed4(const std::optional<double>& v) {
  if (!v) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

inline std::string join_indices(const std::vector<std::size_t>& v) {
  if (v.empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace detail

inline nlohmann::json report_to_json(const MetricReport& r) {
  using detail::optional_json;
  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t c = 0; c < kGrades; ++c) {
    const auto& m = r.per_class[c];
    per_class.push_back({{"grade", c},
                         {"name", GradeLabel(static_cast<int>(c)).name()},
                         {"tp", m.tp},
                         {"tn", m.tn},
                         {"fp", m.fp},
                         {"fn", m.fn},
                         {"sensitivity", optional_json(m.sensitivity)},
                         {"specificity", optional_json(m.specificity)},
                         {"precision", optional_json(m.precision)},
                         {"auc", optional_json(m.auc)}});
  }
  nlohmann::json confusion = nlohmann::json::array();
  for (const auto& row : r.confusion.counts) confusion.push_back(row);
  return {{"model", r.model},
          {"samples", r.samples},
          {"precision", optional_json(r.macro_precision.value)},
          {"recall", optional_json(r.macro_recall.value)},
          {"auc", optional_json(r.auc.value)},
          {"accuracy", r.accuracy},
          {"averaging", {{"precision", "macro"}, {"recall", "macro"}, {"auc", "macro one-vs-rest"}}},
          {"undefined",
           {{"precision", r.macro_precision.undefined},
            {"recall", r.macro_recall.undefined},
            {"auc", r.auc.undefined}}},
          {"per_class", per_class},
          {"confusion", confusion}};
}

/// Aligned plain-text table; see the file comment for the layout.
inline std::string report_table(const MetricReport& r) {
  const std::array<std::string, 5> header = {"Model", "Precision", "Recall", "AUC",
                                             "Overall Accuracy"};
  const std::array<std::string, 5> row = {r.model, detail::fixed4(r.macro_precision.value),
                                          detail::fixed4(r.macro_recall.value),
                                          detail::fixed4(r.auc.value), detail::fixed4(r.accuracy)};
  std::array<std::size_t, 5> width{};
  for (std::size_t i = 0; i < 5; ++i) width[i] = std::max(header[i].size(), row[i].size());

  auto line = [&](const std::array<std::string, 5>& cells) {
    std::string s;
    for (std::size_t i = 0; i < 5; ++i) {
      const std::string pad(width[i] - cells[i].size(), ' ');
      if (i) s += " | ";
      s += i == 0 ? cells[i] + (i + 1 < 5 ? pad : "") : pad + cells[i];
    }
    return s + "\n";
  };
  std::string out = line(header);
  for (std::size_t i = 0; i < 5; ++i) {
    if (i) out += "-+-";
    out += std::string(width[i], '-');
  }
  out += "\n" + line(row);
  out += "# precision, recall: macro over grades; AUC: macro one-vs-rest; undefined: precision " +
         detail::join_indices(r.macro_precision.undefined) + ", recall " +
         detail::join_indices(r.macro_recall.undefined) + ", auc " +
         detail::join_indices(r.auc.undefined) + "\n";
  return out;
}

}  // namespace drgrade
