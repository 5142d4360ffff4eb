// Copyright 2026 The CNL Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"

#include "cnl/error.hpp"

namespace cnl {

enum class F1Average { kMacro, kMicro };

inline std::string ToString(F1Average a) { return a == F1Average::kMacro ? "macro" : "micro"; }

inline F1Average ParseF1Average(const std::string& text) {
  if (text == "macro") return F1Average::kMacro;
  if (text == "micro") return F1Average::kMicro;
  throw UsageError("train-eval", "unknown f1_average '" + text + "' (macro|micro)");
}

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  size_t support = 0;  // ground-truth count
};

struct MetricReport {
  std::vector<ClassMetrics> per_class;
  // Unweighted means over the classes present in the ground truth.
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  // Single-label micro averages all equal accuracy.
  double micro_f1 = 0.0;
  double accuracy = 0.0;
  std::vector<std::vector<size_t>> confusion;  // [truth][prediction]
  size_t count = 0;

  double f1(F1Average average) const {
    return average == F1Average::kMacro ? macro_f1 : micro_f1;
  }
};

inline MetricReport MetricsFromConfusion(std::vector<std::vector<size_t>> confusion) {
  MetricReport r;
  const size_t k = confusion.size();
  r.per_class.resize(k);
  size_t correct = 0;
  for (size_t t = 0; t < k; ++t) {
    if (confusion[t].size() != k) throw UsageError("train-eval", "confusion matrix must be square");
    for (size_t p = 0; p < k; ++p) r.count += confusion[t][p];
    correct += confusion[t][t];
  }
  size_t present = 0;
  for (size_t c = 0; c < k; ++c) {
    size_t predicted = 0, actual = 0;
    for (size_t i = 0; i < k; ++i) {
      predicted += confusion[i][c];
      actual += confusion[c][i];
    }
    ClassMetrics& m = r.per_class[c];
    m.support = actual;
    const double tp = static_cast<double>(confusion[c][c]);
    m.precision = predicted ? tp / static_cast<double>(predicted) : 0.0;
    m.recall = actual ? tp / static_cast<double>(actual) : 0.0;
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                                        : 0.0;
    if (actual == 0) continue;
    ++present;
    r.macro_precision += m.precision;
    r.macro_recall += m.recall;
    r.macro_f1 += m.f1;
  }
  if (present) {
    r.macro_precision /= static_cast<double>(present);
    r.macro_recall /= static_cast<double>(present);
    r.macro_f1 /= static_cast<double>(present);
  }
  r.accuracy = r.count ? static_cast<double>(correct) / static_cast<double>(r.count) : 0.0;
  r.micro_f1 = r.accuracy;
  r.confusion = std::move(confusion);
  return r;
}

inline MetricReport ComputeMetrics(const std::vector<int>& truth, const std::vector<int>& predicted,
                                   int class_count) {
  if (truth.size() != predicted.size()) {
    throw UsageError("train-eval", "metrics: truth/prediction length mismatch");
  }
  if (truth.empty()) throw UsageError("train-eval", "metrics over an empty node mask");
  std::vector<std::vector<size_t>> confusion(class_count, std::vector<size_t>(class_count, 0));
  for (size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= class_count || predicted[i] < 0 ||
        predicted[i] >= class_count) {
      throw UsageError("train-eval", "metrics: class id out of range at position " +
                                         std::to_string(i));
    }
    ++confusion[truth[i]][predicted[i]];
  }
  return MetricsFromConfusion(std::move(confusion));
}

inline nlohmann::ordered_json ToJson(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["count"] = r.count;
  j["accuracy"] = r.accuracy;
  j["macro_precision"] = r.macro_precision;
  j["macro_recall"] = r.macro_recall;
  j["macro_f1"] = r.macro_f1;
  j["micro_f1"] = r.micro_f1;
  nlohmann::ordered_json classes = nlohmann::ordered_json::array();
  for (const ClassMetrics& m : r.per_class) {
    classes.push_back({{"precision", m.precision},
                       {"recall", m.recall},
                       {"f1", m.f1},
                       {"support", m.support}});
  }
  j["per_class"] = classes;
  j["confusion"] = r.confusion;
  return j;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for fewer than 2 values
};

inline MeanStd Summarize(const std::vector<double>& values) {
  MeanStd s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() < 2) return s;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return s;
}

}  // namespace cnl
