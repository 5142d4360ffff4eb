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

// Run outputs: metrics.json, epochs.csv, sweep.csv, shift.csv and SVG line
// charts. Nothing here records wall-clock time, so reports of identical runs
// are byte-identical.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cnl/bundle_io.hpp"
#include "cnl/config.hpp"
#include "cnl/error.hpp"
#include "cnl/metrics.hpp"
#include "cnl/train.hpp"

namespace cnl {

using OrderedJson = nlohmann::ordered_json;

inline void WriteText(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("report", "cannot write " + path.string());
  out << text;
}

inline void WriteJson(const std::filesystem::path& path, const OrderedJson& j) {
  WriteText(path, j.dump(2) + "\n");
}

inline OrderedJson ToJson(const LossReport& r) {
  return {{"total", r.total},
          {"classification", r.classification},
          {"contrastive", r.contrastive},
          {"orthogonality", r.orthogonality},
          {"mutual_info", r.mutual_info}};
}

inline OrderedJson ToJson(const TrainResult& t) {
  OrderedJson j;
  j["epochs_run"] = t.log.size();
  j["best_epoch"] = t.best_epoch;
  j["stopped_early"] = t.stopped_early;
  if (!t.log.empty()) j["final_loss"] = ToJson(t.log.back().loss);
  return j;
}

inline OrderedJson ToJson(const CvResult& cv) {
  OrderedJson j;
  j["f1_average"] = ToString(cv.average);
  j["f1_mean"] = cv.f1.mean;
  j["f1_std"] = cv.f1.std;
  OrderedJson folds = OrderedJson::array();
  for (const FoldResult& f : cv.folds) {
    OrderedJson fj;
    fj["fold"] = f.fold + 1;
    fj["test_nodes"] = f.test_nodes.size();
    fj["test"] = ToJson(f.test);
    fj["train"] = ToJson(f.train);
    folds.push_back(fj);
  }
  j["folds"] = folds;
  if (!cv.warnings.empty()) j["warnings"] = cv.warnings;
  return j;
}

inline std::string FormatMetric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

/// epoch,<loss terms>,val_f1,val_loss; `fold` column when given.
inline std::string EpochsCsv(const std::vector<std::pair<int, const TrainResult*>>& runs) {
  std::ostringstream out;
  const bool with_fold = runs.size() > 1 || (runs.size() == 1 && runs[0].first >= 0);
  if (with_fold) out << "fold,";
  out << "epoch,total,classification,contrastive,orthogonality,mutual_info,val_f1,val_loss\n";
  for (const auto& [fold, run] : runs) {
    for (const EpochRecord& e : run->log) {
      if (with_fold) out << fold << ',';
      out << e.epoch << ',' << FormatDouble(e.loss.total) << ','
          << FormatDouble(e.loss.classification) << ',' << FormatDouble(e.loss.contrastive) << ','
          << FormatDouble(e.loss.orthogonality) << ',' << FormatDouble(e.loss.mutual_info) << ','
          << FormatDouble(e.val_f1) << ',' << FormatDouble(e.val_loss) << '\n';
    }
  }
  return out.str();
}

inline std::string SweepCsv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "tau,f1_mean,f1_std,delta_vs_0.1\n";
  for (const SweepRow& r : rows) {
    out << FormatDouble(r.tau) << ',' << FormatDouble(r.f1.mean) << ',' << FormatDouble(r.f1.std)
        << ',' << FormatDouble(r.delta) << '\n';
  }
  return out.str();
}

/// Macro precision/recall/F1 per domain.
inline std::string ShiftCsv(const std::vector<DomainResult>& domains) {
  std::ostringstream out;
  out << "domain,precision,recall,f1\n";
  for (const DomainResult& d : domains) {
    out << d.name << ',' << FormatDouble(d.report.macro_precision) << ','
        << FormatDouble(d.report.macro_recall) << ',' << FormatDouble(d.report.macro_f1) << '\n';
  }
  return out.str();
}

struct ChartSeries {
  std::string name;
  std::vector<double> y;
};

namespace internal {

inline std::string XmlEscape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string Num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace internal

/// Standalone SVG line chart; one polyline per series over shared x labels.
inline std::string LineChartSvg(const std::string& title, const std::string& x_title,
                                const std::string& y_title,
                                const std::vector<std::string>& x_labels,
                                const std::vector<ChartSeries>& series) {
  using internal::Num;
  using internal::XmlEscape;
  const double width = 640, height = 400, left = 70, right = 150, top = 40, bottom = 60;
  const double plot_w = width - left - right, plot_h = height - top - bottom;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const ChartSeries& s : series) {
    for (double v : s.y) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-9) lo -= 0.5, hi += 0.5;
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  const size_t n = x_labels.size();
  auto x_at = [&](size_t i) { return left + (n <= 1 ? plot_w / 2 : plot_w * i / (n - 1.0)); };
  auto y_at = [&](double v) { return top + plot_h * (1.0 - (v - lo) / (hi - lo)); };
  static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                  "#8c564b"};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << Num(width) << "\" height=\""
      << Num(height) << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << Num(width / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << XmlEscape(title) << "</text>\n";
  svg << "<line x1=\"" << Num(left) << "\" y1=\"" << Num(top + plot_h) << "\" x2=\""
      << Num(left + plot_w) << "\" y2=\"" << Num(top + plot_h) << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << Num(left) << "\" y1=\"" << Num(top) << "\" x2=\"" << Num(left)
      << "\" y2=\"" << Num(top + plot_h) << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    svg << "<text x=\"" << Num(left - 6) << "\" y=\"" << Num(y_at(v) + 4)
        << "\" text-anchor=\"end\">" << FormatMetric(v).substr(0, 6) << "</text>\n";
    svg << "<line x1=\"" << Num(left) << "\" y1=\"" << Num(y_at(v)) << "\" x2=\""
        << Num(left + plot_w) << "\" y2=\"" << Num(y_at(v)) << "\" stroke=\"#dddddd\"/>\n";
  }
  for (size_t i = 0; i < n; ++i) {
    svg << "<text x=\"" << Num(x_at(i)) << "\" y=\"" << Num(top + plot_h + 18)
        << "\" text-anchor=\"middle\">" << XmlEscape(x_labels[i]) << "</text>\n";
  }
  svg << "<text x=\"" << Num(left + plot_w / 2) << "\" y=\"" << Num(height - 16)
      << "\" text-anchor=\"middle\">" << XmlEscape(x_title) << "</text>\n";
  svg << "<text transform=\"translate(18," << Num(top + plot_h / 2)
      << ") rotate(-90)\" text-anchor=\"middle\">" << XmlEscape(y_title) << "</text>\n";
  for (size_t s = 0; s < series.size(); ++s) {
    const char* colour = colours[s % 6];
    std::ostringstream points;
    for (size_t i = 0; i < std::min(n, series[s].y.size()); ++i) {
      if (!std::isfinite(series[s].y[i])) continue;
      points << Num(x_at(i)) << ',' << Num(y_at(series[s].y[i])) << ' ';
      svg << "<circle cx=\"" << Num(x_at(i)) << "\" cy=\"" << Num(y_at(series[s].y[i]))
          << "\" r=\"3\" fill=\"" << colour << "\"/>\n";
    }
    svg << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\""
        << points.str() << "\"/>\n";
    const double ly = top + 10 + 18.0 * static_cast<double>(s);
    svg << "<line x1=\"" << Num(left + plot_w + 12) << "\" y1=\"" << Num(ly) << "\" x2=\""
        << Num(left + plot_w + 32) << "\" y2=\"" << Num(ly) << "\" stroke=\"" << colour
        << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << Num(left + plot_w + 36) << "\" y=\"" << Num(ly + 4) << "\">"
        << XmlEscape(series[s].name) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

inline std::string SweepSvg(const std::vector<SweepRow>& rows) {
  std::vector<std::string> x;
  ChartSeries delta{"delta F1", {}};
  for (const SweepRow& r : rows) {
    x.push_back(internal::FormatReal(r.tau));
    delta.y.push_back(r.delta);
  }
  return LineChartSvg("F1 change vs edge drop rate", "edge drop rate (tau)", "delta F1 vs tau=0.1",
                      x, {delta});
}

inline std::string ShiftSvg(const std::vector<DomainResult>& domains) {
  std::vector<std::string> x;
  ChartSeries p{"precision", {}}, r{"recall", {}}, f{"F1", {}};
  for (const DomainResult& d : domains) {
    x.push_back(d.name);
    p.y.push_back(d.report.macro_precision);
    r.y.push_back(d.report.macro_recall);
    f.y.push_back(d.report.macro_f1);
  }
  return LineChartSvg("Scores per domain", "domain", "macro score", x, {p, r, f});
}

}  // namespace cnl
