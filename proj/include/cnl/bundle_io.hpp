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

// Graph bundle directory format:
//
//   edges.csv     src,dst[,weight]      one directed edge per row
//   features.csv  node_id,f0,...,f{d-1}
//   labels.csv    node_id,label
//   meta.json     num_nodes, num_edges, feature_dim, class_count, directed, source
//
// Floats are written with 17 significant digits so a write/load round trip
// is exact.

#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "cnl/error.hpp"
#include "cnl/graph.hpp"

namespace cnl {

struct BundleMeta {
  bool directed = false;
  std::string source = "unknown";
};

inline std::string FormatDouble(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace internal {

inline std::vector<std::string_view> SplitCsv(std::string_view line) {
  std::vector<std::string_view> fields;
  size_t start = 0;
  while (true) {
    const size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  for (auto& f : fields) {
    while (!f.empty() && (f.back() == '\r' || f.back() == ' ')) f.remove_suffix(1);
    while (!f.empty() && f.front() == ' ') f.remove_prefix(1);
  }
  return fields;
}

inline std::string Where(const std::string& file, size_t line) {
  return file + ":" + std::to_string(line);
}

template <typename T>
T ParseNumber(std::string_view text, const std::string& file, size_t line) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw DataError("ingest", "malformed number '" + std::string(text) + "' at " +
                                  Where(file, line));
  }
  return value;
}

inline std::vector<std::string> ReadLines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("ingest", "missing file " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace internal

inline void WriteBundle(const GraphBundle& g, const std::filesystem::path& dir,
                        const BundleMeta& meta = {}) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "edges.csv");
    out << (g.has_weights() ? "src,dst,weight\n" : "src,dst\n");
    for (size_t e = 0; e < g.num_edges(); ++e) {
      out << g.edges()[e].src << ',' << g.edges()[e].dst;
      if (g.has_weights()) out << ',' << FormatDouble(g.weight(e));
      out << '\n';
    }
  }
  {
    std::ofstream out(dir / "features.csv");
    out << "node_id";
    for (size_t c = 0; c < g.feature_dim(); ++c) out << ",f" << c;
    out << '\n';
    for (size_t v = 0; v < g.num_nodes(); ++v) {
      out << v;
      for (double x : g.features().row(v)) out << ',' << FormatDouble(x);
      out << '\n';
    }
  }
  {
    std::ofstream out(dir / "labels.csv");
    out << "node_id,label\n";
    for (size_t v = 0; v < g.num_nodes(); ++v) out << v << ',' << g.labels()[v] << '\n';
  }
  nlohmann::ordered_json j;
  j["num_nodes"] = g.num_nodes();
  j["num_edges"] = g.num_edges();
  j["feature_dim"] = g.feature_dim();
  j["class_count"] = g.class_count();
  j["directed"] = meta.directed;
  j["source"] = meta.source;
  std::ofstream(dir / "meta.json") << j.dump(2) << '\n';
}

/// Loads and validates a bundle directory; meta.json counts are cross-checked
/// against the CSV contents.
inline GraphBundle LoadBundle(const std::filesystem::path& dir, BundleMeta* meta_out = nullptr) {
  using internal::ParseNumber;
  using internal::SplitCsv;
  using internal::Where;
  if (!std::filesystem::is_directory(dir)) {
    throw DataError("ingest", "bundle directory not found: " + dir.string());
  }
  nlohmann::json meta;
  {
    std::ifstream in(dir / "meta.json");
    if (!in) throw DataError("ingest", "missing file " + (dir / "meta.json").string());
    try {
      in >> meta;
    } catch (const nlohmann::json::exception& e) {
      throw DataError("ingest", "meta.json: " + std::string(e.what()));
    }
  }
  size_t num_nodes = 0, num_edges = 0, feature_dim = 0;
  int class_count = 0;
  try {
    num_nodes = meta.at("num_nodes").get<size_t>();
    num_edges = meta.at("num_edges").get<size_t>();
    feature_dim = meta.at("feature_dim").get<size_t>();
    class_count = meta.at("class_count").get<int>();
    if (meta_out) {
      meta_out->directed = meta.value("directed", false);
      meta_out->source = meta.value("source", std::string("unknown"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("ingest", "meta.json: " + std::string(e.what()));
  }

  const std::string edges_file = (dir / "edges.csv").string();
  const auto edge_lines = internal::ReadLines(dir / "edges.csv");
  if (edge_lines.empty()) throw DataError("ingest", edges_file + ": missing header");
  const auto header = SplitCsv(edge_lines[0]);
  const bool weighted = header.size() == 3 && header[2] == "weight";
  if (!(header.size() >= 2 && header[0] == "src" && header[1] == "dst") ||
      (header.size() == 3 && !weighted) || header.size() > 3) {
    throw DataError("ingest", edges_file + ": header must be src,dst[,weight]");
  }
  std::vector<Edge> edges;
  std::optional<std::vector<double>> weights;
  if (weighted) weights.emplace();
  for (size_t i = 1; i < edge_lines.size(); ++i) {
    if (edge_lines[i].empty()) continue;
    const auto f = SplitCsv(edge_lines[i]);
    if (f.size() != header.size()) {
      throw DataError("ingest", "malformed row at " + Where(edges_file, i + 1));
    }
    edges.push_back({ParseNumber<NodeId>(f[0], edges_file, i + 1),
                     ParseNumber<NodeId>(f[1], edges_file, i + 1)});
    if (weighted) weights->push_back(ParseNumber<double>(f[2], edges_file, i + 1));
  }
  if (edges.size() != num_edges) {
    throw DataError("ingest", "count mismatch: meta.json says " + std::to_string(num_edges) +
                                  " edges, edges.csv has " + std::to_string(edges.size()));
  }

  const std::string feat_file = (dir / "features.csv").string();
  const auto feat_lines = internal::ReadLines(dir / "features.csv");
  if (feat_lines.empty()) throw DataError("ingest", feat_file + ": missing header");
  if (SplitCsv(feat_lines[0]).size() != feature_dim + 1) {
    throw DataError("ingest", "count mismatch: meta.json feature_dim " +
                                  std::to_string(feature_dim) + " vs features.csv header");
  }
  Matrix features(num_nodes, feature_dim);
  std::vector<bool> seen(num_nodes, false);
  size_t rows = 0;
  for (size_t i = 1; i < feat_lines.size(); ++i) {
    if (feat_lines[i].empty()) continue;
    const auto f = SplitCsv(feat_lines[i]);
    if (f.size() != feature_dim + 1) {
      throw DataError("ingest", "malformed row at " + Where(feat_file, i + 1));
    }
    const auto v = ParseNumber<size_t>(f[0], feat_file, i + 1);
    if (v >= num_nodes || seen[v]) {
      throw DataError("ingest", "bad or repeated node_id at " + Where(feat_file, i + 1));
    }
    seen[v] = true;
    ++rows;
    for (size_t c = 0; c < feature_dim; ++c)
      features(v, c) = ParseNumber<double>(f[c + 1], feat_file, i + 1);
  }
  if (rows != num_nodes) {
    throw DataError("ingest", "count mismatch: meta.json says " + std::to_string(num_nodes) +
                                  " nodes, features.csv has " + std::to_string(rows));
  }

  const std::string label_file = (dir / "labels.csv").string();
  const auto label_lines = internal::ReadLines(dir / "labels.csv");
  std::vector<int> labels(num_nodes, -1);
  size_t label_rows = 0;
  for (size_t i = 1; i < label_lines.size(); ++i) {
    if (label_lines[i].empty()) continue;
    const auto f = SplitCsv(label_lines[i]);
    if (f.size() != 2) throw DataError("ingest", "malformed row at " + Where(label_file, i + 1));
    const auto v = ParseNumber<size_t>(f[0], label_file, i + 1);
    if (v >= num_nodes || labels[v] != -1) {
      throw DataError("ingest", "bad or repeated node_id at " + Where(label_file, i + 1));
    }
    labels[v] = ParseNumber<int>(f[1], label_file, i + 1);
    ++label_rows;
  }
  if (label_rows != num_nodes) {
    throw DataError("ingest", "count mismatch: meta.json says " + std::to_string(num_nodes) +
                                  " nodes, labels.csv has " + std::to_string(label_rows));
  }

  BuildResult built = BuildBundle(edges, std::move(features), std::move(labels),
                                  std::move(weights), class_count);
  if (built.removed_duplicates + built.removed_self_loops != 0) {
    throw DataError("ingest", edges_file + " contains " +
                                  std::to_string(built.removed_duplicates) + " duplicate and " +
                                  std::to_string(built.removed_self_loops) + " self-loop rows");
  }
  return std::move(built.bundle);
}

}  // namespace cnl
