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

// Reader for the MUSAE multi-region Twitch release. A region directory holds
//
//   *_edges.csv      header "from,to", one undirected edge per row
//   *_features.json  {"<node id>": [feature id, ...], ...}
//   *_target.csv     header containing "new_id" (or "id") and the label column
//
// Node ids found in the target file are remapped to 0..n-1 in ascending order.

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "cnl/bundle_io.hpp"
#include "cnl/error.hpp"
#include "cnl/graph.hpp"

namespace cnl {

struct MusaeOptions {
  std::string label_column = "mature";
};

namespace internal {

inline std::filesystem::path FindBySuffix(const std::filesystem::path& dir,
                                          const std::string& suffix) {
  if (!std::filesystem::is_directory(dir)) {
    throw DataError("ingest", "MUSAE directory not found: " + dir.string());
  }
  std::vector<std::filesystem::path> hits;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() >= suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      hits.push_back(entry.path());
    }
  }
  if (hits.size() != 1) {
    throw DataError("ingest", "expected exactly one *" + suffix + " in " + dir.string() +
                                  ", found " + std::to_string(hits.size()));
  }
  return hits.front();
}

inline int ParseLabel(std::string_view text, const std::string& file, size_t line) {
  if (text == "True" || text == "true") return 1;
  if (text == "False" || text == "false") return 0;
  return ParseNumber<int>(text, file, line);
}

}  // namespace internal

/// Parses a MUSAE region directory into a symmetrized bundle with multi-hot
/// features over the global feature-id vocabulary.
inline GraphBundle ParseMusae(const std::filesystem::path& dir, const MusaeOptions& options = {}) {
  using internal::SplitCsv;
  const auto target_path = internal::FindBySuffix(dir, "_target.csv");
  const auto edges_path = internal::FindBySuffix(dir, "_edges.csv");
  const auto features_path = internal::FindBySuffix(dir, "_features.json");

  // Targets define the node set.
  const std::string target_file = target_path.string();
  const auto target_lines = internal::ReadLines(target_path);
  if (target_lines.empty()) throw DataError("ingest", target_file + ": missing header");
  const auto header = SplitCsv(target_lines[0]);
  auto column = [&](std::string_view name) -> long {
    for (size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<long>(i);
    return -1;
  };
  long id_col = column("new_id");
  if (id_col < 0) id_col = column("id");
  const long label_col = column(options.label_column);
  if (id_col < 0 || label_col < 0) {
    throw DataError("ingest", target_file + ": header needs new_id/id and '" +
                                  options.label_column + "' columns");
  }
  std::map<long, int> raw_labels;
  for (size_t i = 1; i < target_lines.size(); ++i) {
    if (target_lines[i].empty()) continue;
    const auto f = SplitCsv(target_lines[i]);
    if (f.size() != header.size()) {
      throw DataError("ingest", "malformed row at " + internal::Where(target_file, i + 1));
    }
    const long id = internal::ParseNumber<long>(f[id_col], target_file, i + 1);
    if (!raw_labels.emplace(id, internal::ParseLabel(f[label_col], target_file, i + 1)).second) {
      throw DataError("ingest", "repeated node id at " + internal::Where(target_file, i + 1));
    }
  }
  std::unordered_map<long, NodeId> remap;
  std::vector<int> labels;
  for (const auto& [id, label] : raw_labels) {
    remap.emplace(id, static_cast<NodeId>(labels.size()));
    labels.push_back(label);
  }
  const size_t n = labels.size();

  nlohmann::json feature_json;
  {
    std::ifstream in(features_path);
    if (!in) throw DataError("ingest", "missing file " + features_path.string());
    try {
      in >> feature_json;
    } catch (const nlohmann::json::exception& e) {
      throw DataError("ingest", features_path.string() + ": " + e.what());
    }
  }
  std::vector<std::vector<long>> feature_ids(n);
  std::vector<bool> has_features(n, false);
  long vocab = 0;
  for (const auto& [key, ids] : feature_json.items()) {
    long raw_id = 0;
    try {
      raw_id = std::stol(key);
    } catch (const std::exception&) {
      throw DataError("ingest", features_path.string() + ": non-integer key '" + key + "'");
    }
    const auto it = remap.find(raw_id);
    if (it == remap.end()) continue;
    has_features[it->second] = true;
    for (const auto& fid : ids) {
      const long f = fid.get<long>();
      if (f < 0) throw DataError("ingest", "negative feature id for node " + key);
      feature_ids[it->second].push_back(f);
      vocab = std::max(vocab, f + 1);
    }
  }

  const std::string edges_file = edges_path.string();
  const auto edge_lines = internal::ReadLines(edges_path);
  if (edge_lines.empty()) throw DataError("ingest", edges_file + ": missing header");
  std::vector<Edge> edges;
  for (size_t i = 1; i < edge_lines.size(); ++i) {
    if (edge_lines[i].empty()) continue;
    const auto f = SplitCsv(edge_lines[i]);
    if (f.size() != 2) {
      throw DataError("ingest", "malformed row at " + internal::Where(edges_file, i + 1));
    }
    const long a = internal::ParseNumber<long>(f[0], edges_file, i + 1);
    const long b = internal::ParseNumber<long>(f[1], edges_file, i + 1);
    for (long v : {a, b}) {
      if (!remap.count(v)) {
        throw DataError("ingest", "node " + std::to_string(v) + " at " +
                                      internal::Where(edges_file, i + 1) +
                                      " has no entry in the target file");
      }
      if (!has_features[remap[v]]) {
        throw DataError("ingest", "node " + std::to_string(v) + " at " +
                                      internal::Where(edges_file, i + 1) +
                                      " has no entry in the features file");
      }
    }
    edges.push_back({remap[a], remap[b]});
    edges.push_back({remap[b], remap[a]});
  }

  Matrix features(n, static_cast<size_t>(vocab));
  for (size_t v = 0; v < n; ++v)
    for (long f : feature_ids[v]) features(v, static_cast<size_t>(f)) = 1.0;

  int class_count = 0;
  for (int l : labels) class_count = std::max(class_count, l + 1);
  return BuildBundle(edges, std::move(features), std::move(labels), std::nullopt,
                     std::max(class_count, 2))
      .bundle;
}

}  // namespace cnl
