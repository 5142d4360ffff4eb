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

// Shared fixtures for the unit tests and the acceptance runner.

#pragma once

#include <unistd.h>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cnl/graph.hpp"
#include "cnl/matrix.hpp"
#include "cnl/rng.hpp"

namespace cnl::testing {

inline Matrix RandomMatrix(size_t rows, size_t cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = scale * rng.Normal();
  return m;
}

/// Erdos-Renyi style graph. `symmetric` stores both directions of each pair;
/// `weighted` attaches weights in [0.5, 1.5).
inline GraphBundle RandomGraph(size_t n, double p, size_t d, int classes, Rng& rng,
                               bool symmetric = false, bool weighted = false) {
  std::vector<Edge> edges;
  for (NodeId u = 0; u < n; ++u) {
    for (NodeId v = symmetric ? u + 1 : 0; v < n; ++v) {
      if (u == v || !rng.Bernoulli(p)) continue;
      edges.push_back({u, v});
      if (symmetric) edges.push_back({v, u});
    }
  }
  std::vector<int> labels(n);
  for (size_t v = 0; v < n; ++v) labels[v] = static_cast<int>(rng.UniformInt(classes));
  std::optional<std::vector<double>> weights;
  if (weighted) {
    weights.emplace();
    for (size_t e = 0; e < edges.size(); ++e) weights->push_back(0.5 + rng.Uniform());
  }
  return BuildBundle(edges, RandomMatrix(n, d, rng), labels, weights, classes).bundle;
}

/// 12-node weighted symmetric graph: a ring plus random chords, 6 features,
/// 3 classes. Every node has in-edges.
inline GraphBundle Fixture12(uint64_t seed) {
  Rng rng(seed);
  const size_t n = 12;
  std::vector<Edge> edges;
  for (NodeId v = 0; v < n; ++v) {
    const NodeId u = static_cast<NodeId>((v + 1) % n);
    edges.push_back({v, u});
    edges.push_back({u, v});
  }
  for (NodeId u = 0; u < n; ++u)
    for (NodeId v = u + 2; v < n; ++v)
      if (rng.Bernoulli(0.2)) {
        edges.push_back({u, v});
        edges.push_back({v, u});
      }
  std::vector<double> weights;
  for (size_t e = 0; e < edges.size(); ++e) weights.push_back(0.5 + rng.Uniform());
  std::vector<int> labels(n);
  for (size_t v = 0; v < n; ++v) labels[v] = static_cast<int>(v % 3);
  return BuildBundle(edges, RandomMatrix(n, 6, rng), labels, weights, 3).bundle;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("cnl_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace cnl::testing
