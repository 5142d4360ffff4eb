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

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <cstring>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cnl/error.hpp"
#include "cnl/matrix.hpp"

namespace cnl {

using NodeId = uint32_t;

struct Edge {
  NodeId src = 0;
  NodeId dst = 0;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

inline uint64_t EdgeKey(NodeId src, NodeId dst) {
  return (static_cast<uint64_t>(src) << 32) | dst;
}
inline uint64_t EdgeKey(const Edge& e) { return EdgeKey(e.src, e.dst); }

/// Immutable attributed graph: directed edge list, dense features, labels and
/// optional per-edge weights.
///
/// Invariants (enforced by BuildBundle): endpoints < num_nodes, no duplicate
/// (src, dst) pairs, no self-loops, one feature row and one label per node,
/// finite weights. Features and labels are shared between derived graphs, so
/// structural interventions never copy the feature matrix.
class GraphBundle {
 public:
  GraphBundle() : features_(std::make_shared<const Matrix>()),
                  labels_(std::make_shared<const std::vector<int>>()) {}

  size_t num_nodes() const { return num_nodes_; }
  size_t num_edges() const { return edges_.size(); }
  size_t feature_dim() const { return features_->cols(); }
  int class_count() const { return class_count_; }

  const std::vector<Edge>& edges() const { return edges_; }
  const Matrix& features() const { return *features_; }
  const std::vector<int>& labels() const { return *labels_; }
  bool has_weights() const { return weights_.has_value(); }
  const std::optional<std::vector<double>>& edge_weights() const { return weights_; }
  double weight(size_t e) const { return weights_ ? (*weights_)[e] : 1.0; }

  // Dense copy of the weights (1.0 when absent).
  std::vector<double> WeightsOrOnes() const {
    return weights_ ? *weights_ : std::vector<double>(edges_.size(), 1.0);
  }

  bool HasEdge(NodeId src, NodeId dst) const {
    return std::find(edges_.begin(), edges_.end(), Edge{src, dst}) != edges_.end();
  }

  // Same nodes/features/labels, new edge list. The caller guarantees the
  // edge invariants hold (the list is derived from an already valid one).
  GraphBundle WithEdges(std::vector<Edge> edges,
                        std::optional<std::vector<double>> weights) const {
    GraphBundle out = *this;
    out.edges_ = std::move(edges);
    out.weights_ = std::move(weights);
    return out;
  }

  GraphBundle WithFeatures(Matrix features) const {
    if (features.rows() != num_nodes_) {
      throw UsageError("graph-core", "feature rows " + std::to_string(features.rows()) +
                                         " != num_nodes " + std::to_string(num_nodes_));
    }
    GraphBundle out = *this;
    out.features_ = std::make_shared<const Matrix>(std::move(features));
    return out;
  }

  // Stable 64-bit FNV-1a digest over every field, used to assert that
  // read-only operations leave a graph untouched.
  uint64_t Hash() const {
    uint64_t h = 0xCBF29CE484222325ULL;
    auto mix = [&h](const void* data, size_t bytes) {
      const auto* p = static_cast<const unsigned char*>(data);
      for (size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
      }
    };
    mix(&num_nodes_, sizeof(num_nodes_));
    mix(&class_count_, sizeof(class_count_));
    for (const Edge& e : edges_) mix(&e, sizeof(e));
    mix(features_->data().data(), features_->size() * sizeof(double));
    mix(labels_->data(), labels_->size() * sizeof(int));
    if (weights_) mix(weights_->data(), weights_->size() * sizeof(double));
    return h;
  }

  friend bool operator==(const GraphBundle& a, const GraphBundle& b) {
    return a.num_nodes_ == b.num_nodes_ && a.class_count_ == b.class_count_ &&
           a.edges_ == b.edges_ && *a.features_ == *b.features_ &&
           *a.labels_ == *b.labels_ && a.weights_ == b.weights_;
  }

 private:
  friend struct BundleBuilder;

  size_t num_nodes_ = 0;
  int class_count_ = 0;
  std::vector<Edge> edges_;
  std::shared_ptr<const Matrix> features_;
  std::shared_ptr<const std::vector<int>> labels_;
  std::optional<std::vector<double>> weights_;
};

/// Community id per node, dense in [0, group_count).
struct GroupAssignment {
  std::vector<int> group_of;
  int group_count = 0;
};

struct BuildResult {
  GraphBundle bundle;
  size_t removed_duplicates = 0;
  size_t removed_self_loops = 0;
};

struct BundleBuilder {
  static GraphBundle Make(size_t num_nodes, int class_count, std::vector<Edge> edges,
                          Matrix features, std::vector<int> labels,
                          std::optional<std::vector<double>> weights) {
    GraphBundle g;
    g.num_nodes_ = num_nodes;
    g.class_count_ = class_count;
    g.edges_ = std::move(edges);
    g.features_ = std::make_shared<const Matrix>(std::move(features));
    g.labels_ = std::make_shared<const std::vector<int>>(std::move(labels));
    g.weights_ = std::move(weights);
    return g;
  }
};

/// Validates raw inputs and produces a bundle. Duplicate edges are removed
/// keeping the first occurrence; self-loops are dropped. `class_count` of 0
/// means "one more than the largest label".
inline BuildResult BuildBundle(const std::vector<Edge>& edges, Matrix features,
                               std::vector<int> labels,
                               std::optional<std::vector<double>> weights = std::nullopt,
                               int class_count = 0) {
  const size_t n = features.rows();
  if (labels.size() != n) {
    throw DataError("graph-core", "labels length " + std::to_string(labels.size()) +
                                      " != feature rows " + std::to_string(n));
  }
  if (weights && weights->size() != edges.size()) {
    throw DataError("graph-core", "edge_weights length " + std::to_string(weights->size()) +
                                      " != edge count " + std::to_string(edges.size()));
  }
  for (size_t i = 0; i < features.size(); ++i) {
    if (!std::isfinite(features[i])) {
      const size_t c = features.cols() == 0 ? 0 : features.cols();
      throw DataError("graph-core", "non-finite feature at node " + std::to_string(i / c) +
                                        ", column " + std::to_string(i % c));
    }
  }
  int max_label = -1;
  for (size_t v = 0; v < n; ++v) {
    if (labels[v] < 0) {
      throw DataError("graph-core", "negative label at node " + std::to_string(v));
    }
    max_label = std::max(max_label, labels[v]);
  }
  if (class_count == 0) class_count = max_label + 1;
  if (max_label >= class_count) {
    throw DataError("graph-core", "label " + std::to_string(max_label) +
                                      " outside class_count " + std::to_string(class_count));
  }

  BuildResult result;
  std::vector<Edge> kept;
  std::vector<double> kept_weights;
  kept.reserve(edges.size());
  std::unordered_set<uint64_t> seen;
  seen.reserve(edges.size() * 2);
  for (size_t e = 0; e < edges.size(); ++e) {
    const Edge& edge = edges[e];
    if (edge.src >= n || edge.dst >= n) {
      throw DataError("graph-core", "edge " + std::to_string(e) + " (" +
                                        std::to_string(edge.src) + "," +
                                        std::to_string(edge.dst) + ") references node >= " +
                                        std::to_string(n));
    }
    if (weights && !std::isfinite((*weights)[e])) {
      throw DataError("graph-core", "non-finite weight at edge " + std::to_string(e));
    }
    if (edge.src == edge.dst) {
      ++result.removed_self_loops;
      continue;
    }
    if (!seen.insert(EdgeKey(edge)).second) {
      ++result.removed_duplicates;
      continue;
    }
    kept.push_back(edge);
    if (weights) kept_weights.push_back((*weights)[e]);
  }
  std::optional<std::vector<double>> final_weights;
  if (weights) final_weights = std::move(kept_weights);
  result.bundle = BundleBuilder::Make(n, class_count, std::move(kept), std::move(features),
                                      std::move(labels), std::move(final_weights));
  return result;
}

/// CSR adjacency in both directions. Neighbour lists are sorted ascending.
class NeighbourIndex {
 public:
  NeighbourIndex() = default;
  explicit NeighbourIndex(const GraphBundle& g) {
    const size_t n = g.num_nodes();
    Build(n, g.edges(), /*by_src=*/true, out_offsets_, out_ids_);
    Build(n, g.edges(), /*by_src=*/false, in_offsets_, in_ids_);
  }

  size_t num_nodes() const { return out_offsets_.empty() ? 0 : out_offsets_.size() - 1; }

  std::span<const NodeId> out(NodeId v) const {
    return {out_ids_.data() + out_offsets_[v], out_offsets_[v + 1] - out_offsets_[v]};
  }
  std::span<const NodeId> in(NodeId v) const {
    return {in_ids_.data() + in_offsets_[v], in_offsets_[v + 1] - in_offsets_[v]};
  }
  size_t out_degree(NodeId v) const { return out_offsets_[v + 1] - out_offsets_[v]; }
  size_t in_degree(NodeId v) const { return in_offsets_[v + 1] - in_offsets_[v]; }

  bool Adjacent(NodeId u, NodeId v) const {
    auto o = out(u);
    if (std::binary_search(o.begin(), o.end(), v)) return true;
    auto i = in(u);
    return std::binary_search(i.begin(), i.end(), v);
  }

 private:
  static void Build(size_t n, const std::vector<Edge>& edges, bool by_src,
                    std::vector<size_t>& offsets, std::vector<NodeId>& ids) {
    offsets.assign(n + 1, 0);
    for (const Edge& e : edges) ++offsets[(by_src ? e.src : e.dst) + 1];
    for (size_t v = 0; v < n; ++v) offsets[v + 1] += offsets[v];
    ids.assign(edges.size(), 0);
    std::vector<size_t> cursor(offsets.begin(), offsets.end() - 1);
    for (const Edge& e : edges) {
      const NodeId key = by_src ? e.src : e.dst;
      ids[cursor[key]++] = by_src ? e.dst : e.src;
    }
    for (size_t v = 0; v < n; ++v) {
      std::sort(ids.begin() + static_cast<std::ptrdiff_t>(offsets[v]),
                ids.begin() + static_cast<std::ptrdiff_t>(offsets[v + 1]));
    }
  }

  std::vector<size_t> out_offsets_, in_offsets_;
  std::vector<NodeId> out_ids_, in_ids_;
};

/// Returns old ∪ {(v,u),(u,v)} for every pair, skipping edges already present.
/// New edges get weight 1.0 when the graph is weighted.
inline GraphBundle AddEdgesBidirectional(const GraphBundle& g,
                                         std::span<const std::pair<NodeId, NodeId>> pairs) {
  const size_t n = g.num_nodes();
  std::unordered_set<uint64_t> present;
  present.reserve((g.num_edges() + 2 * pairs.size()) * 2);
  for (const Edge& e : g.edges()) present.insert(EdgeKey(e));
  std::vector<Edge> edges = g.edges();
  std::optional<std::vector<double>> weights = g.edge_weights();
  auto add = [&](NodeId a, NodeId b) {
    if (present.insert(EdgeKey(a, b)).second) {
      edges.push_back({a, b});
      if (weights) weights->push_back(1.0);
    }
  };
  for (const auto& [v, u] : pairs) {
    if (v >= n || u >= n) {
      throw UsageError("graph-core", "pair (" + std::to_string(v) + "," + std::to_string(u) +
                                         ") references node >= " + std::to_string(n));
    }
    if (v == u) continue;
    add(v, u);
    add(u, v);
  }
  return g.WithEdges(std::move(edges), std::move(weights));
}

struct Subgraph {
  GraphBundle bundle;
  std::vector<NodeId> original_ids;  // new id -> old id
  std::vector<int64_t> remap;        // old id -> new id, -1 when dropped
};

/// Induced subgraph on `nodes` with contiguous ids assigned in ascending order
/// of the original ids. Edge order follows the original edge list.
inline Subgraph SubsampleNodes(const GraphBundle& g, std::span<const NodeId> nodes) {
  if (nodes.empty()) throw UsageError("graph-core", "subsample_nodes: empty node set");
  Subgraph out;
  out.remap.assign(g.num_nodes(), -1);
  std::vector<NodeId> sorted(nodes.begin(), nodes.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (NodeId v : sorted) {
    if (v >= g.num_nodes()) {
      throw UsageError("graph-core", "subsample_nodes: node " + std::to_string(v) +
                                         " out of range");
    }
  }
  out.original_ids = sorted;
  for (size_t i = 0; i < sorted.size(); ++i) out.remap[sorted[i]] = static_cast<int64_t>(i);

  const size_t d = g.feature_dim();
  Matrix features(sorted.size(), d);
  std::vector<int> labels(sorted.size());
  for (size_t i = 0; i < sorted.size(); ++i) {
    auto src = g.features().row(sorted[i]);
    std::copy(src.begin(), src.end(), features.row(i).begin());
    labels[i] = g.labels()[sorted[i]];
  }
  std::vector<Edge> edges;
  std::optional<std::vector<double>> weights;
  if (g.has_weights()) weights.emplace();
  for (size_t e = 0; e < g.num_edges(); ++e) {
    const Edge& edge = g.edges()[e];
    const int64_t s = out.remap[edge.src], t = out.remap[edge.dst];
    if (s < 0 || t < 0) continue;
    edges.push_back({static_cast<NodeId>(s), static_cast<NodeId>(t)});
    if (weights) weights->push_back(g.weight(e));
  }
  out.bundle = BundleBuilder::Make(sorted.size(), g.class_count(), std::move(edges),
                                   std::move(features), std::move(labels), std::move(weights));
  return out;
}

}  // namespace cnl
