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

// Structural interventions on a GraphBundle.
//
//  * Counterfactual neighbourhoods: every node is wired bi-directionally to k
//    sampled non-neighbours (random, most similar or most dissimilar by cosine
//    similarity of the raw feature rows).
//  * Edge perturbation: inter-group edges are dropped with a fixed
//    probability (one draw per unordered pair), then the edges with the lowest
//    learned importance are masked out, then edge weights receive Gaussian
//    noise.
//
// All operations are pure: inputs are never modified and every random choice
// comes from the Rng passed in.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cnl/error.hpp"
#include "cnl/graph.hpp"
#include "cnl/rng.hpp"

namespace cnl {

enum class CngStrategy { kRandom, kSimilar, kDissimilar };

inline std::string ToString(CngStrategy s) {
  switch (s) {
    case CngStrategy::kRandom: return "random";
    case CngStrategy::kSimilar: return "similar";
    default: return "dissimilar";
  }
}

inline CngStrategy ParseCngStrategy(const std::string& text) {
  if (text == "random") return CngStrategy::kRandom;
  if (text == "similar") return CngStrategy::kSimilar;
  if (text == "dissimilar") return CngStrategy::kDissimilar;
  throw UsageError("intervention", "unknown CNG strategy '" + text +
                                       "' (expected random|similar|dissimilar)");
}

struct CngConfig {
  CngStrategy strategy = CngStrategy::kDissimilar;
  size_t k = 5;
  size_t candidate_pool = 15;
};

struct PerturbConfig {
  double inter_group_drop_prob = 0.3;
  double mask_drop_rate = 0.1;
  double edge_noise_sigma = 0.1;
};

/// Per-edge importance, index-aligned with a graph's edge list.
struct EdgeScores {
  std::vector<double> raw;         // logits
  std::vector<double> normalized;  // softmax within each target's in-edges

  size_t size() const { return raw.size(); }

  EdgeScores Select(const std::vector<size_t>& edge_ids) const {
    EdgeScores out;
    out.raw.reserve(edge_ids.size());
    out.normalized.reserve(edge_ids.size());
    for (size_t e : edge_ids) {
      out.raw.push_back(raw[e]);
      out.normalized.push_back(normalized[e]);
    }
    return out;
  }
};

/// A derived graph together with the indices (into the parent's edge list)
/// of the edges it kept.
struct EdgeSubset {
  GraphBundle bundle;
  std::vector<size_t> kept;
};

using NeighbourMap = std::vector<std::vector<NodeId>>;

/// Cosine similarity of feature rows; zero-norm rows are similar to nothing
/// (similarity 0). Uses a sparse row representation when it pays off, since
/// bag-of-words features are mostly zeros.
class FeatureSimilarity {
 public:
  explicit FeatureSimilarity(const Matrix& features) : features_(features) {
    const size_t n = features.rows(), d = features.cols();
    norms_.resize(n);
    size_t nnz = 0;
    for (size_t v = 0; v < n; ++v) {
      double s = 0.0;
      for (double x : features.row(v)) {
        s += x * x;
        nnz += x != 0.0;
      }
      norms_[v] = std::sqrt(s);
    }
    sparse_ = d > 0 && nnz * 4 < n * d;
    if (sparse_) {
      nonzeros_.resize(n);
      for (size_t v = 0; v < n; ++v) {
        auto row = features.row(v);
        for (size_t c = 0; c < d; ++c)
          if (row[c] != 0.0) nonzeros_[v].push_back({c, row[c]});
      }
    }
  }

  // Similarities of v to every node (entry v itself is meaningless).
  std::vector<double> RowAgainstAll(size_t v) const {
    const size_t n = features_.rows();
    std::vector<double> sims(n, 0.0);
    if (norms_[v] == 0.0) return sims;
    auto fv = features_.row(v);
    for (size_t u = 0; u < n; ++u) {
      if (norms_[u] == 0.0) continue;
      double dot = 0.0;
      if (sparse_) {
        for (const auto& [c, x] : nonzeros_[u]) dot += x * fv[c];
      } else {
        auto fu = features_.row(u);
        for (size_t c = 0; c < fu.size(); ++c) dot += fu[c] * fv[c];
      }
      sims[u] = dot / (norms_[u] * norms_[v]);
    }
    return sims;
  }

  double operator()(size_t a, size_t b) const {
    if (norms_[a] == 0.0 || norms_[b] == 0.0) return 0.0;
    double dot = 0.0;
    auto fa = features_.row(a), fb = features_.row(b);
    for (size_t c = 0; c < fa.size(); ++c) dot += fa[c] * fb[c];
    return dot / (norms_[a] * norms_[b]);
  }

 private:
  const Matrix& features_;
  std::vector<double> norms_;
  bool sparse_ = false;
  std::vector<std::vector<std::pair<size_t, double>>> nonzeros_;
};

/// Samples counterfactual neighbour sets. The similarity-ranked candidate
/// pools depend only on raw features and structure, so they are computed once
/// at construction; Sample() then draws k nodes uniformly from each pool.
///
/// Ranking tie-break: lower node id first.
class CounterfactualSampler {
 public:
  CounterfactualSampler(const GraphBundle& g, const NeighbourIndex& index, const CngConfig& cfg)
      : cfg_(cfg), num_nodes_(g.num_nodes()) {
    if (cfg.candidate_pool < cfg.k) {
      throw UsageError("intervention", "candidate_pool (" + std::to_string(cfg.candidate_pool) +
                                           ") must be >= k (" + std::to_string(cfg.k) + ")");
    }
    pools_.resize(num_nodes_);
    if (cfg.k == 0) return;
    std::optional<FeatureSimilarity> similarity;
    if (cfg.strategy != CngStrategy::kRandom) similarity.emplace(g.features());
    std::vector<char> excluded(num_nodes_, 0);
    for (NodeId v = 0; v < num_nodes_; ++v) {
      excluded[v] = 1;
      for (NodeId u : index.out(v)) excluded[u] = 1;
      for (NodeId u : index.in(v)) excluded[u] = 1;
      std::vector<NodeId> candidates;
      for (NodeId u = 0; u < num_nodes_; ++u)
        if (!excluded[u]) candidates.push_back(u);
      excluded[v] = 0;
      for (NodeId u : index.out(v)) excluded[u] = 0;
      for (NodeId u : index.in(v)) excluded[u] = 0;

      if (cfg.strategy != CngStrategy::kRandom) {
        const std::vector<double> sims = similarity->RowAgainstAll(v);
        const bool ascending = cfg.strategy == CngStrategy::kDissimilar;
        auto better = [&](NodeId a, NodeId b) {
          if (sims[a] != sims[b]) return ascending ? sims[a] < sims[b] : sims[a] > sims[b];
          return a < b;
        };
        const size_t keep = std::min(cfg.candidate_pool, candidates.size());
        std::partial_sort(candidates.begin(), candidates.begin() + static_cast<long>(keep),
                          candidates.end(), better);
        candidates.resize(keep);
      }
      pools_[v] = std::move(candidates);
    }
  }

  // 𝒩_c(v) for every v, each sorted ascending. Node v draws from rng.Stream(v).
  NeighbourMap Sample(const Rng& rng) const {
    NeighbourMap out(num_nodes_);
    if (cfg_.k == 0) return out;
    for (NodeId v = 0; v < num_nodes_; ++v) {
      std::vector<NodeId> pool = pools_[v];
      const size_t take = std::min(cfg_.k, pool.size());
      Rng node_rng = rng.Stream(static_cast<uint64_t>(v));
      // Partial Fisher-Yates: first `take` slots become a uniform sample.
      for (size_t i = 0; i < take; ++i) {
        const size_t j = i + static_cast<size_t>(node_rng.UniformInt(pool.size() - i));
        std::swap(pool[i], pool[j]);
      }
      pool.resize(take);
      std::sort(pool.begin(), pool.end());
      out[v] = std::move(pool);
    }
    return out;
  }

  const std::vector<NodeId>& pool(NodeId v) const { return pools_[v]; }

 private:
  CngConfig cfg_;
  size_t num_nodes_;
  std::vector<std::vector<NodeId>> pools_;
};

inline NeighbourMap SampleCounterfactualNeighbours(const GraphBundle& g,
                                                   const NeighbourIndex& index,
                                                   const CngConfig& cfg, const Rng& rng) {
  return CounterfactualSampler(g, index, cfg).Sample(rng);
}

/// G + sum over v, u in N_c(v) of {(v,u), (u,v)}; existing pairs are skipped.
inline GraphBundle BuildCounterfactualGraph(const GraphBundle& g, const NeighbourMap& map) {
  if (map.size() > g.num_nodes()) {
    throw UsageError("intervention", "neighbour map has more keys than nodes");
  }
  std::vector<std::pair<NodeId, NodeId>> pairs;
  for (NodeId v = 0; v < map.size(); ++v)
    for (NodeId u : map[v]) pairs.emplace_back(v, u);
  return AddEdgesBidirectional(g, pairs);
}

namespace internal {

inline GroupAssignment Densify(const std::vector<int>& raw) {
  GroupAssignment out;
  std::unordered_map<int, int> ids;
  out.group_of.resize(raw.size());
  for (size_t v = 0; v < raw.size(); ++v) {
    auto [it, inserted] = ids.emplace(raw[v], static_cast<int>(ids.size()));
    out.group_of[v] = it->second;
  }
  out.group_count = static_cast<int>(ids.size());
  return out;
}

}  // namespace internal

namespace internal {

// Weighted undirected graph used by the community detector.
struct WeightedGraph {
  std::vector<std::vector<std::pair<int, double>>> adj;  // no self entries
  std::vector<double> self_loop;                         // weight of (v,v)
  double total = 0.0;                                    // 2m

  size_t size() const { return adj.size(); }
  double Degree(size_t v) const {
    double d = 2.0 * self_loop[v];
    for (const auto& [u, w] : adj[v]) d += w;
    return d;
  }
};

// One local-moving phase: nodes are visited in id order and each joins the
// neighbouring community with the largest modularity gain (strictly better
// than staying; among equal gains the smallest community id wins).
// Starts from `community` (community ids must be < g.size()).
inline std::vector<int> LocalMoving(const WeightedGraph& g, std::vector<int> community,
                                    int max_sweeps, bool& changed) {
  const size_t n = g.size();
  std::vector<double> degree(n), tot(n, 0.0);
  for (size_t v = 0; v < n; ++v) {
    degree[v] = g.Degree(v);
    tot[community[v]] += degree[v];
  }
  changed = false;
  if (g.total <= 0.0) return community;
  std::map<int, double> links;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool moved = false;
    for (size_t v = 0; v < n; ++v) {
      links.clear();
      for (const auto& [u, w] : g.adj[v]) links[community[u]] += w;
      const int own = community[v];
      tot[own] -= degree[v];
      auto gain = [&](int c) {
        const auto it = links.find(c);
        const double w = it == links.end() ? 0.0 : it->second;
        return w - tot[c] * degree[v] / g.total;
      };
      int best = own;
      double best_gain = gain(own);
      for (const auto& [c, w] : links) {
        const double candidate = gain(c);
        if (candidate > best_gain + 1e-12) {
          best_gain = candidate;
          best = c;
        }
      }
      tot[best] += degree[v];
      if (best != own) {
        community[v] = best;
        moved = true;
        changed = true;
      }
    }
    if (!moved) break;
  }
  return community;
}

}  // namespace internal

/// Training-free community detection by modularity-driven label propagation
/// (deterministic local moving plus aggregation, as in the Louvain method;
/// at most 50 sweeps per level), followed by merging down to
/// `group_count_hint` groups.
///
/// Merging: while there are more groups than the hint, the smallest group
/// (ties: lowest id) joins the neighbouring group it shares the most edges
/// with (ties: lowest id). A group with no outside edges (isolated nodes,
/// separate components) joins the largest group instead. A hint <= 0
/// disables merging.
inline GroupAssignment DetectGroups(const GraphBundle& g, int group_count_hint) {
  const size_t n = g.num_nodes();
  if (n == 0) throw UsageError("intervention", "detect_groups: empty graph");

  // Undirected view: an unordered pair counts once, whatever its direction(s).
  internal::WeightedGraph level;
  level.adj.resize(n);
  level.self_loop.assign(n, 0.0);
  {
    std::unordered_set<uint64_t> seen;
    for (const Edge& e : g.edges()) {
      const NodeId a = std::min(e.src, e.dst), b = std::max(e.src, e.dst);
      if (!seen.insert(EdgeKey(a, b)).second) continue;
      level.adj[a].push_back({static_cast<int>(b), 1.0});
      level.adj[b].push_back({static_cast<int>(a), 1.0});
      level.total += 2.0;
    }
    for (auto& list : level.adj) std::sort(list.begin(), list.end());
  }

  const internal::WeightedGraph base = level;
  std::vector<int> label(n);
  std::iota(label.begin(), label.end(), 0);
  for (int depth = 0; depth < 32; ++depth) {
    bool changed = false;
    std::vector<int> singletons(level.size());
    std::iota(singletons.begin(), singletons.end(), 0);
    const std::vector<int> community = internal::LocalMoving(level, singletons, 50, changed);
    if (!changed) break;
    const GroupAssignment dense = internal::Densify(community);
    for (int& l : label) l = dense.group_of[l];
    // Aggregate communities into super-nodes.
    internal::WeightedGraph next;
    const size_t k = static_cast<size_t>(dense.group_count);
    next.adj.resize(k);
    next.self_loop.assign(k, 0.0);
    next.total = level.total;
    std::vector<std::map<int, double>> acc(k);
    for (size_t v = 0; v < level.size(); ++v) {
      const int cv = dense.group_of[v];
      next.self_loop[cv] += level.self_loop[v];
      for (const auto& [u, w] : level.adj[v]) {
        const int cu = dense.group_of[u];
        if (cu == cv) {
          next.self_loop[cv] += 0.5 * w;  // each internal pair is seen twice
        } else {
          acc[cv][cu] += w;
        }
      }
    }
    for (size_t c = 0; c < k; ++c) next.adj[c].assign(acc[c].begin(), acc[c].end());
    level = std::move(next);
  }

  GroupAssignment groups = internal::Densify(label);
  if (group_count_hint <= 0) return groups;

  while (groups.group_count > group_count_hint) {
    const int k = groups.group_count;
    std::vector<size_t> size(k, 0);
    for (int gid : groups.group_of) ++size[gid];
    // links[a][b] = number of edges between groups a and b.
    std::vector<std::map<int, size_t>> links(k);
    for (const Edge& e : g.edges()) {
      const int a = groups.group_of[e.src], b = groups.group_of[e.dst];
      if (a != b) {
        ++links[a][b];
        ++links[b][a];
      }
    }
    int victim = 0, target = -1;
    for (int gid = 1; gid < k; ++gid)
      if (size[gid] < size[victim]) victim = gid;
    if (!links[victim].empty()) {
      size_t best = 0;
      for (const auto& [other, count] : links[victim]) {
        if (count > best) {
          best = count;
          target = other;
        }
      }
    } else {
      for (int gid = 0; gid < k; ++gid) {
        if (gid == victim) continue;
        if (target < 0 || size[gid] > size[target]) target = gid;
      }
    }
    std::vector<int> merged = groups.group_of;
    for (int& gid : merged)
      if (gid == victim) gid = target;
    groups = internal::Densify(merged);
  }
  // Node-level refinement of the merged partition; groups may only shrink.
  bool refined = false;
  groups = internal::Densify(internal::LocalMoving(base, groups.group_of, 50, refined));
  return groups;
}

/// Drops each inter-group edge with probability `drop_prob`; (u,v) and (v,u)
/// share one draw. Intra-group edges are always kept.
inline EdgeSubset PerturbGroupAware(const GraphBundle& g, const GroupAssignment& groups,
                                    double drop_prob, Rng& rng) {
  if (groups.group_of.size() != g.num_nodes()) {
    throw UsageError("intervention", "group assignment does not cover all nodes");
  }
  if (!(drop_prob >= 0.0 && drop_prob <= 1.0)) {
    throw UsageError("intervention", "inter_group_drop_prob must lie in [0,1]");
  }
  EdgeSubset out;
  std::unordered_map<uint64_t, bool> decision;
  std::vector<Edge> edges;
  std::optional<std::vector<double>> weights;
  if (g.has_weights()) weights.emplace();
  for (size_t e = 0; e < g.num_edges(); ++e) {
    const Edge& edge = g.edges()[e];
    bool keep = true;
    if (groups.group_of[edge.src] != groups.group_of[edge.dst]) {
      const uint64_t key = EdgeKey(std::min(edge.src, edge.dst), std::max(edge.src, edge.dst));
      auto it = decision.find(key);
      if (it == decision.end()) it = decision.emplace(key, !(rng.Uniform() < drop_prob)).first;
      keep = it->second;
    }
    if (!keep) continue;
    out.kept.push_back(e);
    edges.push_back(edge);
    if (weights) weights->push_back(g.weight(e));
  }
  out.bundle = g.WithEdges(std::move(edges), std::move(weights));
  return out;
}

namespace internal {

inline EdgeSubset KeepEdges(const GraphBundle& g, std::vector<char> drop) {
  EdgeSubset out;
  std::vector<Edge> edges;
  std::optional<std::vector<double>> weights;
  if (g.has_weights()) weights.emplace();
  for (size_t e = 0; e < g.num_edges(); ++e) {
    if (drop[e]) continue;
    out.kept.push_back(e);
    edges.push_back(g.edges()[e]);
    if (weights) weights->push_back(g.weight(e));
  }
  out.bundle = g.WithEdges(std::move(edges), std::move(weights));
  return out;
}

inline size_t DropBudget(double tau, size_t num_edges) {
  if (!(tau >= 0.0 && tau < 1.0)) {
    throw UsageError("intervention", "mask drop rate must lie in [0,1), got " +
                                         std::to_string(tau));
  }
  return static_cast<size_t>(std::floor(tau * static_cast<double>(num_edges)));
}

}  // namespace internal

/// Removes exactly floor(tau * |E|) edges: those with the lowest normalized
/// importance (ties: lower raw logit, then lower edge index).
/// The rng is accepted for interface symmetry; masking is deterministic.
inline EdgeSubset MaskByImportance(const GraphBundle& g, const EdgeScores& scores, double tau,
                                   Rng& /*rng*/) {
  if (scores.raw.size() != g.num_edges() || scores.normalized.size() != g.num_edges()) {
    throw UsageError("intervention", "edge scores (" + std::to_string(scores.size()) +
                                         ") not aligned with " + std::to_string(g.num_edges()) +
                                         " edges");
  }
  const size_t budget = internal::DropBudget(tau, g.num_edges());
  std::vector<size_t> order(g.num_edges());
  std::iota(order.begin(), order.end(), 0);
  auto lower = [&](size_t a, size_t b) {
    if (scores.normalized[a] != scores.normalized[b])
      return scores.normalized[a] < scores.normalized[b];
    if (scores.raw[a] != scores.raw[b]) return scores.raw[a] < scores.raw[b];
    return a < b;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(budget), order.end(), lower);
  std::vector<char> drop(g.num_edges(), 0);
  for (size_t i = 0; i < budget; ++i) drop[order[i]] = 1;
  return internal::KeepEdges(g, std::move(drop));
}

/// Removes exactly floor(tau * |E|) edges chosen uniformly at random; the
/// importance-free counterpart of MaskByImportance with the same budget.
inline EdgeSubset DropUniform(const GraphBundle& g, double tau, Rng& rng) {
  const size_t budget = internal::DropBudget(tau, g.num_edges());
  std::vector<size_t> order(g.num_edges());
  std::iota(order.begin(), order.end(), 0);
  for (size_t i = 0; i < budget; ++i) {
    const size_t j = i + static_cast<size_t>(rng.UniformInt(order.size() - i));
    std::swap(order[i], order[j]);
  }
  std::vector<char> drop(g.num_edges(), 0);
  for (size_t i = 0; i < budget; ++i) drop[order[i]] = 1;
  return internal::KeepEdges(g, std::move(drop));
}

/// w <- max(w + N(0, sigma^2), 0) for every edge.
inline GraphBundle NoiseEdgeWeights(const GraphBundle& g, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw UsageError("intervention", "edge noise sigma must be >= 0");
  if (sigma == 0.0) return g;
  std::vector<double> w = g.WeightsOrOnes();
  for (double& x : w) x = std::max(x + sigma * rng.Normal(), 0.0);
  return g.WithEdges(g.edges(), std::move(w));
}

}  // namespace cnl
