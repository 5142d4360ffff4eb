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

// Randomized property checks against brute-force oracles for the structural
// interventions and the edge importance scores.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cnl/autodiff.hpp"
#include "cnl/intervention.hpp"
#include "cnl/model.hpp"
#include "support.hpp"

namespace cnl::testing {

struct PropertyResult {
  std::string name;
  size_t cases = 0;
  size_t failures = 0;
  std::string first_failure;

  bool ok() const { return cases > 0 && failures == 0; }
  void Fail(size_t trial, const std::string& what) {
    if (failures++ == 0) first_failure = "case " + std::to_string(trial) + ": " + what;
  }
};

using EdgeSet = std::set<std::pair<NodeId, NodeId>>;

inline EdgeSet EdgesOf(const GraphBundle& g) {
  EdgeSet out;
  for (const Edge& e : g.edges()) out.insert({e.src, e.dst});
  return out;
}

inline bool IsSubset(const EdgeSet& a, const EdgeSet& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

/// Graph of random size and density; the draw varies directedness too.
inline GraphBundle RandomCase(Rng& rng, size_t min_nodes = 4, size_t max_nodes = 40) {
  const size_t n = min_nodes + rng.UniformInt(max_nodes - min_nodes + 1);
  const double p = 0.02 + 0.3 * rng.Uniform();
  return RandomGraph(n, p, 1 + rng.UniformInt(6), 2 + static_cast<int>(rng.UniformInt(3)), rng,
                     rng.Bernoulli(0.5), rng.Bernoulli(0.5));
}

/// Counterfactual graph equals E(G) union both directions of every sampled
/// pair, and always contains E(G).
inline PropertyResult CounterfactualSupersetProperty(size_t cases, uint64_t seed) {
  PropertyResult r{"counterfactual superset and set-union oracle", 0, 0, {}};
  Rng rng(seed);
  for (size_t t = 0; t < cases; ++t, ++r.cases) {
    const GraphBundle g = RandomCase(rng);
    const uint64_t hash = g.Hash();
    CngConfig cfg;
    cfg.strategy = static_cast<CngStrategy>(rng.UniformInt(3));
    cfg.k = rng.UniformInt(5);
    cfg.candidate_pool = cfg.k + rng.UniformInt(6);
    const NeighbourMap map =
        SampleCounterfactualNeighbours(g, NeighbourIndex(g), cfg, rng.Stream(t));
    const GraphBundle cf = BuildCounterfactualGraph(g, map);
    EdgeSet oracle = EdgesOf(g);
    for (NodeId v = 0; v < map.size(); ++v) {
      for (NodeId u : map[v]) {
        oracle.insert({v, u});
        oracle.insert({u, v});
      }
    }
    const EdgeSet got = EdgesOf(cf);
    if (got != oracle) r.Fail(t, "edge set differs from the set-union oracle");
    if (!IsSubset(EdgesOf(g), got)) r.Fail(t, "original edge missing");
    if (cf.num_edges() != got.size()) r.Fail(t, "duplicate edges in the counterfactual graph");
    if (g.Hash() != hash) r.Fail(t, "input graph changed");
  }
  return r;
}

/// The perturb-then-mask pipeline only removes edges and keeps every
/// intra-group edge through the group-aware step.
inline PropertyResult PerturbationSubsetProperty(size_t cases, uint64_t seed) {
  PropertyResult r{"perturbation pipeline subset", 0, 0, {}};
  Rng rng(seed);
  for (size_t t = 0; t < cases; ++t, ++r.cases) {
    const GraphBundle g = RandomCase(rng);
    GroupAssignment groups;
    if (rng.Bernoulli(0.5)) {
      groups = DetectGroups(g, static_cast<int>(rng.UniformInt(4)));
    } else {
      groups.group_count = 1 + static_cast<int>(rng.UniformInt(4));
      for (size_t v = 0; v < g.num_nodes(); ++v)
        groups.group_of.push_back(static_cast<int>(rng.UniformInt(groups.group_count)));
    }
    const double drop = rng.Uniform();
    const double tau = 0.9 * rng.Uniform();
    const EdgeSubset perturbed = PerturbGroupAware(g, groups, drop, rng);
    EdgeScores scores;
    for (size_t e = 0; e < perturbed.bundle.num_edges(); ++e) {
      scores.raw.push_back(rng.Normal());
      scores.normalized.push_back(rng.Uniform());
    }
    const EdgeSubset masked = MaskByImportance(perturbed.bundle, scores, tau, rng);
    const EdgeSet original = EdgesOf(g), after_group = EdgesOf(perturbed.bundle);
    if (!IsSubset(after_group, original)) r.Fail(t, "group step added an edge");
    if (!IsSubset(EdgesOf(masked.bundle), after_group)) r.Fail(t, "mask step added an edge");
    for (const Edge& e : g.edges()) {
      if (groups.group_of[e.src] == groups.group_of[e.dst] && !after_group.count({e.src, e.dst}))
        r.Fail(t, "intra-group edge dropped");
    }
    for (size_t i = 0; i < perturbed.kept.size(); ++i) {
      const Edge& a = perturbed.bundle.edges()[i];
      const Edge& b = g.edges()[perturbed.kept[i]];
      if (a != b) r.Fail(t, "kept index does not map to the original edge");
    }
  }
  return r;
}

/// Sort-and-cut oracle: order by (normalized, raw, index), drop the first
/// floor(tau |E|).
inline std::vector<size_t> MaskOracle(const EdgeScores& s, double tau) {
  std::vector<size_t> order(s.size());
  for (size_t e = 0; e < order.size(); ++e) order[e] = e;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (s.normalized[a] != s.normalized[b]) return s.normalized[a] < s.normalized[b];
    if (s.raw[a] != s.raw[b]) return s.raw[a] < s.raw[b];
    return a < b;
  });
  const size_t cut =
      static_cast<size_t>(std::floor(tau * static_cast<double>(s.size())));
  std::vector<size_t> removed(order.begin(), order.begin() + static_cast<long>(cut));
  std::sort(removed.begin(), removed.end());
  return removed;
}

inline std::vector<size_t> Removed(size_t num_edges, const std::vector<size_t>& kept) {
  std::vector<char> on(num_edges, 0);
  for (size_t e : kept) on[e] = 1;
  std::vector<size_t> out;
  for (size_t e = 0; e < num_edges; ++e)
    if (!on[e]) out.push_back(e);
  return out;
}

/// Importance masking equals the oracle, removes exactly floor(tau |E|) edges
/// and is monotone in tau. Scores are coarsely quantized so ties occur.
inline PropertyResult MaskProperty(size_t cases, uint64_t seed) {
  PropertyResult r{"importance mask oracle, exact count, monotone", 0, 0, {}};
  Rng rng(seed);
  for (size_t t = 0; t < cases; ++t, ++r.cases) {
    const GraphBundle g = RandomCase(rng, 4, 60);
    EdgeScores s;
    const bool ties = rng.Bernoulli(0.5);
    for (size_t e = 0; e < g.num_edges(); ++e) {
      s.normalized.push_back(ties ? std::floor(4.0 * rng.Uniform()) / 4.0 : rng.Uniform());
      s.raw.push_back(ties ? std::floor(3.0 * rng.Uniform()) : rng.Normal());
    }
    const double tau1 = 0.99 * rng.Uniform(), tau2 = tau1 + (0.99 - tau1) * rng.Uniform();
    const EdgeSubset m1 = MaskByImportance(g, s, tau1, rng);
    const EdgeSubset m2 = MaskByImportance(g, s, tau2, rng);
    const std::vector<size_t> r1 = Removed(g.num_edges(), m1.kept);
    const std::vector<size_t> r2 = Removed(g.num_edges(), m2.kept);
    if (r1 != MaskOracle(s, tau1)) r.Fail(t, "removed set differs from the sort oracle");
    const size_t budget =
        static_cast<size_t>(std::floor(tau1 * static_cast<double>(g.num_edges())));
    if (r1.size() != budget || g.num_edges() - m1.bundle.num_edges() != budget)
      r.Fail(t, "removed " + std::to_string(r1.size()) + " edges, expected " +
                    std::to_string(budget));
    if (!std::includes(r2.begin(), r2.end(), r1.begin(), r1.end()))
      r.Fail(t, "edge removed at the lower rate but kept at the higher one");
  }
  return r;
}

/// Segment softmax sums to 1 per target (1e-6), stays in (0, 1] and matches
/// a per-group brute force within 1e-12.
inline PropertyResult SegmentSoftmaxProperty(size_t cases, uint64_t seed) {
  PropertyResult r{"segment softmax sums to one per target", 0, 0, {}};
  Rng rng(seed);
  for (size_t t = 0; t < cases; ++t, ++r.cases) {
    const size_t n = 1 + rng.UniformInt(20), m = 1 + rng.UniformInt(60);
    std::vector<uint32_t> targets(m);
    for (uint32_t& x : targets) x = static_cast<uint32_t>(rng.UniformInt(n));
    const double scale = rng.Bernoulli(0.2) ? 50.0 : 2.0;
    Tape tape;
    const Value logits = tape.Constant(RandomMatrix(m, 1, rng, scale));
    const Matrix y = ad::SegmentSoftmax(logits, targets, n).data();
    std::vector<double> sums(n, 0.0);
    for (size_t e = 0; e < m; ++e) {
      sums[targets[e]] += y[e];
      if (!(y[e] > 0.0 && y[e] <= 1.0)) r.Fail(t, "output outside (0, 1]");
      double denom = 0.0, max = -std::numeric_limits<double>::infinity();
      for (size_t f = 0; f < m; ++f)
        if (targets[f] == targets[e]) max = std::max(max, logits.data()[f]);
      for (size_t f = 0; f < m; ++f)
        if (targets[f] == targets[e]) denom += std::exp(logits.data()[f] - max);
      if (std::abs(y[e] - std::exp(logits.data()[e] - max) / denom) > 1e-12)
        r.Fail(t, "differs from the brute-force softmax");
    }
    for (size_t v = 0; v < n; ++v) {
      const bool has_edges = std::find(targets.begin(), targets.end(), v) != targets.end();
      if (has_edges && std::abs(sums[v] - 1.0) > 1e-6) r.Fail(t, "group sum != 1");
    }
  }
  return r;
}

/// Direct recomputation of the edge importance scores from the formula:
/// h = X W_e, s_ij = LeakyReLU(<a, h_i> + <a, h_j>) (inner form) or
/// sum_k LeakyReLU(a_k (h_ik + h_jk)) (elementwise form), then a softmax over
/// the in-edges of each target j.
inline EdgeScores ImportanceOracle(const GraphBundle& g, const Matrix& w, const Matrix& a,
                                   EimVariant variant) {
  const Matrix& x = g.features();
  const size_t n = g.num_nodes(), d = x.cols(), h = w.cols();
  Matrix proj(n, h);
  for (size_t v = 0; v < n; ++v)
    for (size_t k = 0; k < h; ++k) {
      double s = 0.0;
      for (size_t c = 0; c < d; ++c) s += x(v, c) * w(c, k);
      proj(v, k) = s;
    }
  auto leaky = [](double z) { return z > 0.0 ? z : 0.2 * z; };
  EdgeScores out;
  for (const Edge& e : g.edges()) {
    double s = 0.0;
    if (variant == EimVariant::kInner) {
      double ui = 0.0, uj = 0.0;
      for (size_t k = 0; k < h; ++k) {
        ui += a[k] * proj(e.src, k);
        uj += a[k] * proj(e.dst, k);
      }
      s = leaky(ui + uj);
    } else {
      for (size_t k = 0; k < h; ++k) s += leaky(a[k] * (proj(e.src, k) + proj(e.dst, k)));
    }
    out.raw.push_back(s);
  }
  for (size_t e = 0; e < g.num_edges(); ++e) {
    double denom = 0.0;
    for (size_t f = 0; f < g.num_edges(); ++f)
      if (g.edges()[f].dst == g.edges()[e].dst) denom += std::exp(out.raw[f]);
    out.normalized.push_back(std::exp(out.raw[e]) / denom);
  }
  return out;
}

/// Library scores against the oracle on random 5-node instances (1e-12).
inline PropertyResult ImportanceOracleProperty(size_t cases, uint64_t seed) {
  PropertyResult r{"edge importance oracle on 5-node graphs", 0, 0, {}};
  Rng rng(seed);
  for (size_t t = 0; t < cases; ++t, ++r.cases) {
    const GraphBundle g = RandomGraph(5, 0.2 + 0.6 * rng.Uniform(), 1 + rng.UniformInt(5), 2,
                                      rng, rng.Bernoulli(0.5));
    ModelConfig cfg;
    cfg.input_dim = g.feature_dim();
    cfg.hidden = 1 + rng.UniformInt(6);
    Rng init = rng.Stream(t);
    const ModelParams p = InitParams(cfg, init);
    for (EimVariant variant : {EimVariant::kInner, EimVariant::kElementwise}) {
      const EdgeScores got = EstimateEdgeImportance(g, g.features(), p, variant);
      const EdgeScores want = ImportanceOracle(g, p.eim_w, p.eim_a, variant);
      for (size_t e = 0; e < g.num_edges(); ++e) {
        if (std::abs(got.raw[e] - want.raw[e]) > 1e-12 ||
            std::abs(got.normalized[e] - want.normalized[e]) > 1e-12) {
          r.Fail(t, ToString(variant) + " score mismatch at edge " + std::to_string(e));
          break;
        }
      }
    }
  }
  return r;
}

}  // namespace cnl::testing
