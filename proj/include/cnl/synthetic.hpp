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

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "cnl/error.hpp"
#include "cnl/graph.hpp"
#include "cnl/rng.hpp"

namespace cnl {

/// Planted-causal benchmark with a spurious feature block whose correlation
/// with the label changes between the train and the test graph.
///
/// Feature layout per node: [causal | spurious | noise].
///  - causal: group mean + Gaussian noise; the label is the parity of the
///    group whose mean is nearest to the node's causal block;
///  - spurious: +/- spurious_scale (sign agrees with the label with
///    probability spurious_*_corr) + Gaussian noise;
///  - noise: standard Gaussian.
/// Edges follow a stochastic block model over the groups.
struct SyntheticSpec {
  size_t num_nodes = 1000;
  size_t num_groups = 4;
  double intra_edge_prob = 0.02;
  double inter_edge_prob = 0.002;
  size_t causal_dim = 8;
  size_t spurious_dim = 8;
  size_t noise_dim = 16;
  double spurious_train_corr = 0.9;
  double spurious_test_corr = 0.1;
  uint64_t seed = 7;

  // Signal scales.
  double causal_scale = 1.0;
  double causal_noise = 1.0;
  double spurious_scale = 1.0;
  double spurious_noise = 0.5;

  size_t feature_dim() const { return causal_dim + spurious_dim + noise_dim; }
};

struct SyntheticData {
  GraphBundle train;
  GraphBundle test;
  GroupAssignment train_groups;
  GroupAssignment test_groups;
};

inline void ValidateSpec(const SyntheticSpec& s) {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (s.num_nodes == 0 || s.num_groups == 0) throw UsageError("ingest", "synthetic: empty spec");
  if (s.num_groups > s.num_nodes) {
    throw UsageError("ingest", "synthetic: num_groups " + std::to_string(s.num_groups) +
                                   " > num_nodes " + std::to_string(s.num_nodes));
  }
  if (s.causal_dim < 1 || s.spurious_dim < 1 || s.noise_dim < 1) {
    throw UsageError("ingest", "synthetic: every feature block needs dim >= 1");
  }
  if (!prob(s.intra_edge_prob) || !prob(s.inter_edge_prob) || !prob(s.spurious_train_corr) ||
      !prob(s.spurious_test_corr)) {
    throw UsageError("ingest", "synthetic: probabilities must lie in [0,1]");
  }
  if (s.causal_noise < 0 || s.spurious_noise < 0) {
    throw UsageError("ingest", "synthetic: noise scales must be >= 0");
  }
}

namespace internal {

inline GraphBundle GenerateSplit(const SyntheticSpec& spec, const Matrix& means,
                                 double spurious_corr, Rng rng, GroupAssignment& groups) {
  const size_t n = spec.num_nodes;
  const size_t num_groups = spec.num_groups;

  // Balanced group sizes, random placement.
  Rng placement = rng.Stream("groups");
  std::vector<size_t> order = placement.Permutation(n);
  groups.group_of.assign(n, 0);
  groups.group_count = static_cast<int>(num_groups);
  for (size_t rank = 0; rank < n; ++rank)
    groups.group_of[order[rank]] = static_cast<int>(rank % num_groups);

  Rng edge_rng = rng.Stream("edges");
  std::vector<Edge> edges;
  for (NodeId u = 0; u < n; ++u) {
    for (NodeId v = u + 1; v < n; ++v) {
      const double p = groups.group_of[u] == groups.group_of[v] ? spec.intra_edge_prob
                                                                : spec.inter_edge_prob;
      if (edge_rng.Uniform() < p) {
        edges.push_back({u, v});
        edges.push_back({v, u});
      }
    }
  }

  Rng feat_rng = rng.Stream("features");
  Matrix features(n, spec.feature_dim());
  std::vector<int> labels(n);
  const size_t c0 = 0, s0 = spec.causal_dim, z0 = spec.causal_dim + spec.spurious_dim;
  for (size_t v = 0; v < n; ++v) {
    const int g = groups.group_of[v];
    for (size_t c = 0; c < spec.causal_dim; ++c)
      features(v, c0 + c) = means(g, c) + spec.causal_noise * feat_rng.Normal();
    size_t nearest = 0;
    double best = std::numeric_limits<double>::infinity();
    for (size_t h = 0; h < num_groups; ++h) {
      double d = 0.0;
      for (size_t c = 0; c < spec.causal_dim; ++c) {
        const double diff = features(v, c0 + c) - means(h, c);
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        nearest = h;
      }
    }
    labels[v] = static_cast<int>(nearest % 2);
    const bool agrees = feat_rng.Uniform() < spurious_corr;
    const double label_sign = labels[v] == 1 ? 1.0 : -1.0;
    const double sign = agrees ? label_sign : -label_sign;
    for (size_t c = 0; c < spec.spurious_dim; ++c)
      features(v, s0 + c) = sign * spec.spurious_scale + spec.spurious_noise * feat_rng.Normal();
    for (size_t c = 0; c < spec.noise_dim; ++c) features(v, z0 + c) = feat_rng.Normal();
  }
  return BuildBundle(edges, std::move(features), std::move(labels), std::nullopt, 2).bundle;
}

}  // namespace internal

/// Generates the train/test pair. Both splits share the group means, so the
/// causal mechanism is identical; only the spurious correlation (and the
/// sampled graph) differ.
inline SyntheticData GenerateSynthetic(const SyntheticSpec& spec) {
  ValidateSpec(spec);
  Rng root(spec.seed);
  Rng mean_rng = root.Stream("means");
  Matrix means(spec.num_groups, spec.causal_dim);
  for (size_t i = 0; i < means.size(); ++i) means[i] = spec.causal_scale * mean_rng.Normal();

  SyntheticData data;
  data.train = internal::GenerateSplit(spec, means, spec.spurious_train_corr,
                                       root.Stream("train"), data.train_groups);
  data.test = internal::GenerateSplit(spec, means, spec.spurious_test_corr,
                                      root.Stream("test"), data.test_groups);
  return data;
}

/// Fraction of nodes whose spurious block sign (sum over the block) agrees
/// with the label (label 1 <-> positive).
inline double SpuriousAgreement(const GraphBundle& g, const SyntheticSpec& spec) {
  size_t agree = 0;
  for (size_t v = 0; v < g.num_nodes(); ++v) {
    double sum = 0.0;
    for (size_t c = 0; c < spec.spurious_dim; ++c) sum += g.features()(v, spec.causal_dim + c);
    if ((sum > 0.0) == (g.labels()[v] == 1)) ++agree;
  }
  return static_cast<double>(agree) / static_cast<double>(g.num_nodes());
}

}  // namespace cnl
