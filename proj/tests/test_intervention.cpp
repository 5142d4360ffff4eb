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

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "cnl/intervention.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace cnl {
namespace {

using testing::EdgesOf;

GraphBundle Undirected(size_t n, const std::vector<std::pair<NodeId, NodeId>>& pairs,
                       Matrix features = Matrix()) {
  std::vector<Edge> edges;
  for (auto [u, v] : pairs) {
    edges.push_back({u, v});
    edges.push_back({v, u});
  }
  if (features.empty()) features = Matrix(n, 1, 1.0);
  return BuildBundle(edges, std::move(features), std::vector<int>(n, 0)).bundle;
}

TEST(Counterfactual, ZeroKGivesEmptySets) {
  const GraphBundle g = testing::Fixture12(1);
  const NeighbourIndex index(g);
  const CngConfig cfg{CngStrategy::kRandom, 0, 0};
  const NeighbourMap map = SampleCounterfactualNeighbours(g, index, cfg, Rng(1));
  for (const auto& s : map) EXPECT_TRUE(s.empty());
  EXPECT_EQ(BuildCounterfactualGraph(g, map), g);
}

TEST(Counterfactual, ExcludesSelfAndNeighbours) {
  // Path 0-1-2: node 1 is adjacent to everything, so it has no candidates.
  const GraphBundle g = Undirected(3, {{0, 1}, {1, 2}});
  const NeighbourIndex index(g);
  for (CngStrategy s : {CngStrategy::kRandom, CngStrategy::kSimilar, CngStrategy::kDissimilar}) {
    const NeighbourMap map = SampleCounterfactualNeighbours(g, index, CngConfig{s, 5, 15}, Rng(3));
    EXPECT_EQ(map[0], std::vector<NodeId>{2});
    EXPECT_TRUE(map[1].empty());
    EXPECT_EQ(map[2], std::vector<NodeId>{0});
  }
}

TEST(Counterfactual, DissimilarPoolIsBottomKByCosine) {
  Rng rng(20);
  const GraphBundle g = testing::RandomGraph(20, 0.15, 4, 2, rng, true);
  // Quantize features so that ties occur and the id tie-break is exercised.
  Matrix x = g.features();
  for (double& v : x.data()) v = std::round(v);
  const GraphBundle q = g.WithFeatures(x);
  const NeighbourIndex index(q);
  const CngConfig cfg{CngStrategy::kDissimilar, 3, 6};
  const CounterfactualSampler sampler(q, index, cfg);
  auto cosine = [&](NodeId a, NodeId b) {
    double dot = 0, na = 0, nb = 0;
    for (size_t c = 0; c < x.cols(); ++c) {
      dot += x(a, c) * x(b, c);
      na += x(a, c) * x(a, c);
      nb += x(b, c) * x(b, c);
    }
    return na == 0 || nb == 0 ? 0.0 : dot / std::sqrt(na * nb);
  };
  for (NodeId v = 0; v < 20; ++v) {
    std::vector<std::pair<double, NodeId>> ranked;
    for (NodeId u = 0; u < 20; ++u) {
      if (u != v && !index.Adjacent(u, v) && !index.Adjacent(v, u))
        ranked.push_back({cosine(v, u), u});
    }
    std::sort(ranked.begin(), ranked.end());
    std::vector<NodeId> want;
    for (size_t i = 0; i < std::min<size_t>(6, ranked.size()); ++i)
      want.push_back(ranked[i].second);
    EXPECT_EQ(sampler.pool(v), want) << "node " << v;
  }
  const NeighbourMap map = sampler.Sample(Rng(4));
  for (NodeId v = 0; v < 20; ++v) {
    EXPECT_EQ(map[v].size(), std::min<size_t>(3, sampler.pool(v).size()));
    const std::vector<NodeId>& pool = sampler.pool(v);
    for (NodeId u : map[v]) EXPECT_NE(std::find(pool.begin(), pool.end(), u), pool.end());
  }
}

TEST(Counterfactual, RejectsPoolSmallerThanK) {
  const GraphBundle g = testing::Fixture12(1);
  const NeighbourIndex index(g);
  EXPECT_THROW(CounterfactualSampler(g, index, CngConfig{CngStrategy::kRandom, 5, 4}), Error);
  EXPECT_THROW(ParseCngStrategy("closest"), Error);
  EXPECT_EQ(ParseCngStrategy("similar"), CngStrategy::kSimilar);
}

TEST(Counterfactual, EmptyMapLeavesGraphUnchanged) {
  const GraphBundle g = testing::Fixture12(2);
  EXPECT_EQ(BuildCounterfactualGraph(g, NeighbourMap{}), g);
  EXPECT_EQ(BuildCounterfactualGraph(g, NeighbourMap(g.num_nodes())), g);
}

TEST(Counterfactual, SuperGraphProperty) {
  const testing::PropertyResult r = testing::CounterfactualSupersetProperty(100, 31);
  EXPECT_TRUE(r.ok()) << r.first_failure;
}

TEST(Counterfactual, SamplingIsDeterministic) {
  const GraphBundle g = testing::Fixture12(3);
  const NeighbourIndex index(g);
  const CngConfig cfg{CngStrategy::kRandom, 2, 15};
  EXPECT_EQ(SampleCounterfactualNeighbours(g, index, cfg, Rng(9)),
            SampleCounterfactualNeighbours(g, index, cfg, Rng(9)));
}

// Fraction of nodes whose detected group maps to their planted group under
// the best one-to-one matching (exhaustive over permutations; k is small).
double MatchedAgreement(const std::vector<int>& planted, int planted_k,
                        const GroupAssignment& found) {
  std::vector<std::vector<size_t>> overlap(static_cast<size_t>(found.group_count),
                                           std::vector<size_t>(static_cast<size_t>(planted_k), 0));
  for (size_t v = 0; v < planted.size(); ++v)
    ++overlap[static_cast<size_t>(found.group_of[v])][static_cast<size_t>(planted[v])];
  const size_t k = std::max<size_t>(overlap.size(), static_cast<size_t>(planted_k));
  std::vector<size_t> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  size_t best = 0;
  do {
    size_t total = 0;
    for (size_t f = 0; f < overlap.size(); ++f)
      if (perm[f] < static_cast<size_t>(planted_k)) total += overlap[f][perm[f]];
    best = std::max(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(planted.size());
}

TEST(DetectGroups, TwoCliques) {
  std::vector<std::pair<NodeId, NodeId>> pairs;
  for (NodeId base : {0u, 5u})
    for (NodeId a = 0; a < 5; ++a)
      for (NodeId b = a + 1; b < 5; ++b) pairs.push_back({base + a, base + b});
  const GroupAssignment groups = DetectGroups(Undirected(10, pairs), 0);
  EXPECT_EQ(groups.group_count, 2);
  for (NodeId v = 1; v < 5; ++v) {
    EXPECT_EQ(groups.group_of[v], groups.group_of[0]);
    EXPECT_EQ(groups.group_of[5 + v], groups.group_of[5]);
  }
  EXPECT_NE(groups.group_of[0], groups.group_of[5]);
}

TEST(DetectGroups, CompleteGraphIsOneGroup) {
  std::vector<std::pair<NodeId, NodeId>> pairs;
  for (NodeId a = 0; a < 8; ++a)
    for (NodeId b = a + 1; b < 8; ++b) pairs.push_back({a, b});
  EXPECT_EQ(DetectGroups(Undirected(8, pairs), 0).group_count, 1);
}

TEST(DetectGroups, RecoversPlantedPartition) {
  Rng rng(8);
  const size_t n = 200, k = 4;
  std::vector<int> planted(n);
  for (size_t v = 0; v < n; ++v) planted[v] = static_cast<int>(v * k / n);
  std::vector<std::pair<NodeId, NodeId>> pairs;
  for (NodeId a = 0; a < n; ++a)
    for (NodeId b = a + 1; b < n; ++b)
      if (rng.Uniform() < (planted[a] == planted[b] ? 0.2 : 0.01)) pairs.push_back({a, b});
  const GroupAssignment groups = DetectGroups(Undirected(n, pairs), 0);
  EXPECT_GE(MatchedAgreement(planted, static_cast<int>(k), groups), 0.9)
      << groups.group_count << " groups";
  const GroupAssignment merged = DetectGroups(Undirected(n, pairs), 2);
  EXPECT_LE(merged.group_count, 2);
}

TEST(PerturbGroupAware, ExtremeRates) {
  Rng rng(5);
  const GraphBundle g = testing::RandomGraph(30, 0.2, 2, 2, rng, true);
  GroupAssignment groups;
  groups.group_count = 2;
  for (NodeId v = 0; v < 30; ++v) groups.group_of.push_back(v % 2);
  EXPECT_EQ(PerturbGroupAware(g, groups, 0.0, rng).bundle, g);
  const EdgeSubset all = PerturbGroupAware(g, groups, 1.0, rng);
  for (const Edge& e : all.bundle.edges()) EXPECT_EQ(e.src % 2, e.dst % 2);
  size_t intra = 0;
  for (const Edge& e : g.edges()) intra += e.src % 2 == e.dst % 2;
  EXPECT_EQ(all.bundle.num_edges(), intra);
  EXPECT_THROW(PerturbGroupAware(g, groups, 1.5, rng), Error);
}

TEST(PerturbGroupAware, HalfRateDropsHalfOfPairsSymmetrically) {
  Rng rng(10);
  const size_t half = 200;
  std::set<std::pair<NodeId, NodeId>> chosen;
  while (chosen.size() < 10000)
    chosen.insert({static_cast<NodeId>(rng.UniformInt(half)),
                   static_cast<NodeId>(half + rng.UniformInt(half))});
  const GraphBundle g = Undirected(2 * half, {chosen.begin(), chosen.end()});
  GroupAssignment groups;
  groups.group_count = 2;
  for (NodeId v = 0; v < 2 * half; ++v) groups.group_of.push_back(v < half ? 0 : 1);
  const EdgeSubset out = PerturbGroupAware(g, groups, 0.5, rng);
  const double kept_pairs = static_cast<double>(out.bundle.num_edges()) / 2.0;
  EXPECT_GE(kept_pairs / 10000.0, 0.47);
  EXPECT_LE(kept_pairs / 10000.0, 0.53);
  for (const Edge& e : out.bundle.edges()) EXPECT_TRUE(out.bundle.HasEdge(e.dst, e.src));
}

TEST(PerturbGroupAware, SubgraphProperty) {
  const testing::PropertyResult r = testing::PerturbationSubsetProperty(100, 32);
  EXPECT_TRUE(r.ok()) << r.first_failure;
}

EdgeScores Uniform(size_t m) {
  return EdgeScores{std::vector<double>(m, 0.0), std::vector<double>(m, 0.5)};
}

TEST(MaskByImportance, ZeroRateKeepsEverything) {
  const GraphBundle g = testing::Fixture12(4);
  Rng rng(1);
  EXPECT_EQ(MaskByImportance(g, Uniform(g.num_edges()), 0.0, rng).bundle, g);
}

TEST(MaskByImportance, UniformScoresRemoveLowestIndices) {
  Rng rng(1);
  std::vector<Edge> edges;
  for (NodeId v = 0; v < 10; ++v) edges.push_back({v, static_cast<NodeId>((v + 1) % 10)});
  const GraphBundle g = BuildBundle(edges, Matrix(10, 1), std::vector<int>(10, 0)).bundle;
  const EdgeSubset out = MaskByImportance(g, Uniform(10), 0.5, rng);
  EXPECT_EQ(out.kept, (std::vector<size_t>{5, 6, 7, 8, 9}));
  EXPECT_EQ(out.bundle.num_edges(), 5u);
}

TEST(MaskByImportance, Properties) {
  const testing::PropertyResult r = testing::MaskProperty(100, 33);
  EXPECT_TRUE(r.ok()) << r.first_failure;
}

TEST(MaskByImportance, RejectsMisalignedScoresAndBadRate) {
  const GraphBundle g = testing::Fixture12(4);
  Rng rng(1);
  EXPECT_THROW(MaskByImportance(g, Uniform(g.num_edges() - 1), 0.1, rng), Error);
  EXPECT_THROW(MaskByImportance(g, Uniform(g.num_edges()), 1.0, rng), Error);
}

TEST(DropUniform, SameBudgetAsMask) {
  const GraphBundle g = testing::Fixture12(5);
  Rng rng(2);
  for (double tau : {0.0, 0.1, 0.3, 0.5}) {
    const EdgeSubset out = DropUniform(g, tau, rng);
    EXPECT_EQ(g.num_edges() - out.bundle.num_edges(), internal::DropBudget(tau, g.num_edges()));
    EXPECT_TRUE(testing::IsSubset(EdgesOf(out.bundle), EdgesOf(g)));
  }
}

TEST(NoiseEdgeWeights, ZeroSigmaIsIdentity) {
  const GraphBundle g = testing::Fixture12(6);
  Rng rng(1);
  EXPECT_EQ(NoiseEdgeWeights(g, 0.0, rng), g);
  EXPECT_THROW(NoiseEdgeWeights(g, -0.1, rng), Error);
}

TEST(NoiseEdgeWeights, MeanPreservedAndClamped) {
  std::vector<Edge> edges;
  for (NodeId v = 0; v < 100; ++v)
    for (NodeId u = 0; u < 100; ++u)
      if (u != v && edges.size() < 10000) edges.push_back({v, u});
  const GraphBundle g = BuildBundle(edges, Matrix(100, 1), std::vector<int>(100, 0)).bundle;
  Rng rng(7);
  const GraphBundle noisy = NoiseEdgeWeights(g, 0.1, rng);
  double sum = 0.0;
  for (size_t e = 0; e < noisy.num_edges(); ++e) sum += noisy.weight(e);
  const double mean = sum / static_cast<double>(noisy.num_edges());
  EXPECT_GE(mean, 0.995);
  EXPECT_LE(mean, 1.005);
  const GraphBundle wild = NoiseEdgeWeights(g, 5.0, rng);
  size_t zeros = 0;
  for (size_t e = 0; e < wild.num_edges(); ++e) {
    EXPECT_GE(wild.weight(e), 0.0);
    zeros += wild.weight(e) == 0.0;
  }
  EXPECT_GT(zeros, 0u);
}

TEST(Interventions, NeverMutateInput) {
  const GraphBundle g = testing::Fixture12(7);
  const uint64_t hash = g.Hash();
  Rng rng(3);
  const NeighbourIndex index(g);
  BuildCounterfactualGraph(g, SampleCounterfactualNeighbours(g, index, CngConfig{}, rng));
  PerturbGroupAware(g, DetectGroups(g, 0), 0.5, rng);
  MaskByImportance(g, Uniform(g.num_edges()), 0.4, rng);
  NoiseEdgeWeights(g, 0.5, rng);
  EXPECT_EQ(g.Hash(), hash);
}

}  // namespace
}  // namespace cnl
