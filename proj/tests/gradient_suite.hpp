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

// Central finite-difference checks for every tape operation, the encoder
// and the full training loss.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "cnl/autodiff.hpp"
#include "cnl/intervention.hpp"
#include "cnl/model.hpp"
#include "support.hpp"

namespace cnl::testing {

inline constexpr double kFdStep = 1e-4;
inline constexpr double kFdTolerance = 1e-3;
// Denominator floor of the relative error. Below it the error is measured
// against the floor, since central differences carry an absolute truncation
// error of order step^2 that swamps gradients near zero.
inline constexpr double kFdFloor = 1e-6;

struct GradCheck {
  std::string name;
  double max_rel_error = 0.0;
  size_t entries = 0;
  bool ok() const { return entries > 0 && max_rel_error < kFdTolerance; }
};

inline double RelativeError(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), kFdFloor});
}

using ScalarFn = std::function<Value(Tape&, const std::vector<Value>&)>;

/// Compares tape gradients of `f` at `inputs` with central differences.
/// `per_tensor` > 0 limits the check to that many random entries per input.
inline GradCheck FiniteDifference(const std::string& name, const ScalarFn& f,
                                  const std::vector<Matrix>& inputs, Rng& pick,
                                  size_t per_tensor = 0) {
  GradCheck out{name, 0.0, 0};
  std::vector<Matrix> analytic;
  {
    Tape tape;
    std::vector<Value> leaves;
    for (const Matrix& m : inputs) leaves.push_back(tape.Leaf(m));
    tape.Backward(f(tape, leaves));
    for (size_t k = 0; k < inputs.size(); ++k) {
      const Matrix& g = leaves[k].grad();
      analytic.push_back(g.empty() ? Matrix(inputs[k].rows(), inputs[k].cols()) : g);
    }
  }
  auto evaluate = [&](const std::vector<Matrix>& at) {
    Tape tape;
    std::vector<Value> leaves;
    for (const Matrix& m : at) leaves.push_back(tape.Leaf(m));
    return f(tape, leaves).item();
  };
  std::vector<Matrix> work = inputs;
  for (size_t k = 0; k < inputs.size(); ++k) {
    std::vector<size_t> entries(inputs[k].size());
    for (size_t i = 0; i < entries.size(); ++i) entries[i] = i;
    if (per_tensor > 0 && per_tensor < entries.size()) {
      pick.Shuffle(entries);
      entries.resize(per_tensor);
    }
    for (size_t i : entries) {
      const double x = inputs[k][i];
      work[k][i] = x + kFdStep;
      const double up = evaluate(work);
      work[k][i] = x - kFdStep;
      const double down = evaluate(work);
      work[k][i] = x;
      const double numeric = (up - down) / (2.0 * kFdStep);
      out.max_rel_error = std::max(out.max_rel_error, RelativeError(analytic[k][i], numeric));
      ++out.entries;
    }
  }
  return out;
}

/// Reduces a tensor-valued op to a scalar through fixed random weights, so
/// every output entry contributes a distinct upstream gradient.
inline ScalarFn Projected(std::function<Value(Tape&, const std::vector<Value>&)> op,
                          uint64_t seed) {
  auto weights = std::make_shared<Matrix>();
  return [op = std::move(op), weights, seed](Tape& tape, const std::vector<Value>& in) {
    const Value out = op(tape, in);
    if (weights->empty()) {
      Rng rng(seed);
      *weights = RandomMatrix(out.rows(), out.cols(), rng);
    }
    return ad::ReduceSum(ad::Hadamard(out, tape.Constant(*weights)));
  };
}

/// Random entries bounded away from zero, for ops with a kink at 0.
inline Matrix AwayFromZero(size_t rows, size_t cols, Rng& rng) {
  Matrix m = RandomMatrix(rows, cols, rng);
  for (double& v : m.data()) v += v >= 0.0 ? 0.05 : -0.05;
  return m;
}

/// One check per differentiable op (including broadcast forms).
inline std::vector<GradCheck> OpGradientChecks(uint64_t seed) {
  Rng rng(seed);
  std::vector<GradCheck> out;
  auto check = [&](const std::string& name,
                   std::function<Value(Tape&, const std::vector<Value>&)> op,
                   std::vector<Matrix> inputs) {
    out.push_back(FiniteDifference(name, Projected(std::move(op), rng.NextU64()), inputs, rng));
  };
  auto R = [&](size_t r, size_t c) { return RandomMatrix(r, c, rng); };
  using V = const std::vector<Value>&;

  check("matmul", [](Tape&, V v) { return ad::MatMul(v[0], v[1]); }, {R(3, 4), R(4, 2)});
  check("add", [](Tape&, V v) { return ad::Add(v[0], v[1]); }, {R(4, 3), R(4, 3)});
  check("add_row", [](Tape&, V v) { return ad::Add(v[0], v[1]); }, {R(5, 3), R(1, 3)});
  check("add_col", [](Tape&, V v) { return ad::Add(v[0], v[1]); }, {R(5, 3), R(5, 1)});
  check("sub", [](Tape&, V v) { return ad::Sub(v[0], v[1]); }, {R(4, 3), R(4, 3)});
  check("sub_row", [](Tape&, V v) { return ad::Sub(v[0], v[1]); }, {R(5, 3), R(1, 3)});
  check("hadamard", [](Tape&, V v) { return ad::Hadamard(v[0], v[1]); }, {R(4, 3), R(4, 3)});
  check("hadamard_row", [](Tape&, V v) { return ad::Hadamard(v[0], v[1]); }, {R(5, 3), R(1, 3)});
  check("hadamard_col", [](Tape&, V v) { return ad::Hadamard(v[0], v[1]); }, {R(5, 3), R(5, 1)});
  check("scale", [](Tape&, V v) { return ad::Scale(v[0], -1.7); }, {R(3, 3)});
  check("concat_cols", [](Tape&, V v) { return ad::ConcatCols(v[0], v[1]); }, {R(4, 2), R(4, 3)});
  check("concat_rows", [](Tape&, V v) { return ad::ConcatRows(v[0], v[1]); }, {R(2, 3), R(4, 3)});
  check("row_select",
        [](Tape&, V v) { return ad::RowSelect(v[0], {2, 0, 2, 3, 1, 2}); }, {R(4, 3)});
  check("transpose", [](Tape&, V v) { return ad::Transpose(v[0]); }, {R(3, 5)});
  check("leaky_relu", [](Tape&, V v) { return ad::LeakyRelu(v[0], 0.2); },
        {AwayFromZero(4, 5, rng)});
  check("elu", [](Tape&, V v) { return ad::Elu(v[0]); }, {AwayFromZero(4, 5, rng)});
  check("sigmoid", [](Tape&, V v) { return ad::Sigmoid(v[0]); }, {R(4, 5)});
  check("tanh", [](Tape&, V v) { return ad::Tanh(v[0]); }, {R(4, 5)});
  check("square", [](Tape&, V v) { return ad::Square(v[0]); }, {R(4, 5)});
  const uint64_t dropout_seed = rng.NextU64();
  check("dropout",
        [dropout_seed](Tape&, V v) {
          Rng mask(dropout_seed);  // same mask on every evaluation
          return ad::Dropout(v[0], 0.3, mask);
        },
        {R(6, 4)});
  const uint64_t noise_seed = rng.NextU64();
  check("gaussian_noise",
        [noise_seed](Tape&, V v) {
          Rng noise(noise_seed);
          return ad::GaussianNoise(v[0], 0.5, noise);
        },
        {R(6, 4)});
  check("reduce_sum", [](Tape&, V v) { return ad::ReduceSum(v[0]); }, {R(3, 4)});
  check("reduce_mean", [](Tape&, V v) { return ad::ReduceMean(v[0]); }, {R(3, 4)});
  check("sum_cols", [](Tape&, V v) { return ad::SumCols(v[0]); }, {R(5, 3)});
  check("l2_norm_rows", [](Tape&, V v) { return ad::L2NormRows(v[0]); }, {R(5, 3)});

  const GraphBundle g = Fixture12(seed);
  std::vector<uint32_t> targets;
  for (const Edge& e : g.edges()) targets.push_back(e.dst);
  const size_t n = g.num_nodes(), m = g.num_edges();
  check("segment_softmax",
        [targets, n](Tape&, V v) { return ad::SegmentSoftmax(v[0], targets, n); }, {R(m, 1)});
  check("scatter_sum", [targets, n](Tape&, V v) { return ad::ScatterSum(v[0], targets, n); },
        {R(m, 3)});
  check("log_softmax_rows", [](Tape&, V v) { return ad::LogSoftmaxRows(v[0]); }, {R(5, 4)});
  check("softmax_rows", [](Tape&, V v) { return ad::SoftmaxRows(v[0]); }, {R(5, 4)});
  check("gather_cols", [](Tape&, V v) { return ad::GatherCols(v[0], {3, 0, 1, 1, 2}); },
        {R(5, 4)});
  check("cosine_sq_rows", [](Tape&, V v) { return ad::CosineSqRows(v[0], v[1]); },
        {R(5, 4), R(5, 4)});
  check("standardize_cols", [](Tape&, V v) { return ad::StandardizeCols(v[0]); }, {R(7, 3)});
  return out;
}

/// Frozen training step on the 12-node fixture: every random structure
/// (counterfactual graph, perturbed graph, feature noise, dropout masks) is
/// drawn once so the loss is a smooth function of the parameters.
struct LossFixture {
  GraphBundle graph;
  GraphBundle train_graph;
  GraphBundle cf_graph;
  Matrix features;
  ModelConfig model;
  ModelParams params;
  std::vector<size_t> train_nodes;
  LossWeights weights;
  uint64_t dropout_seed = 0;

  static LossFixture Make(uint64_t seed, EimVariant variant) {
    LossFixture f;
    Rng rng(seed);
    f.graph = Fixture12(seed);
    f.model.input_dim = f.graph.feature_dim();
    f.model.hidden = 8;
    f.model.classes = 3;
    f.model.eim_variant = variant;
    f.model.dropout = 0.1;
    f.params = f.DrawParams(rng.Stream("params"));

    CngConfig cng;
    cng.k = 2;
    cng.candidate_pool = 6;
    f.cf_graph = BuildCounterfactualGraph(
        f.graph, SampleCounterfactualNeighbours(f.graph, NeighbourIndex(f.graph), cng,
                                                rng.Stream("cng")));
    Rng group_rng = rng.Stream("group");
    const EdgeSubset perturbed =
        PerturbGroupAware(f.graph, DetectGroups(f.graph, 0), 0.3, group_rng);
    const EdgeScores scores =
        EstimateEdgeImportance(f.graph, f.graph.features(), f.params, variant)
            .Select(perturbed.kept);
    Rng mask_rng = rng.Stream("mask");
    const EdgeSubset masked = MaskByImportance(perturbed.bundle, scores, 0.2, mask_rng);
    Rng noise_rng = rng.Stream("edge_noise");
    f.train_graph = NoiseEdgeWeights(masked.bundle, 0.1, noise_rng);
    Rng feature_rng = rng.Stream("features");
    f.features = PerturbFeatures(f.graph.features(), 0.1, feature_rng);
    f.train_nodes = {0, 1, 2, 4, 5, 7, 8, 10};
    f.dropout_seed = rng.NextU64();
    // Central differences need the loss to be smooth within one step of the
    // point, so draws that put a LeakyReLU input next to its kink are redrawn.
    for (uint64_t attempt = 1; f.KinkMargin() < kKinkMargin; ++attempt)
      f.params = f.DrawParams(rng.Stream("params").Stream(attempt));
    return f;
  }

  static constexpr double kKinkMargin = 1e-3;

  ModelParams DrawParams(Rng rng) const {
    ModelParams p = InitParams(model, rng);
    for (Matrix* bias : {&p.gate_b, &p.fuse_b, &p.cls_b})
      for (double& v : bias->data()) v = 0.3 * rng.Normal();
    return p;
  }

  /// Smallest |input| over every LeakyReLU of both forward passes.
  double KinkMargin() const {
    double margin = std::numeric_limits<double>::infinity();
    auto scan = [&margin](const Value& v) {
      for (double x : v.data().data()) margin = std::min(margin, std::abs(x));
    };
    for (const auto& [graph_ptr, seed] :
         {std::pair{&train_graph, dropout_seed}, std::pair{&cf_graph, dropout_seed + 1}}) {
      Tape tape;
      const ParamValues p = Bind(tape, params, false);
      const GraphTensors gt(*graph_ptr);
      const Value input = tape.Constant(features);
      const Value h = ad::MatMul(input, p.eim_w);
      if (model.eim_variant == EimVariant::kInner) {
        const Value u = ad::MatMul(h, p.eim_a);
        scan(ad::Add(ad::RowSelect(u, gt.EdgeSources()), ad::RowSelect(u, gt.EdgeTargets())));
      } else {
        const Value sum =
            ad::Add(ad::RowSelect(h, gt.EdgeSources()), ad::RowSelect(h, gt.EdgeTargets()));
        scan(ad::Hadamard(sum, ad::Transpose(p.eim_a)));
      }
      const ImportanceValues s = EdgeImportance(gt, input, p.eim_w, p.eim_a, model.eim_variant);
      const Value multiplier = ImportanceMultiplier(gt, s);
      Rng dropout(seed);
      const Value x = ad::Dropout(input, model.dropout, dropout);
      const Value z1 = ad::MatMul(x, p.enc1_w);
      scan(ad::Add(ad::RowSelect(z1, gt.src), ad::RowSelect(z1, gt.dst)));
      const Value h1 = ad::Elu(AttentionLayer(gt, x, p.enc1_w, p.enc1_a, multiplier));
      const Value z2 = ad::MatMul(h1, p.enc2_w);
      scan(ad::Add(ad::RowSelect(z2, gt.src), ad::RowSelect(z2, gt.dst)));
    }
    return margin;
  }

  std::vector<Matrix> Inputs() const {
    std::vector<Matrix> out;
    for (const Matrix* m : params.Fields()) out.push_back(*m);
    return out;
  }

  ParamValues Bound(const std::vector<Value>& leaves) const {
    ParamValues p;
    auto fields = p.Fields();
    for (size_t i = 0; i < ModelParams::kCount; ++i) *fields[i] = leaves[i];
    return p;
  }

  Value TotalLoss(const std::vector<Value>& leaves) const {
    const ParamValues p = Bound(leaves);
    const GraphTensors main_tensors(train_graph), cf_tensors(cf_graph);
    Rng dropout_main(dropout_seed), dropout_cf(dropout_seed + 1), intervention(dropout_seed + 2);
    const ForwardOutputs main = Forward(model, p, main_tensors, features, &dropout_main);
    const ForwardOutputs partner = Forward(model, p, cf_tensors, features, &dropout_cf);
    GenerateCounterfactualFeatures(main.x_c, main.x_o, intervention);
    return ComputeLosses(main, &partner, graph.labels(), train_nodes, weights).total;
  }
};

/// Encoder (mean of its output) and end-to-end loss checks for one seed.
inline std::vector<GradCheck> ModelGradientChecks(uint64_t seed) {
  std::vector<GradCheck> out;
  Rng pick(seed ^ 0x5DEECE66DULL);
  for (EimVariant variant : {EimVariant::kInner, EimVariant::kElementwise}) {
    const LossFixture f = LossFixture::Make(seed, variant);
    out.push_back(FiniteDifference(
        "total_loss[" + ToString(variant) + "]",
        [&f](Tape&, const std::vector<Value>& leaves) { return f.TotalLoss(leaves); }, f.Inputs(),
        pick));
  }
  const LossFixture f = LossFixture::Make(seed, EimVariant::kInner);
  out.push_back(FiniteDifference(
      "encoder_mean",
      [&f](Tape& tape, const std::vector<Value>& leaves) {
        const ParamValues p = f.Bound(leaves);
        const GraphTensors gt(f.train_graph);
        const Value input = tape.Constant(f.features);
        const ImportanceValues s =
            EdgeImportance(gt, input, p.eim_w, p.eim_a, f.model.eim_variant);
        Rng dropout(f.dropout_seed);
        return ad::ReduceMean(
            Encode(gt, input, p, ImportanceMultiplier(gt, s), f.model.dropout, &dropout));
      },
      f.Inputs(), pick));
  return out;
}

}  // namespace cnl::testing
