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

// CNL-GNN network: edge importance module, two-layer attention encoder,
// feature gate, context/object branches, gated fusion, classifier and the
// loss terms.
//
// Data flow for one forward pass on a graph G with features X:
//
//   S       = EIM(X, G)                      per-edge importance, softmax per target
//   x       = Encoder(X, G, S)               2 attention layers, ELU between
//   x_c     = sigmoid(x W_g + b) * x,   x_o = x - x_c
//   x_c'    = ELU(mean_agg(x_c) W_ctx), x_o' = ELU(mean_agg(x_o) W_obj)
//   alpha   = sigmoid([x_c' | x_o'] W_a + b)  one value per node
//   x_f     = alpha x_c' + (1 - alpha) x_o'
//   logits  = x_f W_cls + b_cls

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cnl/autodiff.hpp"
#include "cnl/checkpoint.hpp"
#include "cnl/error.hpp"
#include "cnl/graph.hpp"
#include "cnl/intervention.hpp"
#include "cnl/matrix.hpp"
#include "cnl/rng.hpp"

namespace cnl {

/// kInner:       s_ij = LeakyReLU(<a, h_i> + <a, h_j>)
/// kElementwise: s_ij = sum_k LeakyReLU(a_k h_ik + a_k h_jk)
enum class EimVariant { kInner, kElementwise };

inline std::string ToString(EimVariant v) {
  return v == EimVariant::kInner ? "inner" : "elementwise";
}

inline EimVariant ParseEimVariant(const std::string& text) {
  if (text == "inner") return EimVariant::kInner;
  if (text == "elementwise") return EimVariant::kElementwise;
  throw UsageError("model", "unknown eim_variant '" + text + "' (inner|elementwise)");
}

struct ModelConfig {
  size_t input_dim = 0;
  size_t hidden = 64;
  size_t classes = 2;
  EimVariant eim_variant = EimVariant::kInner;
  double dropout = 0.1;
  // Scale encoder messages by the learned edge importance. Off for the
  // ablation without the importance module.
  bool use_eim = true;
};

/// All trainable tensors. T is Matrix for storage and Value once bound to a
/// tape.
template <typename T>
struct ParamSet {
  T eim_w, eim_a;
  T enc1_w, enc1_a, enc2_w, enc2_a;
  T gate_w, gate_b;
  T ctx_w, obj_w;
  T fuse_w, fuse_b;
  T cls_w, cls_b;

  static constexpr size_t kCount = 14;

  static const std::array<const char*, kCount>& Names() {
    static const std::array<const char*, kCount> names = {
        "eim_w",  "eim_a", "enc1_w", "enc1_a", "enc2_w", "enc2_a", "gate_w",
        "gate_b", "ctx_w", "obj_w",  "fuse_w", "fuse_b", "cls_w",  "cls_b"};
    return names;
  }
  std::array<T*, kCount> Fields() {
    return {&eim_w,  &eim_a, &enc1_w, &enc1_a, &enc2_w, &enc2_a, &gate_w,
            &gate_b, &ctx_w, &obj_w,  &fuse_w, &fuse_b, &cls_w,  &cls_b};
  }
  std::array<const T*, kCount> Fields() const {
    return {&eim_w,  &eim_a, &enc1_w, &enc1_a, &enc2_w, &enc2_a, &gate_w,
            &gate_b, &ctx_w, &obj_w,  &fuse_w, &fuse_b, &cls_w,  &cls_b};
  }
};

using ModelParams = ParamSet<Matrix>;
using ParamValues = ParamSet<Value>;

namespace internal {

inline Matrix GlorotUniform(size_t fan_in, size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix m(fan_in, fan_out);
  for (double& v : m.data()) v = (2.0 * rng.Uniform() - 1.0) * limit;
  return m;
}

}  // namespace internal

/// Glorot-uniform weights and attention vectors, zero biases.
inline ModelParams InitParams(const ModelConfig& cfg, Rng& rng) {
  if (cfg.input_dim == 0 || cfg.hidden == 0 || cfg.classes == 0) {
    throw UsageError("model", "input_dim, hidden and classes must be >= 1");
  }
  const size_t d = cfg.input_dim, h = cfg.hidden, c = cfg.classes;
  using internal::GlorotUniform;
  ModelParams p;
  p.eim_w = GlorotUniform(d, h, rng);
  p.eim_a = GlorotUniform(h, 1, rng);
  p.enc1_w = GlorotUniform(d, h, rng);
  p.enc1_a = GlorotUniform(h, 1, rng);
  p.enc2_w = GlorotUniform(h, h, rng);
  p.enc2_a = GlorotUniform(h, 1, rng);
  p.gate_w = GlorotUniform(h, h, rng);
  p.gate_b = Matrix(1, h);
  p.ctx_w = GlorotUniform(h, h, rng);
  p.obj_w = GlorotUniform(h, h, rng);
  p.fuse_w = GlorotUniform(2 * h, 1, rng);
  p.fuse_b = Matrix(1, 1);
  p.cls_w = GlorotUniform(h, c, rng);
  p.cls_b = Matrix(1, c);
  return p;
}

inline bool AllFinite(const ModelParams& p) {
  for (const Matrix* m : p.Fields())
    if (!m->AllFinite()) return false;
  return true;
}

inline std::vector<NamedTensor> ToNamedTensors(const ModelParams& p) {
  std::vector<NamedTensor> out;
  const auto fields = p.Fields();
  for (size_t i = 0; i < ModelParams::kCount; ++i)
    out.push_back({ModelParams::Names()[i], *fields[i]});
  return out;
}

/// Restores parameters by name; shapes must match `reference` (e.g. a fresh
/// InitParams result for the same config).
inline ModelParams FromNamedTensors(const std::vector<NamedTensor>& tensors,
                                    const ModelParams& reference) {
  ModelParams p = reference;
  auto fields = p.Fields();
  for (size_t i = 0; i < ModelParams::kCount; ++i) {
    const std::string name = ModelParams::Names()[i];
    auto it = std::find_if(tensors.begin(), tensors.end(),
                           [&](const NamedTensor& t) { return t.name == name; });
    if (it == tensors.end()) throw DataError("model", "checkpoint lacks tensor '" + name + "'");
    if (!it->value.SameShape(*fields[i])) {
      throw DataError("model", "checkpoint tensor '" + name + "' has shape " + it->value.shape() +
                                   ", expected " + fields[i]->shape());
    }
    *fields[i] = it->value;
  }
  if (tensors.size() != ModelParams::kCount) {
    throw DataError("model", "checkpoint holds " + std::to_string(tensors.size()) +
                                 " tensors, expected " + std::to_string(ModelParams::kCount));
  }
  return p;
}

/// Places every parameter on the tape as a gradient-tracking leaf.
inline ParamValues Bind(Tape& tape, const ModelParams& p, bool requires_grad = true) {
  ParamValues v;
  const auto src = p.Fields();
  auto dst = v.Fields();
  for (size_t i = 0; i < ModelParams::kCount; ++i) *dst[i] = tape.Leaf(*src[i], requires_grad);
  return v;
}

/// Gradients of the bound leaves after Backward (zeros where none arrived).
inline ModelParams Gradients(const ParamValues& v, const ModelParams& shapes) {
  ModelParams g = shapes;
  const auto src = v.Fields();
  auto dst = g.Fields();
  for (size_t i = 0; i < ModelParams::kCount; ++i) {
    const Matrix& grad = src[i]->grad();
    *dst[i] = grad.empty() ? Matrix(dst[i]->rows(), dst[i]->cols()) : grad;
  }
  return g;
}

/// Constant per-graph index arrays. Edges come first, then one self-loop per
/// node (the encoder and the branches aggregate over both).
struct GraphTensors {
  size_t num_nodes = 0;
  size_t num_edges = 0;
  std::vector<size_t> src, dst;  // E + n entries
  std::vector<uint32_t> dst32;
  Matrix weight;      // [(E+n) x 1], self-loops weigh 1
  Matrix mean_coeff;  // weight / total weight arriving at the target
  Matrix in_degree;   // [E x 1], in-degree of each edge's target (no self-loop)

  explicit GraphTensors(const GraphBundle& g)
      : num_nodes(g.num_nodes()), num_edges(g.num_edges()) {
    const size_t total = num_edges + num_nodes;
    src.reserve(total);
    dst.reserve(total);
    for (const Edge& e : g.edges()) {
      src.push_back(e.src);
      dst.push_back(e.dst);
    }
    for (size_t v = 0; v < num_nodes; ++v) {
      src.push_back(v);
      dst.push_back(v);
    }
    dst32.assign(dst.begin(), dst.end());
    weight = Matrix(total, 1, 1.0);
    for (size_t e = 0; e < num_edges; ++e) weight[e] = g.weight(e);
    std::vector<double> arriving(num_nodes, 0.0);
    std::vector<double> degree(num_nodes, 0.0);
    for (size_t e = 0; e < total; ++e) arriving[dst[e]] += weight[e];
    for (size_t e = 0; e < num_edges; ++e) degree[dst[e]] += 1.0;
    mean_coeff = Matrix(total, 1);
    for (size_t e = 0; e < total; ++e) mean_coeff[e] = weight[e] / arriving[dst[e]];
    in_degree = Matrix(num_edges, 1);
    for (size_t e = 0; e < num_edges; ++e) in_degree[e] = degree[dst[e]];
  }

  std::vector<size_t> EdgeSources() const {
    return {src.begin(), src.begin() + static_cast<long>(num_edges)};
  }
  std::vector<size_t> EdgeTargets() const {
    return {dst.begin(), dst.begin() + static_cast<long>(num_edges)};
  }
  std::span<const uint32_t> EdgeTargets32() const { return {dst32.data(), num_edges}; }
};

struct ImportanceValues {
  Value raw;         // [E x 1]
  Value normalized;  // [E x 1], sums to 1 over each target's in-edges

  EdgeScores ToScores() const {
    EdgeScores s;
    s.raw = raw.data().data();
    s.normalized = normalized.data().data();
    return s;
  }
};

/// Edge importance on the tape; differentiable w.r.t. x, W_e and a.
inline ImportanceValues EdgeImportance(const GraphTensors& gt, Value x, Value w_e, Value a,
                                       EimVariant variant) {
  if (x.rows() != gt.num_nodes || x.cols() != w_e.rows()) {
    throw UsageError("model", "edge importance: features " + x.data().shape() + " vs W_e " +
                                  w_e.data().shape() + " on " + std::to_string(gt.num_nodes) +
                                  " nodes");
  }
  const Value h = ad::MatMul(x, w_e);
  Value raw;
  if (variant == EimVariant::kInner) {
    const Value u = ad::MatMul(h, a);
    raw = ad::LeakyRelu(ad::Add(ad::RowSelect(u, gt.EdgeSources()),
                                ad::RowSelect(u, gt.EdgeTargets())));
  } else {
    const Value sum =
        ad::Add(ad::RowSelect(h, gt.EdgeSources()), ad::RowSelect(h, gt.EdgeTargets()));
    raw = ad::SumCols(ad::LeakyRelu(ad::Hadamard(sum, ad::Transpose(a))));
  }
  return {raw, ad::SegmentSoftmax(raw, gt.EdgeTargets32(), gt.num_nodes)};
}

/// Numeric edge importance for a bundle (no gradient tracking).
inline EdgeScores EstimateEdgeImportance(const GraphBundle& g, const Matrix& features,
                                         const ModelParams& p, EimVariant variant) {
  if (features.rows() != g.num_nodes()) {
    throw UsageError("model", "edge importance: " + std::to_string(features.rows()) +
                                  " feature rows for " + std::to_string(g.num_nodes()) + " nodes");
  }
  Tape tape;
  const GraphTensors gt(g);
  return EdgeImportance(gt, tape.Constant(features), tape.Constant(p.eim_w),
                        tape.Constant(p.eim_a), variant)
      .ToScores();
}

/// One attention layer with shared W:
///   e_ji  = a^T LeakyReLU(z_j + z_i),  att = softmax over edges into i
///   out_i = sum_j att_ji * w_ji * r_ji * z_j
/// r is the optional per-edge multiplier ([(E+n) x 1]).
inline Value AttentionLayer(const GraphTensors& gt, Value x, Value w, Value a,
                            std::optional<Value> multiplier) {
  Tape& tape = *x.tape();
  const Value z = ad::MatMul(x, w);
  const Value zs = ad::RowSelect(z, gt.src);
  const Value zd = ad::RowSelect(z, gt.dst);
  const Value logits = ad::MatMul(ad::LeakyRelu(ad::Add(zs, zd)), a);
  Value coeff = ad::Hadamard(ad::SegmentSoftmax(logits, gt.dst32, gt.num_nodes),
                             tape.Constant(gt.weight));
  if (multiplier) coeff = ad::Hadamard(coeff, *multiplier);
  return ad::ScatterSum(ad::Hadamard(zs, coeff), gt.dst32, gt.num_nodes);
}

/// Encoder multiplier r_e = in_degree(target) * S_e, so uniform importance
/// gives r = 1; self-loops use r = 1.
inline Value ImportanceMultiplier(const GraphTensors& gt, const ImportanceValues& s) {
  Tape& tape = *s.normalized.tape();
  const Value scaled = ad::Hadamard(s.normalized, tape.Constant(gt.in_degree));
  return ad::ConcatRows(scaled, tape.Constant(Matrix(gt.num_nodes, 1, 1.0)));
}

/// Two attention layers, ELU between, nothing after the second. Feature
/// dropout on the input in train mode.
inline Value Encode(const GraphTensors& gt, Value features, const ParamValues& p,
                    std::optional<Value> multiplier, double dropout, Rng* rng) {
  Value x = features;
  if (rng && dropout > 0.0) x = ad::Dropout(x, dropout, *rng);
  const Value h1 = ad::Elu(AttentionLayer(gt, x, p.enc1_w, p.enc1_a, multiplier));
  return AttentionLayer(gt, h1, p.enc2_w, p.enc2_a, multiplier);
}

struct SplitValues {
  Value x_c, x_o, gate;
};

/// g = sigmoid(x W_g + b); x_c = g * x; x_o = x - x_c.
inline SplitValues SplitFeatures(Value x, Value gate_w, Value gate_b) {
  const Value gate = ad::Sigmoid(ad::Add(ad::MatMul(x, gate_w), gate_b));
  const Value x_c = ad::Hadamard(gate, x);
  return {x_c, ad::Sub(x, x_c), gate};
}

/// ELU(weighted_mean_{j in N(i) + i}(v_j) W).
inline Value MeanAggregateLayer(const GraphTensors& gt, Value v, Value w) {
  Tape& tape = *v.tape();
  const Value msg = ad::Hadamard(ad::RowSelect(v, gt.src), tape.Constant(gt.mean_coeff));
  return ad::Elu(ad::MatMul(ad::ScatterSum(msg, gt.dst32, gt.num_nodes), w));
}

struct FusionValues {
  Value x_c_branch, x_o_branch, alpha, x_f;
};

inline FusionValues BranchAndFuse(const GraphTensors& gt, Value x_c, Value x_o,
                                  const ParamValues& p) {
  Tape& tape = *x_c.tape();
  FusionValues out;
  out.x_c_branch = MeanAggregateLayer(gt, x_c, p.ctx_w);
  out.x_o_branch = MeanAggregateLayer(gt, x_o, p.obj_w);
  out.alpha = ad::Sigmoid(
      ad::Add(ad::MatMul(ad::ConcatCols(out.x_c_branch, out.x_o_branch), p.fuse_w), p.fuse_b));
  const Value beta = ad::Sub(tape.Constant(Matrix(gt.num_nodes, 1, 1.0)), out.alpha);
  out.x_f = ad::Add(ad::Hadamard(out.x_c_branch, out.alpha), ad::Hadamard(out.x_o_branch, beta));
  return out;
}

struct ForwardOutputs {
  Value x, x_c, x_o, gate;
  Value x_c_branch, x_o_branch, x_f, alpha;
  Value logits;
  ImportanceValues importance;  // unset when the model runs without EIM
};

/// Full forward pass. `rng` non-null means train mode (feature dropout on).
inline ForwardOutputs Forward(const ModelConfig& cfg, const ParamValues& p, const GraphTensors& gt,
                              const Matrix& features, Rng* rng) {
  if (features.rows() != gt.num_nodes || features.cols() != cfg.input_dim) {
    throw UsageError("model", "features " + features.shape() + " do not match " +
                                  std::to_string(gt.num_nodes) + " nodes x input_dim " +
                                  std::to_string(cfg.input_dim));
  }
  Tape& tape = *p.enc1_w.tape();
  const Value input = tape.Constant(features);
  ForwardOutputs out;
  std::optional<Value> multiplier;
  if (cfg.use_eim) {
    out.importance = EdgeImportance(gt, input, p.eim_w, p.eim_a, cfg.eim_variant);
    multiplier = ImportanceMultiplier(gt, out.importance);
  }
  out.x = Encode(gt, input, p, multiplier, cfg.dropout, rng);
  const SplitValues split = SplitFeatures(out.x, p.gate_w, p.gate_b);
  out.x_c = split.x_c;
  out.x_o = split.x_o;
  out.gate = split.gate;
  const FusionValues fused = BranchAndFuse(gt, out.x_c, out.x_o, p);
  out.x_c_branch = fused.x_c_branch;
  out.x_o_branch = fused.x_o_branch;
  out.alpha = fused.alpha;
  out.x_f = fused.x_f;
  out.logits = ad::Add(ad::MatMul(out.x_f, p.cls_w), p.cls_b);
  return out;
}

/// X + N(0, sigma^2) per entry.
inline Matrix PerturbFeatures(const Matrix& features, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw UsageError("model", "feature noise sigma must be >= 0");
  Matrix out = features;
  if (sigma == 0.0) return out;
  for (double& v : out.data()) v += sigma * rng.Normal();
  return out;
}

struct CounterfactualFeatures {
  Value x_c, x_o;
  std::vector<size_t> permutation;  // x_c~[i] = x_c[permutation[i]]
};

/// Context intervention: every node receives another node's context row
/// (uniform random permutation); the object part is left as is.
inline CounterfactualFeatures GenerateCounterfactualFeatures(Value x_c, Value x_o, Rng& rng) {
  if (x_c.rows() != x_o.rows()) {
    throw UsageError("model", "counterfactual features: row counts differ");
  }
  CounterfactualFeatures cf;
  cf.permutation = rng.Permutation(x_c.rows());
  cf.x_c = ad::RowSelect(x_c, cf.permutation);
  cf.x_o = x_o;
  return cf;
}

struct LossWeights {
  double contrastive = 0.5;
  double orthogonality = 0.1;
  double mutual_info = 0.1;
};

struct LossReport {
  double total = 0.0;
  double classification = 0.0;
  double contrastive = 0.0;
  double orthogonality = 0.0;
  double mutual_info = 0.0;
  LossWeights weights;
};

struct Losses {
  Value total;
  LossReport report;
};

/// Mean cross-entropy over `nodes`.
inline Value CrossEntropy(Value logits, const std::vector<int>& labels,
                          const std::vector<size_t>& nodes) {
  if (nodes.empty()) throw UsageError("model", "classification loss over an empty node mask");
  std::vector<size_t> cls;
  cls.reserve(nodes.size());
  for (size_t v : nodes) cls.push_back(static_cast<size_t>(labels.at(v)));
  const Value logp = ad::LogSoftmaxRows(ad::RowSelect(logits, nodes));
  return ad::Scale(ad::ReduceMean(ad::GatherCols(logp, std::move(cls))), -1.0);
}

/// Mean squared difference of class probabilities over all nodes and classes.
inline Value ContrastiveConsistency(Value logits_a, Value logits_b) {
  return ad::ReduceMean(ad::Square(ad::Sub(ad::SoftmaxRows(logits_a), ad::SoftmaxRows(logits_b))));
}

/// Mean squared cosine between matching rows.
inline Value Orthogonality(Value a, Value b) { return ad::ReduceMean(ad::CosineSqRows(a, b)); }

/// ||corr(a, b)||_F^2 / (cols(a) * cols(b)) with column-standardized inputs.
inline Value CrossCorrelation(Value a, Value b) {
  const double n = static_cast<double>(a.rows());
  const Value corr = ad::Scale(
      ad::MatMul(ad::Transpose(ad::StandardizeCols(a)), ad::StandardizeCols(b)), 1.0 / n);
  return ad::Scale(ad::ReduceSum(ad::Square(corr)),
                   1.0 / static_cast<double>(a.cols() * b.cols()));
}

/// total = CE + l_ctr * contrastive + l_orth * orthogonality + l_mi * MI.
/// `partner` is the forward pass on the counterfactual graph (null: the
/// contrastive term is 0). The MI term pairs the context branch output with
/// the object branch output; the feature intervention leaves x_o unchanged,
/// so the intervened object features are the object branch itself.
inline Losses ComputeLosses(const ForwardOutputs& main, const ForwardOutputs* partner,
                            const std::vector<int>& labels, const std::vector<size_t>& train_nodes,
                            const LossWeights& w) {
  Tape& tape = *main.logits.tape();
  const Value ce = CrossEntropy(main.logits, labels, train_nodes);
  const Value ctr = partner ? ContrastiveConsistency(main.logits, partner->logits)
                            : tape.Constant(Matrix(1, 1));
  const Value orth = Orthogonality(main.x_c_branch, main.x_o_branch);
  const Value mi = CrossCorrelation(main.x_c_branch, main.x_o_branch);
  const Value total =
      ad::Add(ad::Add(ad::Add(ce, ad::Scale(ctr, w.contrastive)), ad::Scale(orth, w.orthogonality)),
              ad::Scale(mi, w.mutual_info));
  Losses out;
  out.total = total;
  out.report.classification = ce.item();
  out.report.contrastive = ctr.item();
  out.report.orthogonality = orth.item();
  out.report.mutual_info = mi.item();
  out.report.total = total.item();
  out.report.weights = w;
  const std::pair<const char*, double> terms[] = {
      {"classification", out.report.classification}, {"contrastive", out.report.contrastive},
      {"orthogonality", out.report.orthogonality},   {"mutual_info", out.report.mutual_info},
      {"total", out.report.total}};
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) {
      throw NumericError("model", std::string("non-finite ") + name + " loss (" +
                                      std::to_string(value) + ")");
    }
  }
  return out;
}

/// Eval-mode logits on a graph: no dropout, no perturbation.
inline Matrix PredictLogits(const ModelConfig& cfg, const ModelParams& params, const GraphBundle& g,
                            const Matrix& features) {
  Tape tape;
  const ParamValues p = Bind(tape, params, false);
  const GraphTensors gt(g);
  return Forward(cfg, p, gt, features, nullptr).logits.data();
}

}  // namespace cnl
