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

// Training loop, evaluation, cross-validation, drop-rate sweep and
// domain-shift evaluation.
//
// One training epoch:
//   1. sample counterfactual neighbours, build G_c            (skipped w/o cng)
//   2. edge importance S on G with the current parameters
//   3. group-aware perturbation of G (groups detected once)   (skipped w/o group)
//   4. drop floor(tau |E|) edges: lowest S, or uniformly w/o eim
//   5. Gaussian noise on edge weights and on features
//   6. forward on the perturbed graph, forward on G_c for the contrastive term
//   7. context-row permutation of x_c, losses, Adam step
//   8. validation on the clean graph, early stopping bookkeeping

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "cnl/autodiff.hpp"
#include "cnl/config.hpp"
#include "cnl/error.hpp"
#include "cnl/graph.hpp"
#include "cnl/intervention.hpp"
#include "cnl/metrics.hpp"
#include "cnl/model.hpp"
#include "cnl/rng.hpp"
#include "cnl/synthetic.hpp"

namespace cnl {

/// How often each pipeline stage ran; used to check ablation wiring.
struct TrainCounters {
  size_t group_detections = 0;
  size_t counterfactual_graphs = 0;
  size_t partner_forwards = 0;
  size_t group_perturbations = 0;
  size_t importance_masks = 0;
  size_t uniform_drops = 0;
  size_t feature_interventions = 0;
  std::vector<size_t> dropped_per_epoch;  // edges removed by step 4
};

struct EpochRecord {
  size_t epoch = 0;  // 1-based
  LossReport loss;
  double val_f1 = std::numeric_limits<double>::quiet_NaN();
  double val_loss = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  ModelConfig model;
  ModelParams params;  // best validation checkpoint (last epoch without validation)
  ModelParams initial;
  std::vector<EpochRecord> log;
  size_t best_epoch = 0;
  bool stopped_early = false;
  TrainCounters counters;
};

inline ModelConfig MakeModelConfig(const GraphBundle& g, const RunConfig& cfg) {
  ModelConfig m;
  m.input_dim = g.feature_dim();
  m.hidden = cfg.hidden;
  m.classes = static_cast<size_t>(g.class_count());
  m.eim_variant = cfg.eim_variant;
  m.dropout = cfg.dropout;
  m.use_eim = !cfg.ablation.without_eim;
  return m;
}

/// Argmax per row; ties go to the lower class id.
inline std::vector<int> ArgmaxRows(const Matrix& logits) {
  std::vector<int> out(logits.rows(), 0);
  for (size_t r = 0; r < logits.rows(); ++r) {
    size_t best = 0;
    for (size_t c = 1; c < logits.cols(); ++c)
      if (logits(r, c) > logits(r, best)) best = c;
    out[r] = static_cast<int>(best);
  }
  return out;
}

inline MetricReport MetricsOnNodes(const Matrix& logits, const GraphBundle& g,
                                   const std::vector<size_t>& nodes) {
  if (nodes.empty()) throw UsageError("train-eval", "evaluation over an empty node mask");
  const std::vector<int> predicted = ArgmaxRows(logits);
  std::vector<int> truth, pred;
  truth.reserve(nodes.size());
  pred.reserve(nodes.size());
  for (size_t v : nodes) {
    truth.push_back(g.labels().at(v));
    pred.push_back(predicted.at(v));
  }
  return ComputeMetrics(truth, pred, g.class_count());
}

/// Eval-mode forward on the unperturbed graph, metrics over `nodes`.
inline MetricReport Evaluate(const ModelConfig& model, const ModelParams& params,
                             const GraphBundle& g, const std::vector<size_t>& nodes) {
  return MetricsOnNodes(PredictLogits(model, params, g, g.features()), g, nodes);
}

inline std::vector<size_t> AllNodes(const GraphBundle& g) {
  std::vector<size_t> nodes(g.num_nodes());
  for (size_t v = 0; v < nodes.size(); ++v) nodes[v] = v;
  return nodes;
}

namespace internal {

inline double MeanCrossEntropy(const Matrix& logits, const std::vector<int>& labels,
                               const std::vector<size_t>& nodes) {
  double total = 0.0;
  for (size_t v : nodes) {
    double max = logits(v, 0);
    for (size_t c = 1; c < logits.cols(); ++c) max = std::max(max, logits(v, c));
    double sum = 0.0;
    for (size_t c = 0; c < logits.cols(); ++c) sum += std::exp(logits(v, c) - max);
    total += max + std::log(sum) - logits(v, static_cast<size_t>(labels[v]));
  }
  return total / static_cast<double>(nodes.size());
}

inline void CheckNodes(const GraphBundle& g, const std::vector<size_t>& nodes, const char* what) {
  for (size_t v : nodes) {
    if (v >= g.num_nodes()) {
      throw UsageError("train-eval", std::string(what) + " node " + std::to_string(v) +
                                         " out of range");
    }
  }
}

}  // namespace internal

/// Trains one model. `groups` may carry a cached detection; otherwise the
/// detector runs here (once). `rng` is only used to derive streams.
inline TrainResult Train(const GraphBundle& g, const RunConfig& cfg,
                         const std::vector<size_t>& train_nodes,
                         const std::vector<size_t>& val_nodes, const Rng& rng,
                         const GroupAssignment* groups = nullptr) {
  ValidateConfig(cfg);
  if (train_nodes.empty()) throw UsageError("train-eval", "empty training node mask");
  internal::CheckNodes(g, train_nodes, "training");
  internal::CheckNodes(g, val_nodes, "validation");
  if (g.class_count() < 1) throw DataError("train-eval", "bundle has no classes");

  TrainResult result;
  result.model = MakeModelConfig(g, cfg);
  Rng init_rng = rng.Stream("init");
  ModelParams params = InitParams(result.model, init_rng);
  result.initial = params;
  result.params = params;

  const bool use_cng = !cfg.ablation.without_cng;
  const bool use_eim = !cfg.ablation.without_eim;
  const bool use_group = !cfg.ablation.without_group;

  GroupAssignment detected;
  if (use_group && !groups) {
    detected = DetectGroups(g, cfg.group_count_hint);
    groups = &detected;
    ++result.counters.group_detections;
  }
  std::optional<CounterfactualSampler> sampler;
  if (use_cng) sampler.emplace(g, NeighbourIndex(g), cfg.cng);

  const GraphTensors clean(g);
  AdamState adam;
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  const bool validate = !val_nodes.empty();
  double best_score = -std::numeric_limits<double>::infinity();
  size_t since_improvement = 0;

  for (size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const Rng epoch_rng = rng.Stream("epoch").Stream(epoch);

    std::optional<GraphBundle> cf_graph;
    if (use_cng) {
      cf_graph = BuildCounterfactualGraph(g, sampler->Sample(epoch_rng.Stream("cng")));
      ++result.counters.counterfactual_graphs;
    }

    EdgeSubset perturbed{g, std::vector<size_t>(g.num_edges())};
    std::iota(perturbed.kept.begin(), perturbed.kept.end(), size_t{0});
    if (use_group) {
      Rng group_rng = epoch_rng.Stream("group");
      perturbed = PerturbGroupAware(g, *groups, cfg.perturb.inter_group_drop_prob, group_rng);
      ++result.counters.group_perturbations;
    }
    Rng mask_rng = epoch_rng.Stream("mask");
    EdgeSubset masked;
    if (use_eim) {
      const EdgeScores scores =
          EstimateEdgeImportance(g, g.features(), params, cfg.eim_variant).Select(perturbed.kept);
      masked = MaskByImportance(perturbed.bundle, scores, cfg.perturb.mask_drop_rate, mask_rng);
      ++result.counters.importance_masks;
    } else {
      masked = DropUniform(perturbed.bundle, cfg.perturb.mask_drop_rate, mask_rng);
      ++result.counters.uniform_drops;
    }
    result.counters.dropped_per_epoch.push_back(perturbed.bundle.num_edges() -
                                                masked.bundle.num_edges());
    Rng weight_rng = epoch_rng.Stream("edge_noise");
    const GraphBundle train_graph =
        NoiseEdgeWeights(masked.bundle, cfg.perturb.edge_noise_sigma, weight_rng);
    Rng feature_rng = epoch_rng.Stream("features");
    const Matrix features = PerturbFeatures(g.features(), cfg.feature_noise_sigma, feature_rng);

    Tape tape;
    const ParamValues p = Bind(tape, params);
    Rng dropout_main = epoch_rng.Stream("dropout");
    const GraphTensors train_tensors(train_graph);
    const ForwardOutputs main = Forward(result.model, p, train_tensors, features, &dropout_main);
    std::optional<ForwardOutputs> partner;
    if (cf_graph) {
      Rng dropout_partner = epoch_rng.Stream("dropout_cf");
      const GraphTensors cf_tensors(*cf_graph);
      partner = Forward(result.model, p, cf_tensors, features, &dropout_partner);
      ++result.counters.partner_forwards;
    }
    Rng intervention_rng = epoch_rng.Stream("intervention");
    GenerateCounterfactualFeatures(main.x_c, main.x_o, intervention_rng);
    ++result.counters.feature_interventions;

    const Losses losses = ComputeLosses(main, partner ? &*partner : nullptr, g.labels(),
                                        train_nodes, cfg.lambda);
    tape.Backward(losses.total);
    ModelParams grads = Gradients(p, params);
    {
      auto pf = params.Fields();
      const auto gf = std::as_const(grads).Fields();
      AdamStep(std::span<Matrix* const>(pf.data(), pf.size()),
               std::span<const Matrix* const>(gf.data(), gf.size()), adam, adam_cfg);
    }
    if (!AllFinite(params)) {
      throw NumericError("train-eval", "non-finite parameters after epoch " +
                                           std::to_string(epoch));
    }

    EpochRecord record;
    record.epoch = epoch;
    record.loss = losses.report;
    if (validate) {
      const Matrix logits = PredictLogits(result.model, params, g, g.features());
      record.val_f1 = MetricsOnNodes(logits, g, val_nodes).f1(cfg.f1_average);
      record.val_loss = internal::MeanCrossEntropy(logits, g.labels(), val_nodes);
      const double score =
          cfg.early_stop_metric == EarlyStopMetric::kValF1 ? record.val_f1 : -record.val_loss;
      // Ties keep the later checkpoint; only strict gains reset patience.
      if (score > best_score) {
        since_improvement = 0;
      } else {
        ++since_improvement;
      }
      if (score >= best_score) {
        best_score = score;
        result.params = params;
        result.best_epoch = epoch;
      }
    } else {
      result.params = params;
      result.best_epoch = epoch;
    }
    result.log.push_back(record);
    if (validate && cfg.early_stop_patience > 0 &&
        since_improvement >= cfg.early_stop_patience && epoch < cfg.epochs) {
      result.stopped_early = true;
      break;
    }
  }
  return result;
}

/// Node folds: nodes are shuffled once, then each class is dealt round-robin
/// over the folds, the deal continuing where the previous class stopped.
/// Classes with fewer members than folds cannot be stratified; they are
/// dealt last, after a warning.
inline std::vector<std::vector<size_t>> StratifiedFolds(const GraphBundle& g, size_t folds,
                                                        const Rng& rng,
                                                        std::vector<std::string>* warnings) {
  if (folds < 2) throw UsageError("train-eval", "folds must be >= 2");
  if (folds > g.num_nodes()) {
    throw UsageError("train-eval", std::to_string(folds) + " folds for " +
                                       std::to_string(g.num_nodes()) + " nodes");
  }
  Rng shuffle_rng = rng.Stream("folds");
  const std::vector<size_t> order = shuffle_rng.Permutation(g.num_nodes());
  std::vector<std::vector<size_t>> by_class(static_cast<size_t>(g.class_count()));
  for (size_t v : order) by_class.at(static_cast<size_t>(g.labels()[v])).push_back(v);
  std::vector<std::vector<size_t>> out(folds);
  size_t next = 0;
  std::vector<size_t> fallback;
  for (size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].empty()) continue;
    if (by_class[c].size() < folds) {
      if (warnings) {
        warnings->push_back("class " + std::to_string(c) + " has " +
                            std::to_string(by_class[c].size()) + " members for " +
                            std::to_string(folds) + " folds; not stratified");
      }
      fallback.insert(fallback.end(), by_class[c].begin(), by_class[c].end());
      continue;
    }
    for (size_t v : by_class[c]) out[next++ % folds].push_back(v);
  }
  for (size_t v : fallback) out[next++ % folds].push_back(v);
  for (auto& fold : out) std::sort(fold.begin(), fold.end());
  return out;
}

/// Splits training nodes into (train, validation) with a seeded shuffle.
inline std::pair<std::vector<size_t>, std::vector<size_t>> HoldOut(std::vector<size_t> nodes,
                                                                    double fraction, Rng rng) {
  rng.Shuffle(nodes);
  size_t count = static_cast<size_t>(std::floor(fraction * static_cast<double>(nodes.size())));
  if (fraction > 0.0 && count == 0 && nodes.size() >= 2) count = 1;
  std::vector<size_t> val(nodes.begin(), nodes.begin() + static_cast<long>(count));
  std::vector<size_t> train(nodes.begin() + static_cast<long>(count), nodes.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

struct FoldResult {
  size_t fold = 0;  // 0-based
  std::vector<size_t> test_nodes;
  MetricReport test;
  TrainResult train;
};

struct CvResult {
  std::vector<FoldResult> folds;
  MeanStd f1;
  F1Average average = F1Average::kMacro;
  std::vector<std::string> warnings;
};

/// Runs `jobs` functions on up to `threads` workers; job i writes slot i.
inline void RunParallel(size_t count, size_t threads, const std::function<void(size_t)>& job) {
  if (threads <= 1 || count <= 1) {
    for (size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  for (size_t start = 0; start < count; start += threads) {
    std::vector<std::thread> pool;
    for (size_t i = start; i < std::min(count, start + threads); ++i) {
      pool.emplace_back([&, i] {
        try {
          job(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// k-fold cross-validation. Groups are detected once on the full graph and
/// shared by all folds. `on_fold` sees folds in order.
inline CvResult CrossValidate(const GraphBundle& g, const RunConfig& cfg,
                              const std::function<void(const FoldResult&)>& on_fold = {}) {
  ValidateConfig(cfg);
  const Rng root(cfg.seed);
  CvResult cv;
  cv.average = cfg.f1_average;
  const auto folds = StratifiedFolds(g, cfg.folds, root, &cv.warnings);
  std::optional<GroupAssignment> groups;
  if (!cfg.ablation.without_group) groups = DetectGroups(g, cfg.group_count_hint);

  cv.folds.resize(folds.size());
  RunParallel(folds.size(), cfg.threads, [&](size_t k) {
    const Rng fold_rng = root.Stream("fold").Stream(k);
    std::vector<size_t> rest;
    for (size_t j = 0; j < folds.size(); ++j)
      if (j != k) rest.insert(rest.end(), folds[j].begin(), folds[j].end());
    std::sort(rest.begin(), rest.end());
    auto [train_nodes, val_nodes] = HoldOut(rest, cfg.val_fraction, fold_rng.Stream("holdout"));
    FoldResult& out = cv.folds[k];
    out.fold = k;
    out.test_nodes = folds[k];
    out.train = Train(g, cfg, train_nodes, val_nodes, fold_rng, groups ? &*groups : nullptr);
    if (groups) out.train.counters.group_detections = 1;
    out.test = Evaluate(out.train.model, out.train.params, g, out.test_nodes);
    if (on_fold && cfg.threads <= 1) on_fold(out);
  });
  if (on_fold && cfg.threads > 1)
    for (const FoldResult& f : cv.folds) on_fold(f);
  std::vector<double> scores;
  for (const FoldResult& f : cv.folds) scores.push_back(f.test.f1(cfg.f1_average));
  cv.f1 = Summarize(scores);
  return cv;
}

struct SweepRow {
  double tau = 0.0;
  MeanStd f1;
  double delta = 0.0;  // f1.mean minus the tau = 0.1 mean
};

inline constexpr double kSweepBaselineTau = 0.1;

/// Cross-validation per drop rate; deltas are relative to tau = 0.1 (run
/// additionally when not among `taus`).
inline std::vector<SweepRow> SensitivitySweep(
    const GraphBundle& g, const RunConfig& cfg, const std::vector<double>& taus,
    const std::function<void(const SweepRow&)>& on_row = {}) {
  if (taus.empty()) throw UsageError("train-eval", "sweep needs at least one tau");
  std::vector<SweepRow> rows;
  std::optional<double> baseline;
  for (double tau : taus) {
    RunConfig run = cfg;
    run.perturb.mask_drop_rate = tau;
    SweepRow row;
    row.tau = tau;
    row.f1 = CrossValidate(g, run).f1;
    if (tau == kSweepBaselineTau) baseline = row.f1.mean;
    rows.push_back(row);
  }
  if (!baseline) {
    RunConfig run = cfg;
    run.perturb.mask_drop_rate = kSweepBaselineTau;
    baseline = CrossValidate(g, run).f1.mean;
  }
  for (SweepRow& row : rows) {
    row.delta = row.f1.mean - *baseline;
    if (on_row) on_row(row);
  }
  return rows;
}

struct NamedBundle {
  std::string name;
  GraphBundle bundle;
};

struct DomainResult {
  std::string name;
  MetricReport report;
};

struct ShiftResult {
  TrainResult train;
  std::vector<DomainResult> domains;
};

/// Trains once on `train` (validation hold-out from its nodes) and evaluates
/// the frozen parameters on every node of each test bundle.
inline ShiftResult DomainShiftEval(const GraphBundle& train, const std::vector<NamedBundle>& tests,
                                   const RunConfig& cfg) {
  std::string mismatches;
  for (const NamedBundle& t : tests) {
    if (t.bundle.feature_dim() != train.feature_dim() ||
        t.bundle.class_count() != train.class_count()) {
      mismatches += " " + t.name + " (feature_dim " + std::to_string(t.bundle.feature_dim()) +
                    ", classes " + std::to_string(t.bundle.class_count()) + ")";
    }
  }
  if (!mismatches.empty()) {
    throw DataError("train-eval", "domains differ from the training bundle (feature_dim " +
                                      std::to_string(train.feature_dim()) + ", classes " +
                                      std::to_string(train.class_count()) + "):" + mismatches);
  }
  const Rng root(cfg.seed);
  auto [train_nodes, val_nodes] =
      HoldOut(AllNodes(train), cfg.val_fraction, root.Stream("holdout"));
  ShiftResult out;
  out.train = Train(train, cfg, train_nodes, val_nodes, root.Stream("shift"));
  for (const NamedBundle& t : tests) {
    out.domains.push_back(
        {t.name, Evaluate(out.train.model, out.train.params, t.bundle, AllNodes(t.bundle))});
  }
  return out;
}

struct BenchmarkVariant {
  Ablation ablation;
  std::vector<double> f1_per_seed;
  double mean = 0.0;
};

/// Synthetic shift benchmark: for every seed a fresh train/test pair is
/// generated (spec seed = run seed = the seed), each variant is trained on
/// the train split and scored on the shifted test split.
inline std::vector<BenchmarkVariant> SyntheticShiftBenchmark(
    const RunConfig& cfg, const std::vector<uint64_t>& seeds, const std::vector<Ablation>& variants,
    const std::function<void(uint64_t, const Ablation&, double)>& on_result = {}) {
  std::vector<BenchmarkVariant> out;
  for (const Ablation& a : variants) out.push_back({a, {}, 0.0});
  for (uint64_t seed : seeds) {
    SyntheticSpec spec = cfg.synth;
    spec.seed = seed;
    const SyntheticData data = GenerateSynthetic(spec);
    for (BenchmarkVariant& v : out) {
      RunConfig run = cfg;
      run.seed = seed;
      run.ablation = v.ablation;
      const ShiftResult r = DomainShiftEval(data.train, {{"test", data.test}}, run);
      const double f1 = r.domains[0].report.f1(cfg.f1_average);
      v.f1_per_seed.push_back(f1);
      if (on_result) on_result(seed, v.ablation, f1);
    }
  }
  for (BenchmarkVariant& v : out) v.mean = Summarize(v.f1_per_seed).mean;
  return out;
}

}  // namespace cnl
