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

// Run configuration and its flat key registry. Config files are either
//
//   # comment
//   key = value
//
// text, or a JSON object (as written to config_effective.json).

#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "cnl/error.hpp"
#include "cnl/intervention.hpp"
#include "cnl/metrics.hpp"
#include "cnl/model.hpp"
#include "cnl/synthetic.hpp"

namespace cnl {

/// Components switched off for an ablation run ("w/o ...").
struct Ablation {
  bool without_cng = false;
  bool without_eim = false;
  bool without_group = false;

  bool none() const { return !without_cng && !without_eim && !without_group; }
  friend bool operator==(const Ablation&, const Ablation&) = default;
};

/// Comma list of removed components: "", "none", "cng", "eim+group", ...
/// Both ',' and '+' separate names.
inline Ablation ParseAblation(std::string_view text) {
  Ablation a;
  if (text.empty() || text == "none") return a;
  size_t start = 0;
  while (start <= text.size()) {
    size_t end = text.find_first_of(",+", start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view part = text.substr(start, end - start);
    if (part == "cng") {
      a.without_cng = true;
    } else if (part == "eim") {
      a.without_eim = true;
    } else if (part == "group") {
      a.without_group = true;
    } else {
      throw UsageError("config", "unknown ablation component '" + std::string(part) +
                                     "' (cng|eim|group)");
    }
    start = end + 1;
  }
  return a;
}

inline std::string ToString(const Ablation& a) {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += '+';
    out += name;
  };
  add(a.without_cng, "cng");
  add(a.without_eim, "eim");
  add(a.without_group, "group");
  return out.empty() ? "none" : out;
}

enum class EarlyStopMetric { kValF1, kValLoss };

struct RunConfig {
  uint64_t seed = 0;
  size_t epochs = 20;
  double lr = 1e-3;
  size_t folds = 5;
  double val_fraction = 0.1;
  size_t early_stop_patience = 5;
  EarlyStopMetric early_stop_metric = EarlyStopMetric::kValF1;
  F1Average f1_average = F1Average::kMacro;
  size_t hidden = 64;
  double dropout = 0.1;
  double feature_noise_sigma = 0.1;
  LossWeights lambda;
  EimVariant eim_variant = EimVariant::kInner;
  CngConfig cng;
  PerturbConfig perturb;
  int group_count_hint = 0;
  Ablation ablation;
  size_t threads = 1;
  std::vector<double> sweep_taus = {0.1, 0.15, 0.2, 0.25, 0.3};
  SyntheticSpec synth;
};

namespace internal {

inline std::string FormatReal(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename T>
T ParseValue(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc() || ptr != end) {
    throw UsageError("config", "bad value '" + std::string(text) + "' for key " +
                                   std::string(key));
  }
  return value;
}

inline std::string_view Trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace internal

struct ConfigKey {
  enum class Kind { kInteger, kReal, kText };
  std::string name;
  Kind kind;
  std::string doc;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

namespace internal {

template <typename T>
ConfigKey NumberKey(std::string name, std::string doc, T& (*ref)(RunConfig&)) {
  ConfigKey k;
  k.name = name;
  k.kind = std::is_floating_point_v<T> ? ConfigKey::Kind::kReal : ConfigKey::Kind::kInteger;
  k.doc = std::move(doc);
  k.get = [ref](const RunConfig& c) {
    const T value = ref(const_cast<RunConfig&>(c));
    if constexpr (std::is_floating_point_v<T>) {
      return FormatReal(value);
    } else {
      return std::to_string(value);
    }
  };
  k.set = [ref, name](RunConfig& c, std::string_view text) {
    ref(c) = ParseValue<T>(name, text);
  };
  return k;
}

inline ConfigKey TextKey(std::string name, std::string doc,
                         std::function<std::string(const RunConfig&)> get,
                         std::function<void(RunConfig&, std::string_view)> set) {
  return ConfigKey{std::move(name), ConfigKey::Kind::kText, std::move(doc), std::move(get),
                   std::move(set)};
}

}  // namespace internal

/// Every recognised key, in help/echo order.
inline const std::vector<ConfigKey>& ConfigKeys() {
  using internal::NumberKey;
  using internal::TextKey;
  static const std::vector<ConfigKey> keys = {
      NumberKey<uint64_t>("seed", "root seed of every random stream",
                          +[](RunConfig& c) -> uint64_t& { return c.seed; }),
      NumberKey<size_t>("epochs", "training epochs (>= 1)",
                        +[](RunConfig& c) -> size_t& { return c.epochs; }),
      NumberKey<double>("lr", "Adam learning rate", +[](RunConfig& c) -> double& { return c.lr; }),
      NumberKey<size_t>("folds", "cross-validation folds (>= 2)",
                        +[](RunConfig& c) -> size_t& { return c.folds; }),
      NumberKey<double>("val_fraction", "share of each training split held out for early stopping",
                        +[](RunConfig& c) -> double& { return c.val_fraction; }),
      NumberKey<size_t>("early_stop_patience",
                        "epochs without improvement before stopping (0: off)",
                        +[](RunConfig& c) -> size_t& { return c.early_stop_patience; }),
      TextKey(
          "early_stop_metric", "validation quantity watched by early stopping (f1|loss)",
          [](const RunConfig& c) {
            return std::string(c.early_stop_metric == EarlyStopMetric::kValF1 ? "f1" : "loss");
          },
          [](RunConfig& c, std::string_view v) {
            if (v == "f1") {
              c.early_stop_metric = EarlyStopMetric::kValF1;
            } else if (v == "loss") {
              c.early_stop_metric = EarlyStopMetric::kValLoss;
            } else {
              throw UsageError("config", "early_stop_metric must be f1 or loss");
            }
          }),
      TextKey(
          "f1_average", "F1 averaging reported as the headline score (macro|micro)",
          [](const RunConfig& c) { return ToString(c.f1_average); },
          [](RunConfig& c, std::string_view v) { c.f1_average = ParseF1Average(std::string(v)); }),
      NumberKey<size_t>("hidden", "hidden width h",
                        +[](RunConfig& c) -> size_t& { return c.hidden; }),
      NumberKey<double>("dropout", "encoder input dropout in training",
                        +[](RunConfig& c) -> double& { return c.dropout; }),
      NumberKey<double>("feature_noise_sigma", "std of Gaussian feature noise in training",
                        +[](RunConfig& c) -> double& { return c.feature_noise_sigma; }),
      NumberKey<double>("lambda_ctr", "weight of the contrastive consistency loss",
                        +[](RunConfig& c) -> double& { return c.lambda.contrastive; }),
      NumberKey<double>("lambda_orth", "weight of the orthogonality loss",
                        +[](RunConfig& c) -> double& { return c.lambda.orthogonality; }),
      NumberKey<double>("lambda_mi", "weight of the cross-correlation (MI proxy) loss",
                        +[](RunConfig& c) -> double& { return c.lambda.mutual_info; }),
      TextKey(
          "eim_variant", "edge importance logit form (inner|elementwise)",
          [](const RunConfig& c) { return ToString(c.eim_variant); },
          [](RunConfig& c, std::string_view v) {
            c.eim_variant = ParseEimVariant(std::string(v));
          }),
      TextKey(
          "cng_strategy", "counterfactual neighbour sampling (random|similar|dissimilar)",
          [](const RunConfig& c) { return ToString(c.cng.strategy); },
          [](RunConfig& c, std::string_view v) {
            c.cng.strategy = ParseCngStrategy(std::string(v));
          }),
      NumberKey<size_t>("cng_k", "counterfactual neighbours per node",
                        +[](RunConfig& c) -> size_t& { return c.cng.k; }),
      NumberKey<size_t>("cng_candidate_pool", "ranked candidates sampled from (>= cng_k)",
                        +[](RunConfig& c) -> size_t& { return c.cng.candidate_pool; }),
      NumberKey<double>("inter_group_drop_prob", "drop probability of inter-group edges",
                        +[](RunConfig& c) -> double& { return c.perturb.inter_group_drop_prob; }),
      NumberKey<double>("mask_drop_rate", "tau: share of lowest-importance edges removed",
                        +[](RunConfig& c) -> double& { return c.perturb.mask_drop_rate; }),
      NumberKey<double>("edge_noise_sigma", "std of Gaussian edge-weight noise",
                        +[](RunConfig& c) -> double& { return c.perturb.edge_noise_sigma; }),
      NumberKey<int>("group_count_hint", "merge detected groups down to this count (0: no merge)",
                     +[](RunConfig& c) -> int& { return c.group_count_hint; }),
      TextKey(
          "ablate", "components removed (none or a list of cng,eim,group)",
          [](const RunConfig& c) { return ToString(c.ablation); },
          [](RunConfig& c, std::string_view v) { c.ablation = ParseAblation(v); }),
      NumberKey<size_t>("threads", "parallel folds (1: fully deterministic order)",
                        +[](RunConfig& c) -> size_t& { return c.threads; }),
      TextKey(
          "sweep_taus", "mask drop rates visited by the sweep",
          [](const RunConfig& c) {
            std::string out;
            for (double t : c.sweep_taus) out += (out.empty() ? "" : ",") + internal::FormatReal(t);
            return out;
          },
          [](RunConfig& c, std::string_view v) {
            c.sweep_taus.clear();
            size_t start = 0;
            while (start <= v.size()) {
              size_t end = v.find(',', start);
              if (end == std::string_view::npos) end = v.size();
              c.sweep_taus.push_back(internal::ParseValue<double>(
                  "sweep_taus", internal::Trim(v.substr(start, end - start))));
              start = end + 1;
            }
          }),
      NumberKey<size_t>("synth_num_nodes", "synthetic benchmark: nodes per split",
                        +[](RunConfig& c) -> size_t& { return c.synth.num_nodes; }),
      NumberKey<size_t>("synth_num_groups", "synthetic benchmark: planted blocks",
                        +[](RunConfig& c) -> size_t& { return c.synth.num_groups; }),
      NumberKey<double>("synth_intra_edge_prob", "synthetic benchmark: in-block edge probability",
                        +[](RunConfig& c) -> double& { return c.synth.intra_edge_prob; }),
      NumberKey<double>("synth_inter_edge_prob",
                        "synthetic benchmark: cross-block edge probability",
                        +[](RunConfig& c) -> double& { return c.synth.inter_edge_prob; }),
      NumberKey<size_t>("synth_causal_dim", "synthetic benchmark: causal block width",
                        +[](RunConfig& c) -> size_t& { return c.synth.causal_dim; }),
      NumberKey<size_t>("synth_spurious_dim", "synthetic benchmark: spurious block width",
                        +[](RunConfig& c) -> size_t& { return c.synth.spurious_dim; }),
      NumberKey<size_t>("synth_noise_dim", "synthetic benchmark: noise block width",
                        +[](RunConfig& c) -> size_t& { return c.synth.noise_dim; }),
      NumberKey<double>("synth_spurious_train_corr",
                        "synthetic benchmark: spurious/label agreement in train",
                        +[](RunConfig& c) -> double& { return c.synth.spurious_train_corr; }),
      NumberKey<double>("synth_spurious_test_corr",
                        "synthetic benchmark: spurious/label agreement in test",
                        +[](RunConfig& c) -> double& { return c.synth.spurious_test_corr; }),
      NumberKey<uint64_t>("synth_seed", "synthetic benchmark: generator seed",
                          +[](RunConfig& c) -> uint64_t& { return c.synth.seed; }),
      NumberKey<double>("synth_causal_scale", "synthetic benchmark: std of block means",
                        +[](RunConfig& c) -> double& { return c.synth.causal_scale; }),
      NumberKey<double>("synth_causal_noise", "synthetic benchmark: causal noise std",
                        +[](RunConfig& c) -> double& { return c.synth.causal_noise; }),
      NumberKey<double>("synth_spurious_scale", "synthetic benchmark: spurious signal magnitude",
                        +[](RunConfig& c) -> double& { return c.synth.spurious_scale; }),
      NumberKey<double>("synth_spurious_noise", "synthetic benchmark: spurious noise std",
                        +[](RunConfig& c) -> double& { return c.synth.spurious_noise; }),
  };
  return keys;
}

inline const ConfigKey& FindConfigKey(std::string_view name) {
  for (const ConfigKey& k : ConfigKeys())
    if (k.name == name) return k;
  throw UsageError("config", "unknown config key '" + std::string(name) + "'");
}

/// Range checks shared by every entry point.
inline void ValidateConfig(const RunConfig& c) {
  auto fail = [](const std::string& msg) { throw UsageError("config", msg); };
  if (c.epochs < 1) fail("epochs must be >= 1");
  if (c.folds < 2) fail("folds must be >= 2");
  if (!(c.lr > 0.0)) fail("lr must be > 0");
  if (!(c.val_fraction >= 0.0 && c.val_fraction < 1.0)) fail("val_fraction must lie in [0,1)");
  if (c.hidden < 1) fail("hidden must be >= 1");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) fail("dropout must lie in [0,1)");
  if (!(c.feature_noise_sigma >= 0.0)) fail("feature_noise_sigma must be >= 0");
  if (!(c.lambda.contrastive >= 0.0 && c.lambda.orthogonality >= 0.0 &&
        c.lambda.mutual_info >= 0.0)) {
    fail("loss weights must be >= 0");
  }
  if (c.cng.candidate_pool < c.cng.k) fail("cng_candidate_pool must be >= cng_k");
  if (!(c.perturb.inter_group_drop_prob >= 0.0 && c.perturb.inter_group_drop_prob <= 1.0)) {
    fail("inter_group_drop_prob must lie in [0,1]");
  }
  if (!(c.perturb.mask_drop_rate >= 0.0 && c.perturb.mask_drop_rate < 1.0)) {
    fail("mask_drop_rate must lie in [0,1)");
  }
  if (!(c.perturb.edge_noise_sigma >= 0.0)) fail("edge_noise_sigma must be >= 0");
  if (c.threads < 1) fail("threads must be >= 1");
  for (double t : c.sweep_taus)
    if (!(t >= 0.0 && t < 1.0)) fail("sweep_taus must lie in [0,1)");
  ValidateSpec(c.synth);
}

inline void SetConfigKey(RunConfig& c, std::string_view key, std::string_view value) {
  FindConfigKey(key).set(c, internal::Trim(value));
}

/// Applies one "key=value" override.
inline void ApplyOverride(RunConfig& c, std::string_view assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw UsageError("config", "override '" + std::string(assignment) + "' is not key=value");
  }
  SetConfigKey(c, internal::Trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

/// Applies a config document: flat key=value text or a JSON object.
inline void ApplyConfigText(RunConfig& c, const std::string& text, const std::string& origin) {
  const std::string_view body = internal::Trim(text);
  if (!body.empty() && body.front() == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("config", origin + ": " + e.what());
    }
    for (const auto& [key, value] : j.items()) {
      SetConfigKey(c, key, value.is_string() ? value.get<std::string>() : value.dump());
    }
    return;
  }
  std::istringstream in(text);
  std::string line;
  size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    std::string_view view = line;
    if (const size_t hash = view.find('#'); hash != std::string_view::npos) {
      view = view.substr(0, hash);
    }
    view = internal::Trim(view);
    if (view.empty()) continue;
    try {
      ApplyOverride(c, view);
    } catch (const Error& e) {
      throw UsageError("config", origin + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

inline void ApplyConfigFile(RunConfig& c, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("config", "cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  ApplyConfigText(c, buf.str(), path.string());
}

/// Every key with its effective value; reloadable through ApplyConfigText.
inline nlohmann::ordered_json EffectiveConfigJson(const RunConfig& c) {
  nlohmann::ordered_json j;
  for (const ConfigKey& k : ConfigKeys()) {
    const std::string value = k.get(c);
    switch (k.kind) {
      case ConfigKey::Kind::kInteger:
        j[k.name] = nlohmann::ordered_json::parse(value);
        break;
      case ConfigKey::Kind::kReal:
        j[k.name] = internal::ParseValue<double>(k.name, value);
        break;
      case ConfigKey::Kind::kText:
        j[k.name] = value;
        break;
    }
  }
  return j;
}

/// One line per key: name, default, description.
inline std::string ConfigHelp() {
  const RunConfig defaults;
  std::ostringstream out;
  out << "Config keys (key = default  description):\n";
  for (const ConfigKey& k : ConfigKeys()) {
    out << "  " << k.name << " = " << k.get(defaults) << "  " << k.doc << '\n';
  }
  return out.str();
}

}  // namespace cnl
