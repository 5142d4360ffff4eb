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

// cnl: command-line front end. Exit codes: 0 ok, 1 usage, 2 data, 3 numeric.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"

#include "cnl/bundle_io.hpp"
#include "cnl/checkpoint.hpp"
#include "cnl/config.hpp"
#include "cnl/error.hpp"
#include "cnl/model.hpp"
#include "cnl/musae.hpp"
#include "cnl/report.hpp"
#include "cnl/synthetic.hpp"
#include "cnl/train.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out = "out";
  std::optional<uint64_t> seed;
  std::optional<size_t> threads;
  std::string log_level = "info";

  std::string bundle;
  std::string musae;
  bool synthetic = false;
  bool dump_edge_scores = false;
  std::string checkpoint;
  std::string variants = "cng,eim,group,eim+group";
  std::string train_bundle;
  std::vector<std::string> test_bundles;
};

cnl::RunConfig BuildConfig(const Options& o) {
  cnl::RunConfig cfg;
  if (!o.config_path.empty()) cnl::ApplyConfigFile(cfg, o.config_path);
  for (const std::string& s : o.overrides) cnl::ApplyOverride(cfg, s);
  if (o.seed) cfg.seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  cnl::ValidateConfig(cfg);
  return cfg;
}

void WriteEffectiveConfig(const Options& o, const cnl::RunConfig& cfg) {
  cnl::WriteJson(fs::path(o.out) / "config_effective.json", cnl::EffectiveConfigJson(cfg));
}

// Graph selected by --bundle, --musae or --synthetic (train split).
cnl::GraphBundle LoadInput(const Options& o, const cnl::RunConfig& cfg, std::string* name) {
  const int chosen = !o.bundle.empty() + !o.musae.empty() + o.synthetic;
  if (chosen != 1) {
    throw cnl::UsageError("cli", "give exactly one of --bundle, --musae, --synthetic");
  }
  if (!o.bundle.empty()) {
    if (name) *name = fs::path(o.bundle).filename().string();
    return cnl::LoadBundle(o.bundle);
  }
  if (!o.musae.empty()) {
    if (name) *name = fs::path(o.musae).filename().string();
    return cnl::ParseMusae(o.musae);
  }
  if (name) *name = "synthetic_train";
  return cnl::GenerateSynthetic(cfg.synth).train;
}

void PrintFold(const cnl::FoldResult& f, cnl::F1Average average) {
  std::printf("fold=%zu f1=%.4f\n", f.fold + 1, f.test.f1(average));
  std::fflush(stdout);
}

cnl::OrderedJson RunHeader(const std::string& command, const std::string& input,
                           const cnl::GraphBundle& g) {
  cnl::OrderedJson j;
  j["command"] = command;
  j["input"] = input;
  j["num_nodes"] = g.num_nodes();
  j["num_edges"] = g.num_edges();
  j["bundle_hash"] = g.Hash();
  return j;
}

void WriteEdgeScores(const fs::path& path, const cnl::GraphBundle& g, const cnl::ModelParams& p,
                     cnl::EimVariant variant) {
  const cnl::EdgeScores s = cnl::EstimateEdgeImportance(g, g.features(), p, variant);
  std::string text = "src,dst,raw_logit,normalized\n";
  for (size_t e = 0; e < g.num_edges(); ++e) {
    text += std::to_string(g.edges()[e].src) + ',' + std::to_string(g.edges()[e].dst) + ',' +
            cnl::FormatDouble(s.raw[e]) + ',' + cnl::FormatDouble(s.normalized[e]) + '\n';
  }
  cnl::WriteText(path, text);
}

int CmdValidate(const Options& o) {
  const cnl::RunConfig cfg = BuildConfig(o);
  WriteEffectiveConfig(o, cfg);
  std::string name;
  const cnl::GraphBundle g = LoadInput(o, cfg, &name);
  const cnl::NeighbourIndex index(g);
  size_t isolated = 0;
  for (cnl::NodeId v = 0; v < g.num_nodes(); ++v)
    if (index.in_degree(v) == 0 && index.out_degree(v) == 0) ++isolated;
  std::printf("nodes=%zu edges=%zu features=%zu classes=%d isolated=%zu\n", g.num_nodes(),
              g.num_edges(), g.feature_dim(), g.class_count(), isolated);
  return kExitOk;
}

int CmdSynth(const Options& o) {
  const cnl::RunConfig cfg = BuildConfig(o);
  WriteEffectiveConfig(o, cfg);
  const cnl::SyntheticData data = cnl::GenerateSynthetic(cfg.synth);
  cnl::WriteBundle(data.train, fs::path(o.out) / "train", {false, "synthetic:train"});
  cnl::WriteBundle(data.test, fs::path(o.out) / "test", {false, "synthetic:test"});
  for (const auto& [split, groups] :
       {std::pair{"train", &data.train_groups}, std::pair{"test", &data.test_groups}}) {
    std::string text = "node_id,group\n";
    for (size_t v = 0; v < groups->group_of.size(); ++v)
      text += std::to_string(v) + ',' + std::to_string(groups->group_of[v]) + '\n';
    cnl::WriteText(fs::path(o.out) / split / "groups.csv", text);
  }
  std::printf("train: nodes=%zu edges=%zu spurious_agreement=%.4f\n", data.train.num_nodes(),
              data.train.num_edges(), cnl::SpuriousAgreement(data.train, cfg.synth));
  std::printf("test: nodes=%zu edges=%zu spurious_agreement=%.4f\n", data.test.num_nodes(),
              data.test.num_edges(), cnl::SpuriousAgreement(data.test, cfg.synth));
  return kExitOk;
}

int CmdTrain(const Options& o) {
  const cnl::RunConfig cfg = BuildConfig(o);
  WriteEffectiveConfig(o, cfg);
  std::string name;
  const cnl::GraphBundle g = LoadInput(o, cfg, &name);
  const cnl::Rng root(cfg.seed);
  auto [train_nodes, val_nodes] =
      cnl::HoldOut(cnl::AllNodes(g), cfg.val_fraction, root.Stream("holdout"));
  spdlog::info("training on {} nodes, validating on {}", train_nodes.size(), val_nodes.size());
  const cnl::TrainResult run = cnl::Train(g, cfg, train_nodes, val_nodes, root.Stream("train"));
  const fs::path out(o.out);
  cnl::WriteCheckpoint((out / "model.cnl").string(), cnl::ToNamedTensors(run.params));
  cnl::WriteText(out / "epochs.csv", cnl::EpochsCsv({{-1, &run}}));
  cnl::OrderedJson j = RunHeader("train", name, g);
  j["train"] = cnl::ToJson(run);
  j["train_metrics"] = cnl::ToJson(cnl::Evaluate(run.model, run.params, g, train_nodes));
  if (!val_nodes.empty())
    j["val_metrics"] = cnl::ToJson(cnl::Evaluate(run.model, run.params, g, val_nodes));
  cnl::WriteJson(out / "metrics.json", j);
  if (o.dump_edge_scores) {
    WriteEdgeScores(out / "edge_scores.csv", g, run.params, cfg.eim_variant);
  }
  for (const cnl::EpochRecord& e : run.log) {
    spdlog::debug("epoch={} loss={:.6f} val_f1={:.4f}", e.epoch, e.loss.total, e.val_f1);
  }
  std::printf("epochs=%zu best_epoch=%zu final_loss=%.6f\n", run.log.size(), run.best_epoch,
              run.log.back().loss.total);
  return kExitOk;
}

int CmdCv(const Options& o) {
  const cnl::RunConfig cfg = BuildConfig(o);
  WriteEffectiveConfig(o, cfg);
  std::string name;
  const cnl::GraphBundle g = LoadInput(o, cfg, &name);
  spdlog::info("cross-validating: folds={} epochs={} lr={}", cfg.folds, cfg.epochs, cfg.lr);
  const cnl::CvResult cv =
      cnl::CrossValidate(g, cfg, [&](const cnl::FoldResult& f) { PrintFold(f, cfg.f1_average); });
  for (const std::string& w : cv.warnings) spdlog::warn("{}", w);
  std::vector<std::pair<int, const cnl::TrainResult*>> runs;
  for (const cnl::FoldResult& f : cv.folds)
    runs.push_back({static_cast<int>(f.fold + 1), &f.train});
  cnl::OrderedJson j = RunHeader("cv", name, g);
  j["cv"] = cnl::ToJson(cv);
  cnl::WriteJson(fs::path(o.out) / "metrics.json", j);
  cnl::WriteText(fs::path(o.out) / "epochs.csv", cnl::EpochsCsv(runs));
  std::printf("mean f1=%.4f std=%.4f\n", cv.f1.mean, cv.f1.std);
  return kExitOk;
}

int CmdAblate(const Options& o) {
  const cnl::RunConfig cfg = BuildConfig(o);
  WriteEffectiveConfig(o, cfg);
  std::string name;
  const cnl::GraphBundle g = LoadInput(o, cfg, &name);
  std::vector<cnl::Ablation> variants = {cnl::Ablation{}};
  for (size_t start = 0; start <= o.variants.size();) {
    size_t end = o.variants.find(',', start);
    if (end == std::string::npos) end = o.variants.size();
    const std::string part = o.variants.substr(start, end - start);
    if (!part.empty()) variants.push_back(cnl::ParseAblation(part));
    start = end + 1;
  }
  cnl::OrderedJson j = RunHeader("ablate", name, g);
  cnl::OrderedJson reports = cnl::OrderedJson::object();
  std::string table = "variant,f1_mean,f1_std\n";
  for (const cnl::Ablation& a : variants) {
    cnl::RunConfig run = cfg;
    run.ablation = a;
    const std::string label = a.none() ? "full" : "w/o " + cnl::ToString(a);
    spdlog::info("variant {}", label);
    const cnl::CvResult cv = cnl::CrossValidate(g, run, [&](const cnl::FoldResult& f) {
      std::printf("variant=%s ", label.c_str());
      PrintFold(f, cfg.f1_average);
    });
    reports[label] = cnl::ToJson(cv);
    table += label + ',' + cnl::FormatDouble(cv.f1.mean) + ',' + cnl::FormatDouble(cv.f1.std) +
             '\n';
    std::printf("variant=%s mean f1=%.4f std=%.4f\n", label.c_str(), cv.f1.mean, cv.f1.std);
  }
  j["variants"] = reports;
  cnl::WriteJson(fs::path(o.out) / "metrics.json", j);
  cnl::WriteText(fs::path(o.out) / "ablation.csv", table);
  return kExitOk;
}

int CmdSweep(const Options& o) {
  const cnl::RunConfig cfg = BuildConfig(o);
  WriteEffectiveConfig(o, cfg);
  std::string name;
  const cnl::GraphBundle g = LoadInput(o, cfg, &name);
  const auto rows = cnl::SensitivitySweep(g, cfg, cfg.sweep_taus, [](const cnl::SweepRow& r) {
    std::printf("tau=%s f1=%.4f delta=%+.4f\n", cnl::internal::FormatReal(r.tau).c_str(),
                r.f1.mean, r.delta);
  });
  cnl::OrderedJson j = RunHeader("sweep", name, g);
  cnl::OrderedJson table = cnl::OrderedJson::array();
  for (const cnl::SweepRow& r : rows) {
    table.push_back(
        {{"tau", r.tau}, {"f1_mean", r.f1.mean}, {"f1_std", r.f1.std}, {"delta_vs_0.1", r.delta}});
  }
  j["sweep"] = table;
  cnl::WriteJson(fs::path(o.out) / "metrics.json", j);
  cnl::WriteText(fs::path(o.out) / "sweep.csv", cnl::SweepCsv(rows));
  cnl::WriteText(fs::path(o.out) / "sweep.svg", cnl::SweepSvg(rows));
  return kExitOk;
}

int CmdShift(const Options& o) {
  const cnl::RunConfig cfg = BuildConfig(o);
  WriteEffectiveConfig(o, cfg);
  cnl::GraphBundle train;
  std::vector<cnl::NamedBundle> tests;
  std::string train_name;
  if (o.synthetic) {
    if (!o.train_bundle.empty() || !o.test_bundles.empty()) {
      throw cnl::UsageError("cli", "--synthetic cannot be combined with --train/--test");
    }
    cnl::SyntheticData data = cnl::GenerateSynthetic(cfg.synth);
    train = data.train;
    train_name = "synthetic_train";
    tests = {{"train", data.train}, {"test", data.test}};
  } else {
    if (o.train_bundle.empty() || o.test_bundles.empty()) {
      throw cnl::UsageError("cli", "shift needs --train and at least one --test (or --synthetic)");
    }
    train = cnl::LoadBundle(o.train_bundle);
    train_name = fs::path(o.train_bundle).filename().string();
    for (const std::string& spec : o.test_bundles) {
      const size_t eq = spec.find('=');
      const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
      const std::string label =
          eq == std::string::npos ? fs::path(spec).filename().string() : spec.substr(0, eq);
      tests.push_back({label, cnl::LoadBundle(path)});
    }
  }
  const cnl::ShiftResult r = cnl::DomainShiftEval(train, tests, cfg);
  for (const cnl::DomainResult& d : r.domains) {
    std::printf("domain=%s precision=%.4f recall=%.4f f1=%.4f\n", d.name.c_str(),
                d.report.macro_precision, d.report.macro_recall, d.report.macro_f1);
  }
  cnl::OrderedJson j = RunHeader("shift", train_name, train);
  j["train"] = cnl::ToJson(r.train);
  cnl::OrderedJson domains = cnl::OrderedJson::object();
  for (const cnl::DomainResult& d : r.domains) domains[d.name] = cnl::ToJson(d.report);
  j["domains"] = domains;
  cnl::WriteJson(fs::path(o.out) / "metrics.json", j);
  cnl::WriteText(fs::path(o.out) / "shift.csv", cnl::ShiftCsv(r.domains));
  cnl::WriteText(fs::path(o.out) / "shift.svg", cnl::ShiftSvg(r.domains));
  cnl::WriteText(fs::path(o.out) / "epochs.csv", cnl::EpochsCsv({{-1, &r.train}}));
  return kExitOk;
}

int CmdDumpScores(const Options& o) {
  const cnl::RunConfig cfg = BuildConfig(o);
  WriteEffectiveConfig(o, cfg);
  std::string name;
  const cnl::GraphBundle g = LoadInput(o, cfg, &name);
  cnl::ModelParams params;
  if (!o.checkpoint.empty()) {
    cnl::Rng rng(cfg.seed);
    const cnl::ModelParams reference = cnl::InitParams(cnl::MakeModelConfig(g, cfg), rng);
    params = cnl::FromNamedTensors(cnl::ReadCheckpoint(o.checkpoint), reference);
  } else {
    spdlog::info("no --checkpoint: training first");
    const cnl::Rng root(cfg.seed);
    auto [train_nodes, val_nodes] =
        cnl::HoldOut(cnl::AllNodes(g), cfg.val_fraction, root.Stream("holdout"));
    params = cnl::Train(g, cfg, train_nodes, val_nodes, root.Stream("train")).params;
  }
  WriteEdgeScores(fs::path(o.out) / "edge_scores.csv", g, params, cfg.eim_variant);
  std::printf("edges=%zu written to %s\n", g.num_edges(),
              (fs::path(o.out) / "edge_scores.csv").string().c_str());
  return kExitOk;
}

void AddCommon(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_path, "config file (key=value lines or JSON)");
  cmd->add_option("--set", o.overrides, "override one config key (key=value), repeatable");
  cmd->add_option("--out", o.out, "output directory")->capture_default_str();
  cmd->add_option("--seed", o.seed, "root seed (overrides the seed key)");
  cmd->add_option("--threads", o.threads, "parallel folds (overrides the threads key)");
  cmd->add_option("--log-level", o.log_level, "stderr verbosity")
      ->check(CLI::IsMember({"error", "warn", "info", "debug"}))
      ->capture_default_str();
  cmd->footer(cnl::ConfigHelp());
}

void AddInput(CLI::App* cmd, Options& o) {
  cmd->add_option("--bundle", o.bundle, "graph bundle directory");
  cmd->add_option("--musae", o.musae, "MUSAE region directory");
  cmd->add_flag("--synthetic", o.synthetic, "use the synthetic train split (synth_* keys)");
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_logger_st("cnl");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);

  CLI::App app{"cnl: counterfactual neighbourhood learning for node classification"};
  app.footer(cnl::ConfigHelp());
  app.require_subcommand(1);
  Options o;

  auto* validate = app.add_subcommand("validate", "load a bundle and print its counts");
  AddInput(validate, o);
  AddCommon(validate, o);
  auto* synth = app.add_subcommand("synth", "write the synthetic train/test bundles");
  AddCommon(synth, o);
  auto* train = app.add_subcommand("train", "train one model, write model.cnl");
  AddInput(train, o);
  AddCommon(train, o);
  train->add_flag("--dump-edge-scores", o.dump_edge_scores, "also write edge_scores.csv");
  auto* cv = app.add_subcommand("cv", "k-fold cross-validation");
  AddInput(cv, o);
  AddCommon(cv, o);
  auto* ablate = app.add_subcommand("ablate", "cross-validate the full model and ablations");
  AddInput(ablate, o);
  AddCommon(ablate, o);
  ablate->add_option("--variants", o.variants, "comma list of removed components (cng, eim, "
                                               "group, eim+group, ...)")
      ->capture_default_str();
  auto* sweep = app.add_subcommand("sweep", "cross-validate over mask drop rates (sweep_taus)");
  AddInput(sweep, o);
  AddCommon(sweep, o);
  auto* shift = app.add_subcommand("shift", "train on one domain, score on others");
  shift->add_option("--train", o.train_bundle, "training bundle");
  shift->add_option("--test", o.test_bundles, "test bundle, NAME=PATH or PATH; repeatable");
  shift->add_flag("--synthetic", o.synthetic, "synthetic train split vs shifted test split");
  AddCommon(shift, o);
  auto* dump = app.add_subcommand("dump-scores", "write edge_scores.csv for a bundle");
  AddInput(dump, o);
  AddCommon(dump, o);
  dump->add_option("--checkpoint", o.checkpoint, "model.cnl from `cnl train`");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  spdlog::set_level(spdlog::level::from_str(o.log_level));

  try {
    if (*validate) return CmdValidate(o);
    if (*synth) return CmdSynth(o);
    if (*train) return CmdTrain(o);
    if (*cv) return CmdCv(o);
    if (*ablate) return CmdAblate(o);
    if (*sweep) return CmdSweep(o);
    if (*shift) return CmdShift(o);
    if (*dump) return CmdDumpScores(o);
  } catch (const cnl::Error& e) {
    spdlog::error("{}", e.what());
    switch (e.kind()) {
      case cnl::ErrorKind::kUsage: return kExitUsage;
      case cnl::ErrorKind::kData: return kExitData;
      case cnl::ErrorKind::kNumeric: return kExitNumeric;
    }
  } catch (const std::filesystem::filesystem_error& e) {
    spdlog::error("[io] {}", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitData;
  }
  return kExitUsage;
}
