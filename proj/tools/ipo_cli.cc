// Copyright 2026 The IPO Workbench Authors
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


// Command-line front end: run, table, plotdata, eval, selftest.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ipo/experiment.h"
#include "ipo/gridworld.h"
#include "ipo/policy_nn.h"
#include "ipo/rl_train.h"
#include "ipo/selftest.h"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using ipo::exp::ExperimentConfig;

struct CommonFlags {
  std::string config;
  std::string kind;
  int seeds = 0;
  std::string out;
  std::string methods;
  int jobs = 0;
};

void AddCommon(CLI::App* cmd, CommonFlags& f, bool with_run_flags) {
  cmd->add_option("--config", f.config, "Experiment config (JSON)");
  cmd->add_option("--kind", f.kind,
                  "Use the defaults of a kind instead of a config file: "
                  "lqr-table-1, lqr-table-2, colored-keys");
  cmd->add_option("--seeds", f.seeds, "Use seeds 0..N-1")->check(CLI::PositiveNumber);
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--methods", f.methods, "Comma-separated method list");
  if (with_run_flags) {
    cmd->add_option("--jobs", f.jobs, "Parallel cells (default: all cores)")
        ->check(CLI::NonNegativeNumber);
  }
}

ExperimentConfig ResolveConfig(const CommonFlags& f) {
  if (f.config.empty() == f.kind.empty()) {
    throw std::invalid_argument("give exactly one of --config or --kind");
  }
  ExperimentConfig c = f.config.empty() ? ipo::exp::DefaultConfig(f.kind)
                                        : ipo::exp::LoadConfig(f.config);
  if (f.seeds > 0) {
    c.seeds.clear();
    for (int s = 0; s < f.seeds; ++s) c.seeds.push_back(s);
  }
  if (!f.methods.empty()) {
    c.methods.clear();
    std::stringstream in(f.methods);
    std::string m;
    while (std::getline(in, m, ',')) {
      if (!m.empty()) c.methods.push_back(m);
    }
  }
  c.Validate();
  return c;
}

fs::path OutDir(const ExperimentConfig& c, const CommonFlags& f) {
  return ipo::exp::ResolveOutputDir(
      c, f.out.empty() ? std::nullopt : std::optional<std::string>(f.out));
}

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

int PrintTable(const ExperimentConfig& c, const fs::path& dir) {
  const auto records = ipo::exp::LoadRecords(dir);
  const ipo::exp::Table t = ipo::exp::EmitTable(c, records);
  fs::create_directories(dir);
  WriteText(dir / "table.csv", t.csv);
  WriteText(dir / "table.txt", t.text);
  std::cout << t.text;
  for (const std::string& w : t.warnings) std::cerr << "warning: " << w << "\n";
  return 0;
}

int Run(const CommonFlags& f, bool no_resume) {
  const ExperimentConfig c = ResolveConfig(f);
  const fs::path dir = OutDir(c, f);
  ipo::exp::RunOptions opts;
  opts.jobs = f.jobs > 0 ? f.jobs
                         : std::max(1u, std::thread::hardware_concurrency());
  opts.resume = !no_resume;
  opts.log = [](const std::string& m) { std::cerr << m << "\n"; };
  std::cerr << "config " << ipo::exp::ConfigHash(c) << " -> " << dir.string()
            << " (" << ipo::exp::EnumerateCells(c).size() << " cells, "
            << opts.jobs << " jobs)\n";
  ipo::exp::RunExperiment(c, dir, opts);
  return PrintTable(c, dir);
}

int Eval(const std::string& checkpoint, const std::string& color,
         int episodes, std::optional<uint64_t> eval_seed) {
  const ipo::nn::Checkpoint ckpt = ipo::nn::LoadCheckpoint(checkpoint);
  if (!ckpt.meta.contains("config") || !ckpt.meta.contains("seed")) {
    throw std::invalid_argument("checkpoint lacks experiment metadata");
  }
  ExperimentConfig c = ipo::exp::ConfigFromJson(ckpt.meta["config"]);
  if (!color.empty()) {
    const auto parsed = ipo::grid::ParseColor(color);
    if (!parsed) throw std::invalid_argument("unknown color " + color);
    c.grid.test_color = *parsed;
  }
  const uint64_t seed = ckpt.meta["seed"].get<uint64_t>();
  const auto layouts = ipo::exp::MakeGridLayouts(c, seed);
  std::vector<ipo::rl::EnvSpec> envs = layouts.test;
  if (std::find(c.grid.train_colors.begin(), c.grid.train_colors.end(),
                c.grid.test_color) != c.grid.train_colors.end()) {
    for (const auto& pool : layouts.train) {
      if (pool.name == ipo::grid::ColorName(c.grid.test_color)) envs = pool.specs;
    }
  }
  ipo::rl::TrainedPolicy policy{ckpt.nets};
  const uint64_t s = eval_seed.value_or(
      ipo::SplitSeed(ipo::exp::ProblemSeed(c, seed), "eval-test"));
  const double reward = ipo::rl::Evaluate(policy, envs, episodes, s);
  const json out = {{"schema_version", ipo::exp::kResultSchemaVersion},
                    {"checkpoint", checkpoint},
                    {"method", ckpt.meta.value("method", "")},
                    {"seed", seed},
                    {"color", std::string(ipo::grid::ColorName(c.grid.test_color))},
                    {"episodes", episodes},
                    {"eval_seed", s},
                    {"action_selection", "sampled"},
                    {"mean_reward", reward}};
  std::cout << out.dump() << "\n";
  return 0;
}

int SelfTest() {
  const auto results = ipo::oracle::RunSelfTests();
  int failures = 0;
  for (const auto& r : results) {
    const json line = {{"schema_version", ipo::exp::kResultSchemaVersion},
                       {"check", r.name},
                       {"passed", r.passed},
                       {"measured", r.measured},
                       {"tolerance", r.tolerance},
                       {"detail", r.detail}};
    std::cout << line.dump() << "\n";
    if (!r.passed) ++failures;
  }
  std::cerr << results.size() - failures << "/" << results.size()
            << " checks passed\n";
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Invariant policy optimization workbench"};
  app.require_subcommand(1);

  CommonFlags run_flags, table_flags, plot_flags;
  bool no_resume = false;
  CLI::App* run = app.add_subcommand("run", "Run an experiment sweep");
  AddCommon(run, run_flags, true);
  run->add_flag("--no-resume", no_resume, "Recompute cells that already have results");

  CLI::App* table = app.add_subcommand("table", "Print the result table");
  AddCommon(table, table_flags, false);

  CLI::App* plot = app.add_subcommand("plotdata", "Write plot-ready CSV series");
  AddCommon(plot, plot_flags, false);

  std::string checkpoint, color;
  int episodes = 50;
  std::optional<uint64_t> eval_seed;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a saved gridworld policy");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--color", color, "Key color of the evaluation layouts");
  eval->add_option("--episodes", episodes, "Episodes")->check(CLI::PositiveNumber);
  eval->add_option("--eval-seed", eval_seed, "Action sampling seed");

  CLI::App* selftest = app.add_subcommand("selftest", "Check against reference oracles");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return Run(run_flags, no_resume);
    if (*table) {
      const ExperimentConfig c = ResolveConfig(table_flags);
      return PrintTable(c, OutDir(c, table_flags));
    }
    if (*plot) {
      const ExperimentConfig c = ResolveConfig(plot_flags);
      for (const fs::path& p : ipo::exp::EmitPlotData(c, OutDir(c, plot_flags))) {
        std::cout << p.string() << "\n";
      }
      return 0;
    }
    if (*eval) return Eval(checkpoint, color, episodes, eval_seed);
    if (*selftest) return SelfTest();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
