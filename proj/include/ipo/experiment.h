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


#ifndef IPO_EXPERIMENT_H_
#define IPO_EXPERIMENT_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ipo/gridworld.h"
#include "ipo/rl_train.h"

namespace ipo::exp {

inline constexpr int kResultSchemaVersion = 1;

// Value of IPO_OUTPUT_ROOT, when set, anchors relative output paths.
inline constexpr const char* kOutputRootEnv = "IPO_OUTPUT_ROOT";

const char* CodeVersion();

struct LqrSettings {
  int n_s = 20;
  int n_a = 20;
  // Training-domain counts and distractor dimensions; the table kind decides
  // which of the two is the sweep axis (the other holds one value).
  std::vector<int> n_d = {5};
  std::vector<int> n_y = {1000};
  double lr_baseline = 0.001;
  double lr_ipo = 0.0005;
  int max_iterations = 5000;
  double relative_tolerance = 1e-7;
  int convergence_window = 50;
  int max_backtracks = 20;
  int hidden_factor = 10;
  double init_gain = 0.05;
  // Every curve_stride-th iteration (and the last) is written to the curve.
  int curve_stride = 10;
};

struct GridSettings {
  std::vector<grid::Color> train_colors = {grid::Color::kRed,
                                           grid::Color::kGreen};
  grid::Color test_color = grid::Color::kGrey;
  int layouts_per_color = 24;
  int test_envs = 50;
  int eval_episodes = 50;
  int inner_rounds = 1;
  double lr_ppo = 0.001;
  double lr_ipo = 0.0005;
  int ppo_envs = 16;
  int ipo_envs_per_domain = 8;
  bool save_checkpoints = true;
  // lr and env counts are taken from the fields above.
  rl::PpoConfig ppo;
};

struct ExperimentConfig {
  std::string kind;  // lqr-table-1 | lqr-table-2 | colored-keys
  std::vector<std::string> methods;
  std::vector<uint64_t> seeds;
  uint64_t master_seed = 0;
  std::string output;
  LqrSettings lqr;
  GridSettings grid;

  // Throws std::invalid_argument describing the first violation.
  void Validate() const;
  bool IsLqr() const { return kind != "colored-keys"; }
};

// Kind-specific defaults (methods, sweep, seeds 0..9).
ExperimentConfig DefaultConfig(const std::string& kind);

// Missing keys take the kind's defaults; unknown keys are rejected.
ExperimentConfig ConfigFromJson(const nlohmann::json& j);
ExperimentConfig LoadConfig(const std::filesystem::path& path);
nlohmann::json ToJson(const ExperimentConfig& config);

// FNV-1a of the canonical (sorted-key) dump of the normalized config,
// excluding the output path, as 16 hex digits.
std::string ConfigHash(const ExperimentConfig& config);

struct Column {
  std::string label;  // e.g. "n_d=5" or "n_y=1000" or "grey"
  int n_d = 0;
  int n_y = 0;
};

std::string AxisName(const ExperimentConfig& config);
std::vector<Column> Columns(const ExperimentConfig& config);

struct Cell {
  std::string method;
  size_t column = 0;
  uint64_t seed = 0;

  std::string Id(const ExperimentConfig& config) const;
};

// Cells in (column, method, seed) order.
std::vector<Cell> EnumerateCells(const ExperimentConfig& config);

// Seed shared by every method on a (kind family, seed) pair so methods are
// compared on identical problems.
uint64_t ProblemSeed(const ExperimentConfig& config, uint64_t seed);

// Runs one cell and returns its ResultRecord. Curves and checkpoints go
// under out_dir. Failures are reported in the record, not thrown.
nlohmann::json RunCell(const ExperimentConfig& config, const Cell& cell,
                       const std::filesystem::path& out_dir);

struct RunOptions {
  int jobs = 1;
  // Re-use per-cell result files from an earlier run with the same hash.
  bool resume = true;
  std::function<void(const std::string&)> log;
};

// Writes cells/<id>.json per cell (atomically), then records.jsonl (one
// ResultRecord per line, cell order) and summary.json.
nlohmann::json RunExperiment(const ExperimentConfig& config,
                             const std::filesystem::path& out_dir,
                             const RunOptions& options = {});

// Reads records.jsonl (or the per-cell files when it is absent).
std::vector<nlohmann::json> LoadRecords(const std::filesystem::path& out_dir);

// Mean and sample std per (method, column) over successful records.
nlohmann::json Summarize(const ExperimentConfig& config,
                         const std::vector<nlohmann::json>& records);

struct Table {
  std::string csv;
  std::string text;
  std::vector<std::string> warnings;
};

// Rows are methods (plus the oracle row for LQR kinds), columns the sweep
// axis; cells "mean±std". Cells with fewer seeds than configured are marked
// with '*', single-seed cells show "n/a" for the std.
Table EmitTable(const ExperimentConfig& config,
                const std::vector<nlohmann::json>& records);

// Writes plotdata/<method>_<column>.csv with columns
// series,step,mean,std,n aggregated over seeds; returns the paths.
std::vector<std::filesystem::path> EmitPlotData(
    const ExperimentConfig& config, const std::filesystem::path& out_dir);

// Output directory: `override_dir` when given, else config.output; relative
// paths are resolved against $IPO_OUTPUT_ROOT when set.
std::filesystem::path ResolveOutputDir(const ExperimentConfig& config,
                                       const std::optional<std::string>& override_dir);

// Environment layouts of a colored-keys cell.
struct GridLayouts {
  std::vector<rl::DomainPool> train;
  std::vector<rl::EnvSpec> test;
};
GridLayouts MakeGridLayouts(const ExperimentConfig& config, uint64_t seed);

}  // namespace ipo::exp

#endif  // IPO_EXPERIMENT_H_
