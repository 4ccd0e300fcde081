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


#include "ipo/experiment.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "ipo/errors.h"
#include "ipo/lqr.h"
#include "ipo/policy_nn.h"
#include "ipo/rng.h"

#ifndef IPO_CODE_VERSION
#define IPO_CODE_VERSION "dev"
#endif

namespace ipo::exp {

namespace fs = std::filesystem;
using nlohmann::json;

const char* CodeVersion() { return IPO_CODE_VERSION; }

namespace {

const std::vector<std::string> kLqrMethods = {"gd", "overparam", "ipo-fixed",
                                              "ipo-variable"};
const std::vector<std::string> kGridMethods = {"ppo", "ipo"};
const std::vector<std::string> kKinds = {"lqr-table-1", "lqr-table-2",
                                         "colored-keys"};

bool Contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

void Require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("config: " + what);
}

std::vector<int> IntList(const json& j, const std::string& key) {
  if (j.is_number_integer()) return {j.get<int>()};
  Require(j.is_array(), key + " must be an integer or a list of integers");
  std::vector<int> out;
  for (const json& x : j) {
    Require(x.is_number_integer(), key + " entries must be integers");
    out.push_back(x.get<int>());
  }
  return out;
}

grid::Color ColorFrom(const json& j, const std::string& key) {
  Require(j.is_string(), key + " must be a color name");
  const auto c = grid::ParseColor(j.get<std::string>());
  Require(c.has_value(), "unknown color '" + j.get<std::string>() + "'");
  return *c;
}

// Copies j[key] into *out when present, rejecting type mismatches.
template <typename T>
void Read(const json& j, const char* key, T* out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    *out = it->get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument(std::string("config: bad value for '") + key +
                                "'");
  }
}

void CheckKeys(const json& j, const std::set<std::string>& allowed,
               const std::string& where) {
  Require(j.is_object(), where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    Require(allowed.count(key) > 0, "unknown key '" + key + "' in " + where);
  }
}

std::string Sanitize(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') {
      c = '_';
    }
  }
  return s;
}

void WriteAtomically(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string Hex16(uint64_t x) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << x;
  return s.str();
}

json FiniteOrNull(double x) {
  return std::isfinite(x) ? json(x) : json(nullptr);
}

}  // namespace

void ExperimentConfig::Validate() const {
  Require(Contains(kKinds, kind), "unknown kind '" + kind + "'");
  Require(!methods.empty(), "methods must not be empty");
  const auto& allowed = IsLqr() ? kLqrMethods : kGridMethods;
  std::set<std::string> seen_methods;
  for (const std::string& m : methods) {
    Require(Contains(allowed, m), "method '" + m + "' is not valid for " + kind);
    Require(seen_methods.insert(m).second, "duplicate method '" + m + "'");
  }
  Require(!seeds.empty(), "seeds must not be empty");
  Require(std::set<uint64_t>(seeds.begin(), seeds.end()).size() == seeds.size(),
          "seeds must be distinct");
  if (IsLqr()) {
    const LqrSettings& l = lqr;
    Require(l.n_s >= 1 && l.n_a >= 1, "n_s and n_a must be positive");
    Require(!l.n_d.empty() && !l.n_y.empty(), "n_d and n_y must be non-empty");
    for (int d : l.n_d) Require(d >= 1 && d <= 100, "n_d must be in [1, 100]");
    for (int y : l.n_y) {
      Require(y == 0 || y >= l.n_s, "n_y must be 0 or at least n_s");
    }
    if (kind == "lqr-table-1") {
      Require(l.n_y.size() == 1, "lqr-table-1 sweeps n_d; give one n_y");
    } else {
      Require(l.n_d.size() == 1, "lqr-table-2 sweeps n_y; give one n_d");
    }
    Require(l.lr_baseline > 0 && l.lr_ipo > 0, "learning rates must be positive");
    Require(l.max_iterations >= 1, "max_iterations must be positive");
    Require(l.relative_tolerance >= 0, "relative_tolerance must be >= 0");
    Require(l.convergence_window >= 1, "convergence_window must be positive");
    Require(l.max_backtracks >= 0, "max_backtracks must be >= 0");
    Require(l.hidden_factor >= 1, "hidden_factor must be positive");
    Require(l.init_gain > 0 && l.init_gain < 2, "init_gain must be in (0, 2)");
    Require(l.curve_stride >= 1, "curve_stride must be positive");
  } else {
    const GridSettings& g = grid;
    Require(!g.train_colors.empty(), "train_colors must not be empty");
    std::set<grid::Color> colors(g.train_colors.begin(), g.train_colors.end());
    Require(colors.size() == g.train_colors.size(), "train_colors must be distinct");
    Require(colors.count(g.test_color) == 0,
            "test_color must differ from the training colors");
    Require(g.layouts_per_color >= 1, "layouts_per_color must be positive");
    Require(g.test_envs >= 1 && g.eval_episodes >= 1,
            "test_envs and eval_episodes must be positive");
    Require(g.inner_rounds >= 1, "inner_rounds must be positive");
    Require(g.lr_ppo > 0 && g.lr_ipo > 0, "learning rates must be positive");
    Require(g.ppo_envs >= 1 && g.ipo_envs_per_domain >= 1,
            "environment counts must be positive");
    g.ppo.Validate();
  }
}

ExperimentConfig DefaultConfig(const std::string& kind) {
  Require(Contains(kKinds, kind), "unknown kind '" + kind + "'");
  ExperimentConfig c;
  c.kind = kind;
  for (uint64_t s = 0; s < 10; ++s) c.seeds.push_back(s);
  c.output = "results/" + kind;
  if (kind == "lqr-table-1") {
    c.methods = kLqrMethods;
    c.lqr.n_d = {2, 3, 4, 5, 10};
    c.lqr.n_y = {1000};
  } else if (kind == "lqr-table-2") {
    c.methods = kLqrMethods;
    c.lqr.n_d = {5};
    c.lqr.n_y = {100, 500, 1000, 1500, 2000};
  } else {
    c.methods = kGridMethods;
  }
  return c;
}

ExperimentConfig ConfigFromJson(const json& j) {
  CheckKeys(j, {"kind", "methods", "seeds", "master_seed", "output", "lqr",
                "gridworld"},
            "config");
  Require(j.contains("kind") && j["kind"].is_string(), "kind is required");
  ExperimentConfig c = DefaultConfig(j["kind"].get<std::string>());
  Read(j, "methods", &c.methods);
  Read(j, "seeds", &c.seeds);
  Read(j, "master_seed", &c.master_seed);
  Read(j, "output", &c.output);
  if (c.IsLqr()) {
    Require(!j.contains("gridworld"), "'gridworld' is not used by " + c.kind);
    if (j.contains("lqr")) {
      const json& l = j["lqr"];
      CheckKeys(l,
                {"n_s", "n_a", "n_d", "n_y", "lr_baseline", "lr_ipo",
                 "max_iterations", "relative_tolerance", "convergence_window",
                 "max_backtracks", "hidden_factor", "init_gain",
                 "curve_stride"},
                "lqr");
      Read(l, "n_s", &c.lqr.n_s);
      Read(l, "n_a", &c.lqr.n_a);
      if (l.contains("n_d")) c.lqr.n_d = IntList(l["n_d"], "n_d");
      if (l.contains("n_y")) c.lqr.n_y = IntList(l["n_y"], "n_y");
      Read(l, "lr_baseline", &c.lqr.lr_baseline);
      Read(l, "lr_ipo", &c.lqr.lr_ipo);
      Read(l, "max_iterations", &c.lqr.max_iterations);
      Read(l, "relative_tolerance", &c.lqr.relative_tolerance);
      Read(l, "convergence_window", &c.lqr.convergence_window);
      Read(l, "max_backtracks", &c.lqr.max_backtracks);
      Read(l, "hidden_factor", &c.lqr.hidden_factor);
      Read(l, "init_gain", &c.lqr.init_gain);
      Read(l, "curve_stride", &c.lqr.curve_stride);
    }
  } else {
    Require(!j.contains("lqr"), "'lqr' is not used by " + c.kind);
    if (j.contains("gridworld")) {
      const json& g = j["gridworld"];
      CheckKeys(g,
                {"train_colors", "test_color", "layouts_per_color",
                 "test_envs", "eval_episodes", "inner_rounds", "lr_ppo",
                 "lr_ipo", "ppo_envs", "ipo_envs_per_domain",
                 "save_checkpoints", "total_steps", "n_steps", "epochs",
                 "gamma", "gae_lambda", "batch_size", "entropy_coef", "clip",
                 "value_coef", "max_grad_norm"},
                "gridworld");
      if (g.contains("train_colors")) {
        Require(g["train_colors"].is_array(), "train_colors must be a list");
        c.grid.train_colors.clear();
        for (const json& x : g["train_colors"]) {
          c.grid.train_colors.push_back(ColorFrom(x, "train_colors"));
        }
      }
      if (g.contains("test_color")) {
        c.grid.test_color = ColorFrom(g["test_color"], "test_color");
      }
      Read(g, "layouts_per_color", &c.grid.layouts_per_color);
      Read(g, "test_envs", &c.grid.test_envs);
      Read(g, "eval_episodes", &c.grid.eval_episodes);
      Read(g, "inner_rounds", &c.grid.inner_rounds);
      Read(g, "lr_ppo", &c.grid.lr_ppo);
      Read(g, "lr_ipo", &c.grid.lr_ipo);
      Read(g, "ppo_envs", &c.grid.ppo_envs);
      Read(g, "ipo_envs_per_domain", &c.grid.ipo_envs_per_domain);
      Read(g, "save_checkpoints", &c.grid.save_checkpoints);
      rl::PpoConfig& p = c.grid.ppo;
      Read(g, "total_steps", &p.total_steps);
      Read(g, "n_steps", &p.n_steps);
      Read(g, "epochs", &p.epochs);
      Read(g, "gamma", &p.gamma);
      Read(g, "gae_lambda", &p.gae_lambda);
      Read(g, "batch_size", &p.batch_size);
      Read(g, "entropy_coef", &p.entropy_coef);
      Read(g, "clip", &p.clip);
      Read(g, "value_coef", &p.value_coef);
      Read(g, "max_grad_norm", &p.max_grad_norm);
    }
  }
  c.Validate();
  return c;
}

ExperimentConfig LoadConfig(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return ConfigFromJson(j);
}

json ToJson(const ExperimentConfig& c) {
  json j;
  j["kind"] = c.kind;
  j["methods"] = c.methods;
  j["seeds"] = c.seeds;
  j["master_seed"] = c.master_seed;
  j["output"] = c.output;
  if (c.IsLqr()) {
    const LqrSettings& l = c.lqr;
    j["lqr"] = {{"n_s", l.n_s},
                {"n_a", l.n_a},
                {"n_d", l.n_d},
                {"n_y", l.n_y},
                {"lr_baseline", l.lr_baseline},
                {"lr_ipo", l.lr_ipo},
                {"max_iterations", l.max_iterations},
                {"relative_tolerance", l.relative_tolerance},
                {"convergence_window", l.convergence_window},
                {"max_backtracks", l.max_backtracks},
                {"hidden_factor", l.hidden_factor},
                {"init_gain", l.init_gain},
                {"curve_stride", l.curve_stride}};
  } else {
    const GridSettings& g = c.grid;
    std::vector<std::string> colors;
    for (grid::Color col : g.train_colors) {
      colors.emplace_back(grid::ColorName(col));
    }
    const rl::PpoConfig& p = g.ppo;
    j["gridworld"] = {{"train_colors", colors},
                      {"test_color", std::string(grid::ColorName(g.test_color))},
                      {"layouts_per_color", g.layouts_per_color},
                      {"test_envs", g.test_envs},
                      {"eval_episodes", g.eval_episodes},
                      {"inner_rounds", g.inner_rounds},
                      {"lr_ppo", g.lr_ppo},
                      {"lr_ipo", g.lr_ipo},
                      {"ppo_envs", g.ppo_envs},
                      {"ipo_envs_per_domain", g.ipo_envs_per_domain},
                      {"save_checkpoints", g.save_checkpoints},
                      {"total_steps", p.total_steps},
                      {"n_steps", p.n_steps},
                      {"epochs", p.epochs},
                      {"gamma", p.gamma},
                      {"gae_lambda", p.gae_lambda},
                      {"batch_size", p.batch_size},
                      {"entropy_coef", p.entropy_coef},
                      {"clip", p.clip},
                      {"value_coef", p.value_coef},
                      {"max_grad_norm", p.max_grad_norm}};
  }
  return j;
}

std::string ConfigHash(const ExperimentConfig& config) {
  json j = ToJson(config);
  j.erase("output");
  return Hex16(Fnv1a64(j.dump()));
}

std::string AxisName(const ExperimentConfig& config) {
  if (config.kind == "lqr-table-1") return "n_d";
  if (config.kind == "lqr-table-2") return "n_y";
  return "test_color";
}

std::vector<Column> Columns(const ExperimentConfig& config) {
  std::vector<Column> cols;
  if (config.kind == "lqr-table-1") {
    for (int d : config.lqr.n_d) {
      cols.push_back({"n_d=" + std::to_string(d), d, config.lqr.n_y.front()});
    }
  } else if (config.kind == "lqr-table-2") {
    for (int y : config.lqr.n_y) {
      cols.push_back({"n_y=" + std::to_string(y), config.lqr.n_d.front(), y});
    }
  } else {
    cols.push_back({std::string(grid::ColorName(config.grid.test_color)),
                    static_cast<int>(config.grid.train_colors.size()), 0});
  }
  return cols;
}

std::string Cell::Id(const ExperimentConfig& config) const {
  return Sanitize(method + "_" + Columns(config).at(column).label + "_seed" +
                  std::to_string(seed));
}

std::vector<Cell> EnumerateCells(const ExperimentConfig& config) {
  std::vector<Cell> cells;
  const size_t n_cols = Columns(config).size();
  for (size_t col = 0; col < n_cols; ++col) {
    for (const std::string& m : config.methods) {
      for (uint64_t s : config.seeds) cells.push_back({m, col, s});
    }
  }
  return cells;
}

uint64_t ProblemSeed(const ExperimentConfig& config, uint64_t seed) {
  return SplitSeed(config.master_seed, config.IsLqr() ? "lqr" : "colored-keys",
                   seed);
}

GridLayouts MakeGridLayouts(const ExperimentConfig& config, uint64_t seed) {
  const uint64_t base = ProblemSeed(config, seed);
  GridLayouts out;
  for (grid::Color c : config.grid.train_colors) {
    rl::DomainPool pool{std::string(grid::ColorName(c)), {}};
    const std::string tag = "layout-" + pool.name;
    for (int i = 0; i < config.grid.layouts_per_color; ++i) {
      pool.specs.push_back({c, SplitSeed(base, tag, i)});
    }
    out.train.push_back(std::move(pool));
  }
  for (int i = 0; i < config.grid.test_envs; ++i) {
    out.test.push_back(
        {config.grid.test_color, SplitSeed(base, "layout-test", i)});
  }
  return out;
}

namespace {

struct LqrOutcome {
  Mat k;
  std::vector<lqr::CurvePoint> curve;
  int iterations = 0;
  bool converged = false;
  int stalled = 0;
};

template <typename Policy>
LqrOutcome Collect(lqr::TrainResult<Policy> r) {
  return {Mat(r.policy.Effective()), std::move(r.curve), r.iterations,
          r.converged, r.stalled_steps};
}

void RunLqrCell(const ExperimentConfig& config, const Cell& cell,
                const Column& col, const fs::path& out_dir, json& rec) {
  const LqrSettings& s = config.lqr;
  const uint64_t pseed = ProblemSeed(config, cell.seed);
  const lqr::LqrProblem problem =
      lqr::MakeProblem(s.n_s, s.n_a, SplitSeed(pseed, "dynamics"));
  std::vector<lqr::LqrDomain> domains;
  for (int d = 0; d < col.n_d; ++d) {
    domains.push_back(lqr::MakeDomain(problem, col.n_y,
                                      SplitSeed(pseed, "domain", d),
                                      "train-" + std::to_string(d)));
  }
  const lqr::LqrDomain test =
      lqr::MakeDomain(problem, col.n_y, SplitSeed(pseed, "test"), "test");

  lqr::LqrOptConfig opts;
  const bool is_ipo = cell.method.rfind("ipo", 0) == 0;
  opts.learning_rate = is_ipo ? s.lr_ipo : s.lr_baseline;
  opts.max_iterations = s.max_iterations;
  opts.relative_tolerance = s.relative_tolerance;
  opts.convergence_window = s.convergence_window;
  opts.max_backtracks = s.max_backtracks;
  opts.hidden_factor = s.hidden_factor;
  opts.init_gain = s.init_gain;
  opts.seed = SplitSeed(pseed, cell.method);

  LqrOutcome o;
  if (cell.method == "gd") {
    o = Collect(lqr::TrainGd(problem, domains, opts));
  } else if (cell.method == "overparam") {
    o = Collect(lqr::TrainOverparam(problem, domains, opts));
  } else if (cell.method == "ipo-fixed") {
    o = Collect(lqr::TrainIpoLqr(problem, domains, true, opts));
  } else {
    o = Collect(lqr::TrainIpoLqr(problem, domains, false, opts));
  }

  json train = json::object();
  double train_sum = 0.0;
  for (const lqr::LqrDomain& d : domains) {
    const double c = lqr::EvaluateTransfer(o.k, problem, d).cost;
    train[d.id] = FiniteOrNull(c);
    train_sum += c;
  }
  const lqr::TransferResult t = lqr::EvaluateTransfer(o.k, problem, test);
  rec["train"] = train;
  rec["train_mean"] = FiniteOrNull(train_sum / col.n_d);
  rec["test"] = FiniteOrNull(t.cost);
  rec["test_unstable"] = t.unstable;
  rec["details"] = {
      {"iterations", o.iterations},
      {"converged", o.converged},
      {"stalled_steps", o.stalled},
      {"oracle_cost", lqr::OracleCost(problem)},
      {"distractor_norm",
       col.n_y > 0 ? o.k.rightCols(col.n_y).norm() : 0.0}};

  std::ostringstream curve;
  for (size_t i = 0; i < o.curve.size(); ++i) {
    if (i % s.curve_stride != 0 && i + 1 != o.curve.size()) continue;
    const lqr::CurvePoint& p = o.curve[i];
    curve << json{{"iteration", p.iteration},
                  {"total_cost", p.total_cost},
                  {"domain_costs", p.domain_costs}}
                 .dump()
          << '\n';
  }
  const fs::path rel = fs::path("curves") / (cell.Id(config) + ".jsonl");
  WriteAtomically(out_dir / rel, curve.str());
  rec["artifacts"] = {{"curve", rel.generic_string()}};
}

void RunGridCell(const ExperimentConfig& config, const Cell& cell,
                 const fs::path& out_dir, json& rec) {
  const GridSettings& g = config.grid;
  const uint64_t base = ProblemSeed(config, cell.seed);
  const GridLayouts layouts = MakeGridLayouts(config, cell.seed);

  std::ostringstream curve;
  const rl::ProgressCallback log = [&curve](const rl::ProgressRecord& r) {
    curve << rl::ToJson(r).dump() << '\n';
  };
  rl::PpoConfig ppo = g.ppo;
  rl::TrainOutput out;
  if (cell.method == "ppo") {
    std::vector<rl::EnvSpec> pooled;
    for (const rl::DomainPool& p : layouts.train) {
      pooled.insert(pooled.end(), p.specs.begin(), p.specs.end());
    }
    ppo.learning_rate = g.lr_ppo;
    ppo.envs_per_rollout = g.ppo_envs;
    out = rl::TrainPpo(pooled, ppo, SplitSeed(base, "train"), log);
  } else {
    ppo.learning_rate = g.lr_ipo;
    ppo.envs_per_rollout = g.ipo_envs_per_domain;
    out = rl::TrainIpo(layouts.train, ppo, g.inner_rounds,
                       SplitSeed(base, "train"), log);
  }

  json train = json::object();
  double train_sum = 0.0;
  for (size_t d = 0; d < layouts.train.size(); ++d) {
    const double r = rl::Evaluate(out.policy, layouts.train[d].specs,
                                  g.eval_episodes, SplitSeed(base, "eval", d));
    train[layouts.train[d].name] = r;
    train_sum += r;
  }
  rec["train"] = train;
  rec["train_mean"] = train_sum / layouts.train.size();
  rec["test"] = rl::Evaluate(out.policy, layouts.test, g.eval_episodes,
                             SplitSeed(base, "eval-test"));
  rec["test_unstable"] = false;
  rec["details"] = {{"steps", out.steps},
                    {"action_selection", "sampled"},
                    {"members", out.policy.nets.size()}};

  const std::string id = cell.Id(config);
  const fs::path curve_rel = fs::path("curves") / (id + ".jsonl");
  WriteAtomically(out_dir / curve_rel, curve.str());
  rec["artifacts"] = {{"curve", curve_rel.generic_string()}};
  if (g.save_checkpoints) {
    const fs::path ckpt_rel = fs::path("checkpoints") / (id + ".json");
    fs::create_directories((out_dir / ckpt_rel).parent_path());
    nn::SaveCheckpoint(out_dir / ckpt_rel, out.policy.nets,
                       {{"method", cell.method},
                        {"seed", cell.seed},
                        {"config_hash", ConfigHash(config)},
                        {"config", ToJson(config)}});
    rec["artifacts"]["checkpoint"] = ckpt_rel.generic_string();
  }
}

}  // namespace

json RunCell(const ExperimentConfig& config, const Cell& cell,
             const fs::path& out_dir) {
  const Column col = Columns(config).at(cell.column);
  json rec;
  rec["schema_version"] = kResultSchemaVersion;
  rec["config_hash"] = ConfigHash(config);
  rec["code_version"] = CodeVersion();
  rec["kind"] = config.kind;
  rec["method"] = cell.method;
  rec["column"] = col.label;
  rec["n_d"] = col.n_d;
  if (config.IsLqr()) rec["n_y"] = col.n_y;
  rec["seed"] = cell.seed;
  rec["cell_id"] = cell.Id(config);
  const auto start = std::chrono::steady_clock::now();
  try {
    if (config.IsLqr()) {
      RunLqrCell(config, cell, col, out_dir, rec);
    } else {
      RunGridCell(config, cell, out_dir, rec);
    }
    rec["status"] = "ok";
  } catch (const std::exception& e) {
    rec["status"] = "failed";
    rec["error"] = e.what();
  }
  rec["wall_clock_s"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return rec;
}

namespace {

std::optional<json> ReadJsonFile(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    return json::parse(in);
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

}  // namespace

json RunExperiment(const ExperimentConfig& config, const fs::path& out_dir,
                   const RunOptions& options) {
  config.Validate();
  fs::create_directories(out_dir / "cells");
  const std::string hash = ConfigHash(config);
  WriteAtomically(out_dir / "config.json", ToJson(config).dump(2) + "\n");

  const std::vector<Cell> cells = EnumerateCells(config);
  std::vector<json> records(cells.size());
  std::atomic<size_t> next{0};
  std::mutex log_mutex;
  auto log = [&](const std::string& msg) {
    if (!options.log) return;
    std::lock_guard<std::mutex> lock(log_mutex);
    options.log(msg);
  };

  auto worker = [&]() {
    for (size_t i = next++; i < cells.size(); i = next++) {
      const std::string id = cells[i].Id(config);
      const fs::path path = out_dir / "cells" / (id + ".json");
      if (options.resume) {
        const std::optional<json> old = ReadJsonFile(path);
        if (old && old->value("config_hash", "") == hash &&
            old->value("status", "") == "ok") {
          records[i] = *old;
          log("reuse " + id);
          continue;
        }
      }
      json rec = RunCell(config, cells[i], out_dir);
      WriteAtomically(path, rec.dump() + "\n");
      std::ostringstream msg;
      msg << id << " " << rec["status"].get<std::string>();
      if (rec["status"] == "ok") msg << " test=" << rec["test"].dump();
      else msg << " error=" << rec["error"].get<std::string>();
      log(msg.str());
      records[i] = std::move(rec);
    }
  };
  const int jobs = std::max(1, std::min<int>(options.jobs, cells.size()));
  std::vector<std::thread> threads;
  for (int t = 1; t < jobs; ++t) threads.emplace_back(worker);
  worker();
  for (std::thread& t : threads) t.join();

  std::ostringstream lines;
  for (const json& r : records) lines << r.dump() << '\n';
  WriteAtomically(out_dir / "records.jsonl", lines.str());
  const json summary = Summarize(config, records);
  WriteAtomically(out_dir / "summary.json", summary.dump(2) + "\n");
  return summary;
}

std::vector<json> LoadRecords(const fs::path& out_dir) {
  std::vector<json> records;
  std::ifstream in(out_dir / "records.jsonl");
  if (in) {
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) records.push_back(json::parse(line));
    }
    return records;
  }
  const fs::path cells = out_dir / "cells";
  if (!fs::exists(cells)) return records;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(cells)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const fs::path& f : files) {
    if (auto j = ReadJsonFile(f)) records.push_back(std::move(*j));
  }
  return records;
}

namespace {

struct Stats {
  int n = 0;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std_dev = std::numeric_limits<double>::quiet_NaN();
};

// Sample standard deviation (n - 1); NaN below two values.
Stats Describe(const std::vector<double>& xs) {
  Stats s;
  s.n = static_cast<int>(xs.size());
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / s.n;
  if (s.n >= 2) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std_dev = std::sqrt(ss / (s.n - 1));
  }
  return s;
}

json ToJson(const Stats& s) {
  return {{"n", s.n}, {"mean", FiniteOrNull(s.mean)},
          {"std", FiniteOrNull(s.std_dev)}};
}

const json* FindRecord(const std::vector<json>& records,
                       const std::string& method, const std::string& column,
                       uint64_t seed) {
  for (const json& r : records) {
    if (r.value("method", "") == method && r.value("column", "") == column &&
        r.value("seed", uint64_t{0}) == seed) {
      return &r;
    }
  }
  return nullptr;
}

}  // namespace

json Summarize(const ExperimentConfig& config, const std::vector<json>& records) {
  json cells = json::array();
  json oracle = json::object();
  const std::vector<Column> columns = Columns(config);
  for (const Column& col : columns) {
    std::vector<double> oracle_values;
    for (const std::string& m : config.methods) {
      std::vector<double> test, train;
      std::vector<uint64_t> missing;
      int failed = 0, unstable = 0;
      std::map<std::string, std::vector<double>> per_domain;
      for (uint64_t seed : config.seeds) {
        const json* r = FindRecord(records, m, col.label, seed);
        if (r == nullptr || r->value("status", "") != "ok") {
          missing.push_back(seed);
          if (r != nullptr) ++failed;
          continue;
        }
        if (r->value("test_unstable", false) || !(*r)["test"].is_number()) {
          ++unstable;
        } else {
          test.push_back((*r)["test"].get<double>());
        }
        if ((*r)["train_mean"].is_number()) {
          train.push_back((*r)["train_mean"].get<double>());
        }
        for (const auto& [name, v] : (*r)["train"].items()) {
          if (v.is_number()) per_domain[name].push_back(v.get<double>());
        }
        if (r->contains("details") && (*r)["details"].contains("oracle_cost")) {
          oracle_values.push_back((*r)["details"]["oracle_cost"].get<double>());
        }
      }
      json domains = json::object();
      for (const auto& [name, xs] : per_domain) domains[name] = ToJson(Describe(xs));
      cells.push_back({{"method", m},
                       {"column", col.label},
                       {"expected", config.seeds.size()},
                       {"missing_seeds", missing},
                       {"failed", failed},
                       {"unstable", unstable},
                       {"test", ToJson(Describe(test))},
                       {"train", ToJson(Describe(train))},
                       {"train_domains", domains}});
    }
    if (config.IsLqr()) oracle[col.label] = ToJson(Describe(oracle_values));
  }
  json summary;
  summary["schema_version"] = kResultSchemaVersion;
  summary["config_hash"] = ConfigHash(config);
  summary["code_version"] = CodeVersion();
  summary["kind"] = config.kind;
  summary["axis"] = AxisName(config);
  json labels = json::array();
  for (const Column& c : columns) labels.push_back(c.label);
  summary["columns"] = labels;
  summary["methods"] = config.methods;
  summary["seeds"] = config.seeds;
  summary["cells"] = cells;
  if (config.IsLqr()) {
    summary["oracle"] = {{"per_column", oracle}, {"reference_value", 32.1}};
  }
  return summary;
}

namespace {

std::string MethodLabel(const std::string& m) {
  static const std::map<std::string, std::string> names = {
      {"gd", "Gradient descent"},
      {"overparam", "Overparameterization"},
      {"ipo-fixed", "IPO (Fixed-Phi)"},
      {"ipo-variable", "IPO (Variable-Phi)"},
      {"ppo", "PPO"},
      {"ipo", "IPO"},
      {"oracle", "LQR oracle"}};
  const auto it = names.find(m);
  return it == names.end() ? m : it->second;
}

std::string Fixed(double x, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << x;
  return s.str();
}

std::string FormatCell(const json& stats, int expected, int digits,
                       int unstable) {
  const int n = stats["n"].get<int>();
  if (n == 0) return unstable > 0 ? "unstable" : "-";
  std::string s = Fixed(stats["mean"].get<double>(), digits) + "±" +
                  (stats["std"].is_null() ? std::string("n/a")
                                          : Fixed(stats["std"].get<double>(), digits));
  if (n < expected) s += "*";
  return s;
}

// Display width, counting "±" as one column.
size_t Width(const std::string& s) {
  size_t w = 0;
  for (unsigned char c : s) w += (c & 0xC0) != 0x80;
  return w;
}

std::string AlignedText(const std::vector<std::vector<std::string>>& rows) {
  std::vector<size_t> widths;
  for (const auto& row : rows) {
    widths.resize(std::max(widths.size(), row.size()), 0);
    for (size_t i = 0; i < row.size(); ++i) {
      widths[i] = std::max(widths[i], Width(row[i]));
    }
  }
  std::ostringstream out;
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      out << row[i];
      if (i + 1 < row.size()) out << std::string(widths[i] - Width(row[i]) + 2, ' ');
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace

Table EmitTable(const ExperimentConfig& config, const std::vector<json>& records) {
  Table table;
  const json summary = Summarize(config, records);
  const std::vector<Column> columns = Columns(config);
  const int expected = static_cast<int>(config.seeds.size());
  const int digits = config.IsLqr() ? 1 : 2;

  // Column headers: the sweep axis for LQR; train and test reward for the
  // gridworld.
  std::vector<std::string> headers;
  if (config.IsLqr()) {
    for (const Column& c : columns) headers.push_back(c.label);
  } else {
    headers = {"train", "test (" + columns.front().label + ")"};
  }
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"method"};
  header.insert(header.end(), headers.begin(), headers.end());
  rows.push_back(header);

  std::ostringstream csv;
  csv << "method";
  for (const std::string& h : headers) csv << ',' << h << "_mean," << h << "_std," << h << "_n";
  csv << '\n';

  if (records.empty()) {
    table.warnings.push_back("no results found; table is empty");
    table.csv = csv.str();
    table.text = AlignedText(rows);
    return table;
  }

  auto csv_stats = [&csv](const json& s) {
    csv << ',' << (s["mean"].is_null() ? "" : s["mean"].dump()) << ','
        << (s["std"].is_null() ? "" : s["std"].dump()) << ',' << s["n"].dump();
  };
  for (const std::string& m : config.methods) {
    std::vector<std::string> row{MethodLabel(m)};
    csv << m;
    for (const json& cell : summary["cells"]) {
      if (cell["method"] != m) continue;
      const int unstable = cell["unstable"].get<int>();
      const int n = cell["test"]["n"].get<int>();
      if (n < expected) {
        std::ostringstream w;
        w << MethodLabel(m) << " @ " << cell["column"].get<std::string>()
          << ": " << n << "/" << expected << " seeds";
        if (unstable > 0) w << " (" << unstable << " unstable on test)";
        if (!cell["missing_seeds"].empty()) w << ", missing " << cell["missing_seeds"].dump();
        table.warnings.push_back(w.str());
      }
      if (!config.IsLqr()) {
        row.push_back(FormatCell(cell["train"], expected, digits, 0));
        csv_stats(cell["train"]);
      }
      row.push_back(FormatCell(cell["test"], expected, digits, unstable));
      csv_stats(cell["test"]);
    }
    csv << '\n';
    rows.push_back(row);
  }
  if (config.IsLqr()) {
    std::vector<std::string> row{MethodLabel("oracle")};
    csv << "oracle";
    for (const Column& c : columns) {
      const json& s = summary["oracle"]["per_column"][c.label];
      row.push_back(s["n"].get<int>() == 0 ? "-" : Fixed(s["mean"].get<double>(), 4));
      csv_stats(s);
    }
    csv << '\n';
    rows.push_back(row);
    table.warnings.push_back(
        "oracle: full-state DARE optimum with unit initial covariance; the "
        "reference value for this row is 32.1");
  }
  table.csv = csv.str();
  table.text = AlignedText(rows);
  return table;
}

std::vector<fs::path> EmitPlotData(const ExperimentConfig& config,
                                   const fs::path& out_dir) {
  const std::vector<json> records = LoadRecords(out_dir);
  std::vector<fs::path> written;
  for (const Column& col : Columns(config)) {
    for (const std::string& m : config.methods) {
      // series -> step -> values over seeds
      std::map<std::string, std::map<int64_t, std::vector<double>>> series;
      for (uint64_t seed : config.seeds) {
        const json* r = FindRecord(records, m, col.label, seed);
        if (r == nullptr || !r->contains("artifacts")) continue;
        std::ifstream in(out_dir / (*r)["artifacts"]["curve"].get<std::string>());
        std::string line;
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          const json p = json::parse(line);
          if (p.contains("iteration")) {
            series["total_cost"][p["iteration"].get<int64_t>()].push_back(
                p["total_cost"].get<double>());
          } else if (p["mean_episode_reward"].is_number()) {
            series["reward:" + p["domain"].get<std::string>()]
                  [p["step"].get<int64_t>()]
                      .push_back(p["mean_episode_reward"].get<double>());
          }
        }
      }
      if (series.empty()) continue;
      std::ostringstream csv;
      csv << "series,step,mean,std,n\n";
      for (const auto& [name, points] : series) {
        for (const auto& [step, values] : points) {
          const Stats s = Describe(values);
          csv << name << ',' << step << ',' << json(s.mean).dump() << ','
              << (std::isfinite(s.std_dev) ? json(s.std_dev).dump() : "")
              << ',' << s.n << '\n';
        }
      }
      const fs::path path =
          out_dir / "plotdata" / (Sanitize(m + "_" + col.label) + ".csv");
      WriteAtomically(path, csv.str());
      written.push_back(path);
    }
  }
  return written;
}

fs::path ResolveOutputDir(const ExperimentConfig& config,
                          const std::optional<std::string>& override_dir) {
  fs::path dir = override_dir ? fs::path(*override_dir) : fs::path(config.output);
  if (dir.is_relative()) {
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) {
      dir = fs::path(root) / dir;
    }
  }
  return dir;
}

}  // namespace ipo::exp
