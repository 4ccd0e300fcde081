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


#include "ipo/selftest.h"

#include <cmath>
#include <functional>
#include <numbers>
#include <sstream>

#include "ipo/gridworld.h"
#include "ipo/lqr.h"
#include "ipo/numlin.h"
#include "ipo/oracles.h"
#include "ipo/policy_nn.h"
#include "ipo/rl_train.h"
#include "ipo/rng.h"

namespace ipo::oracle {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kGolden = std::numbers::phi;

CheckResult Within(std::string name, double measured, double tolerance,
                   std::string detail = {}) {
  return {std::move(name), measured <= tolerance, measured, tolerance,
          std::move(detail)};
}

CheckResult LyapunovSeriesCheck() {
  Rng rng(11);
  Mat a = SampleGaussian<double>(6, 6, rng);
  a *= 0.8 / SpectralRadius(a);
  const Mat m = SampleGaussian<double>(6, 6, rng);
  const Mat q = m * m.transpose() + Mat::Identity(6, 6);
  const Mat p = SolveDiscreteLyapunov(a, q);
  return Within("lyapunov_vs_series",
                RelativeError(p, LyapunovSeries(a, q)), 1e-9);
}

CheckResult InitCostCheck() {
  const lqr::LqrProblem problem = lqr::MakeProblem(20, 20, 3);
  const lqr::LqrDomain domain = lqr::MakeDomain(problem, 40, 4);
  const double c =
      lqr::Cost(problem, domain, lqr::InitStabilizing(problem, 40, 0.5));
  // P = p I with p = 1.25 + 0.25 p.
  return Within("init_cost_closed_form", std::abs(c - 20.0 * 5.0 / 3.0), 1e-9);
}

CheckResult OracleCheck(int n) {
  const lqr::LqrProblem problem = lqr::MakeProblem(n, n, 5);
  // For orthogonal A and B = Q = R = I, P = p I with p^2 = p + 1.
  const double err = std::abs(lqr::OracleCost(problem) - n * kGolden);
  return Within("dare_oracle_n" + std::to_string(n), err, 1e-6);
}

CheckResult LqrGradientCheck() {
  Rng rng(21);
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    const lqr::LqrProblem problem = lqr::MakeProblem(4, 4, 100 + i);
    const lqr::LqrDomain domain = lqr::MakeDomain(problem, 6, 200 + i);
    const Mat k = RandomStabilizingGain(problem, domain, 0.9, rng);
    const Mat fd = CentralDifference(
        [&](const Mat& x) { return lqr::Cost(problem, domain, x); }, k, 1e-5);
    worst = std::max(worst,
                     RelativeError(lqr::CostGradient(problem, domain, k), fd));
  }
  return Within("lqr_gradient_vs_fd", worst, 1e-5, "10 points, n_s=4, n_y=6");
}

CheckResult FactoredGradientCheck() {
  Rng rng(31);
  const lqr::LqrProblem problem = lqr::MakeProblem(3, 3, 7);
  const lqr::LqrDomain domain = lqr::MakeDomain(problem, 4, 8);
  const Mat k = RandomStabilizingGain(problem, domain, 0.9, rng);
  const Mat k1 = SampleSemiOrthogonal<double>(6, 3, 9).transpose();
  const Mat k2 = k1.transpose() * k;
  const Mat g = lqr::CostGradient(problem, domain, k);
  const Mat fd1 = CentralDifference(
      [&](const Mat& x) { return lqr::Cost(problem, domain, Mat(x * k2)); }, k1,
      1e-5);
  const Mat fd2 = CentralDifference(
      [&](const Mat& x) { return lqr::Cost(problem, domain, Mat(k1 * x)); }, k2,
      1e-5);
  const double err = std::max(RelativeError(Mat(g * k2.transpose()), fd1),
                              RelativeError(Mat(k1.transpose() * g), fd2));
  return Within("factored_gradient_vs_fd", err, 1e-5);
}

CheckResult StationarityCheck() {
  const lqr::LqrProblem problem = lqr::MakeProblem(6, 6, 13);
  const lqr::LqrDomain domain = lqr::MakeDomain(problem, 10, 14);
  const Mat k_star = SolveDare(problem.a, problem.b, problem.q, problem.r).k;
  Mat w(6 + 10, 6);
  w << problem.wc, domain.wd;
  // W^T W = 2 I, so K = K* W^T / 2 realizes the full-state optimum.
  const Mat k = 0.5 * k_star * w.transpose();
  return Within("dare_stationarity",
                MaxAbs(lqr::CostGradient(problem, domain, k)), 1e-6);
}

CheckResult MonteCarloCheck() {
  Rng rng(41);
  const lqr::LqrProblem problem = lqr::MakeProblem(20, 20, 15);
  const lqr::LqrDomain domain = lqr::MakeDomain(problem, 30, 16);
  const Mat k = RandomStabilizingGain(problem, domain, 0.9, rng);
  const double exact = lqr::Cost(problem, domain, k);
  const double mc = MonteCarloCost(problem, domain, k, 100, 500, 17, true);
  return Within("lqr_cost_vs_simulation", std::abs(mc - exact) / exact, 0.02,
                "100 stratified rollouts x 500 steps");
}

CheckResult NetGradientCheck() {
  Rng rng(51);
  nn::ActorCriticNet net = nn::ActorCriticNet::Initialize(52);
  for (nn::ParamTensor& p : net.params()) {
    for (Eigen::Index i = 0; i < p.values.size(); ++i) {
      p.values(i) += 0.05 * rng.Normal();
    }
  }
  const int batch = 3;
  rl::Minibatch mb;
  mb.size = batch;
  mb.embedded = SampleGaussian<double>(nn::kInputPlanes, batch * nn::kCells, rng);
  mb.returns = SampleGaussian<double>(batch, 1, rng);
  mb.advantages = SampleGaussian<double>(batch, 1, rng);
  mb.frozen_score_sum = SampleGaussian<double>(grid::kNumActions, batch, rng);
  mb.n_members = 2;
  const MatrixXd log_p = nn::LogSoftmax(
      (net.Forward(mb.embedded, batch).scores + mb.frozen_score_sum) / 2.0);
  mb.old_log_probs.resize(batch);
  for (int i = 0; i < batch; ++i) {
    mb.actions.push_back(static_cast<int>(rng.UniformInt(grid::kNumActions)));
    // Inside the clip range so the surrogate is smooth at this point.
    mb.old_log_probs(i) = log_p(mb.actions[i], i) + 0.05 * rng.Normal();
  }
  rl::PpoConfig config;
  config.entropy_coef = 0.1;

  nn::ActorCriticNet analytic = net;
  analytic.ZeroGrad();
  rl::PpoLoss(analytic, mb, config, true);
  const auto fd = NetCentralDifference(
      net,
      [&](const nn::ActorCriticNet& n) {
        nn::ActorCriticNet copy = n;
        return rl::PpoLoss(copy, mb, config, false).total;
      },
      1e-4);
  double worst = 0.0;
  std::string worst_name;
  for (size_t p = 0; p < fd.size(); ++p) {
    const VectorXd& a = analytic.params()[p].grad;
    const double err = (a - fd[p]).norm() / (a.norm() + fd[p].norm() + 1e-300);
    if (err > worst) {
      worst = err;
      worst_name = analytic.params()[p].name;
    }
  }
  return Within("net_gradient_vs_fd", worst, 1e-4, "worst tensor " + worst_name);
}

CheckResult GaeHandCheck() {
  rl::RolloutBuffer buf;
  buf.n_envs = 1;
  buf.n_steps = 3;
  buf.actions = {0, 0, 0};
  buf.rewards = {0.0, 0.0, 1.0};
  buf.values = {0.0, 0.0, 0.0};
  buf.dones = {0, 0, 1};
  buf.bootstrap_values = {0.0};
  rl::ComputeGae(buf, 0.99, 0.95);
  const double gl = 0.99 * 0.95;
  const double err = std::max({std::abs(buf.advantages[0] - gl * gl),
                               std::abs(buf.advantages[1] - gl),
                               std::abs(buf.advantages[2] - 1.0)});
  return Within("gae_hand_recursion", err, 1e-12);
}

CheckResult SolvabilityCheck() {
  int unsolvable = 0;
  for (grid::Color c : {grid::Color::kRed, grid::Color::kGreen,
                        grid::Color::kGrey}) {
    for (uint64_t s = 0; s < 100; ++s) {
      if (!ShortestPlan(grid::GenerateEnv(c, s))) ++unsolvable;
    }
  }
  return Within("layouts_solvable", unsolvable, 0, "300 layouts");
}

CheckResult ScriptedRewardCheck() {
  const grid::GridEnv env = grid::GenerateEnv(grid::Color::kRed, 123);
  const auto plan = ShortestPlan(env);
  if (!plan) return {"scripted_optimal_reward", false, 1.0, 0.0, "no plan"};
  const double expected = 1.0 - 0.9 * static_cast<double>(plan->size()) / 250.0;
  const rl::EnvSpec spec{grid::Color::kRed, 123};
  const double got = rl::Evaluate(ScriptedOptimalPolicy(),
                                  std::span<const rl::EnvSpec>(&spec, 1), 1, 0);
  std::ostringstream detail;
  detail << "t*=" << plan->size();
  return Within("scripted_optimal_reward", std::abs(got - expected), 1e-12,
                detail.str());
}

CheckResult RandomPolicyCheck() {
  std::vector<rl::EnvSpec> envs;
  for (uint64_t s = 0; s < 48; ++s) envs.push_back({grid::Color::kRed, s});
  // 480 episodes of at most 250 steps: a 120K-step budget.
  const double mean = rl::Evaluate(RandomPolicy(), envs, 480, 61);
  CheckResult r{"random_policy_sometimes_succeeds", mean > 0.0, mean, 0.0,
                "mean reward of a uniform policy"};
  return r;
}

}  // namespace

std::vector<CheckResult> RunSelfTests() {
  using Check = std::function<CheckResult()>;
  const std::vector<Check> checks = {
      LyapunovSeriesCheck,
      InitCostCheck,
      [] { return OracleCheck(20); },
      [] { return OracleCheck(1); },
      LqrGradientCheck,
      FactoredGradientCheck,
      StationarityCheck,
      MonteCarloCheck,
      NetGradientCheck,
      GaeHandCheck,
      SolvabilityCheck,
      ScriptedRewardCheck,
      RandomPolicyCheck};
  std::vector<CheckResult> results;
  for (const Check& c : checks) {
    try {
      results.push_back(c());
    } catch (const std::exception& e) {
      results.push_back({"(check threw)", false, 0.0, 0.0, e.what()});
    }
  }
  return results;
}

}  // namespace ipo::oracle
