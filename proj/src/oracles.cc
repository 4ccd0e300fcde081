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


#include "ipo/oracles.h"

#include <cmath>
#include <deque>
#include <map>
#include <stdexcept>
#include <tuple>

#include "ipo/numlin.h"
#include "ipo/rng.h"

namespace ipo::oracle {

using Eigen::Index;
using Eigen::VectorXd;

Mat LyapunovSeries(const Mat& a_cl, const Mat& q_eff, double tol,
                   int max_terms) {
  Mat p = Mat::Zero(q_eff.rows(), q_eff.cols());
  Mat term = q_eff;
  for (int k = 0; k < max_terms; ++k) {
    p += term;
    if (term.cwiseAbs().maxCoeff() < tol) return p;
    term = a_cl.transpose() * term * a_cl;
  }
  throw std::runtime_error("LyapunovSeries: no convergence");
}

Mat CentralDifference(const std::function<double(const Mat&)>& f,
                      const Mat& x, double h) {
  Mat g(x.rows(), x.cols());
  Mat probe = x;
  for (Index j = 0; j < x.cols(); ++j) {
    for (Index i = 0; i < x.rows(); ++i) {
      probe(i, j) = x(i, j) + h;
      const double up = f(probe);
      probe(i, j) = x(i, j) - h;
      const double down = f(probe);
      probe(i, j) = x(i, j);
      g(i, j) = (up - down) / (2.0 * h);
    }
  }
  return g;
}

double MonteCarloCost(const lqr::LqrProblem& problem,
                      const lqr::LqrDomain& domain, const Mat& k, int rollouts,
                      int horizon, uint64_t seed, bool stratified) {
  const Index n = problem.n_s();
  Mat w(n + domain.n_y(), n);
  w << problem.wc, domain.wd;
  const Mat f = k * w;
  Rng rng(seed);
  double total = 0.0;
  Mat starts;
  for (int r = 0; r < rollouts; ++r) {
    VectorXd s(n);
    if (stratified) {
      const Index slot = r % n;
      if (slot == 0) {
        starts = std::sqrt(static_cast<double>(n)) *
                 SampleOrthogonal<double>(n, rng.NextU64());
      }
      s = starts.col(slot);
    } else {
      for (Index i = 0; i < n; ++i) s(i) = rng.Normal();
    }
    for (int t = 0; t < horizon; ++t) {
      const VectorXd a = f * s;
      total += s.dot(problem.q * s) + a.dot(problem.r * a);
      s = problem.a * s + problem.b * a;
    }
  }
  return total / rollouts;
}

Mat RandomStabilizingGain(const lqr::LqrProblem& problem,
                          const lqr::LqrDomain& domain, double max_rho,
                          Rng& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double gain = 0.2 + 0.6 * rng.Uniform();
    Mat k = lqr::InitStabilizing(problem, domain.n_y(), gain);
    k += 0.05 * SampleGaussian<double>(k.rows(), k.cols(), rng);
    const Mat a_cl = problem.a + problem.b * lqr::StateFeedback(problem, domain, k);
    if (SpectralRadius(a_cl) <= max_rho) return k;
  }
  throw std::runtime_error("RandomStabilizingGain: no stabilizing draw");
}

double RelativeError(const Mat& a, const Mat& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

std::vector<VectorXd> NetCentralDifference(
    const nn::ActorCriticNet& net,
    const std::function<double(const nn::ActorCriticNet&)>& loss, double h) {
  nn::ActorCriticNet probe = net;
  std::vector<VectorXd> grads;
  for (size_t p = 0; p < net.params().size(); ++p) {
    const VectorXd& base = net.params()[p].values;
    VectorXd g(base.size());
    VectorXd& values = probe.params()[p].values;
    for (Index i = 0; i < base.size(); ++i) {
      values(i) = base(i) + h;
      const double up = loss(probe);
      values(i) = base(i) - h;
      const double down = loss(probe);
      values(i) = base(i);
      g(i) = (up - down) / (2.0 * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

namespace {

// Everything that can change during a DoorKey episode besides time.
using StateKey = std::tuple<int, int, int, int, std::vector<uint8_t>>;

StateKey KeyOf(const grid::GridEnv& env) {
  std::vector<uint8_t> cells;
  cells.reserve(env.cells.size() * 2);
  for (const grid::Cell& c : env.cells) {
    cells.push_back(static_cast<uint8_t>(c.type));
    cells.push_back(c.state);
  }
  const int carrying =
      env.carrying ? 1 + static_cast<int>(env.carrying->type) : 0;
  return {env.agent_pos[0], env.agent_pos[1], env.agent_dir, carrying,
          std::move(cells)};
}

}  // namespace

std::optional<std::vector<grid::Action>> ShortestPlan(
    const grid::GridEnv& start) {
  if (start.done) return std::nullopt;
  constexpr grid::Action kMoves[] = {
      grid::Action::kTurnLeft, grid::Action::kTurnRight, grid::Action::kForward,
      grid::Action::kPickup,   grid::Action::kDrop,      grid::Action::kToggle};
  // The time limit is irrelevant for reachability.
  grid::GridEnv root = start;
  root.max_steps = 1 << 30;

  struct Node {
    grid::GridEnv env;
    std::vector<grid::Action> plan;
  };
  std::deque<Node> frontier;
  std::map<StateKey, bool> seen;
  seen[KeyOf(root)] = true;
  frontier.push_back({root, {}});
  while (!frontier.empty()) {
    Node node = std::move(frontier.front());
    frontier.pop_front();
    for (const grid::Action a : kMoves) {
      grid::GridEnv next = node.env;
      const grid::StepResult r = grid::Step(next, a);
      std::vector<grid::Action> plan = node.plan;
      plan.push_back(a);
      if (r.done && r.reward > 0.0) return plan;
      if (r.done) continue;
      if (seen.emplace(KeyOf(next), true).second) {
        frontier.push_back({std::move(next), std::move(plan)});
      }
    }
  }
  return std::nullopt;
}

rl::ActionFn ScriptedOptimalPolicy() {
  return [](const grid::GridEnv& env, const grid::Observation&, Rng&) {
    const auto plan = ShortestPlan(env);
    if (!plan || plan->empty()) return static_cast<int>(grid::Action::kDone);
    return static_cast<int>(plan->front());
  };
}

rl::ActionFn RandomPolicy() {
  return [](const grid::GridEnv&, const grid::Observation&, Rng& rng) {
    return static_cast<int>(rng.UniformInt(grid::kNumActions));
  };
}

}  // namespace ipo::oracle
