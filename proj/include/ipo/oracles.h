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


// Independent reference computations used to check the production code:
// brute-force series, finite differences, simulation and graph search.

#ifndef IPO_ORACLES_H_
#define IPO_ORACLES_H_

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "ipo/gridworld.h"
#include "ipo/lqr.h"
#include "ipo/policy_nn.h"
#include "ipo/rl_train.h"
#include "ipo/rng.h"

namespace ipo::oracle {

// P = sum_k (Acl^T)^k Qeff Acl^k, summed until the term's max-abs entry
// drops below tol (or max_terms).
Mat LyapunovSeries(const Mat& a_cl, const Mat& q_eff, double tol = 1e-15,
                   int max_terms = 100000);

// Central differences (f(x + h e_ij) - f(x - h e_ij)) / 2h for every entry.
Mat CentralDifference(const std::function<double(const Mat&)>& f,
                      const Mat& x, double h);

// Average of sum_t s_t^T Q s_t + a_t^T R a_t over `rollouts` trajectories of
// `horizon` steps with a = K o. With stratified initial states the rollouts
// come in batches of n_s whose initial states are sqrt(n_s) times the
// columns of a random orthogonal matrix, so their empirical covariance is
// exactly I; otherwise s0 ~ N(0, I).
double MonteCarloCost(const lqr::LqrProblem& problem,
                      const lqr::LqrDomain& domain, const Mat& k, int rollouts,
                      int horizon, uint64_t seed, bool stratified);

// Random output-feedback gain with rho(A + B K W) <= max_rho: the scaled
// stabilizing initialization plus Gaussian noise on every entry, redrawn
// until the bound holds.
Mat RandomStabilizingGain(const lqr::LqrProblem& problem,
                          const lqr::LqrDomain& domain, double max_rho,
                          Rng& rng);

// Relative error ||a - b|| / max(||b||, tiny) in the Frobenius norm.
double RelativeError(const Mat& a, const Mat& b);

// Per-tensor central differences of `loss` with respect to every parameter
// of `net`.
std::vector<Eigen::VectorXd> NetCentralDifference(
    const nn::ActorCriticNet& net,
    const std::function<double(const nn::ActorCriticNet&)>& loss, double h);

// Breadth-first search over (pose, carried key, door state, key on floor).
// Returns a shortest action sequence reaching the goal, or nullopt.
std::optional<std::vector<grid::Action>> ShortestPlan(const grid::GridEnv& env);

// Replans with ShortestPlan at every step; uses full state, not the
// observation.
rl::ActionFn ScriptedOptimalPolicy();

// Uniformly random actions.
rl::ActionFn RandomPolicy();

}  // namespace ipo::oracle

#endif  // IPO_ORACLES_H_
