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

#ifndef IPO_LQR_H_
#define IPO_LQR_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ipo/adam.h"
#include "ipo/numlin.h"

namespace ipo::lqr {

// Output-feedback LQR with distractor observations.
//
//   s_{t+1} = A s_t + B a_t,   o_t = [Wc; Wd] s_t,   a_t = K o_t,
//
// with cost sum_t s_t^T Q s_t + a_t^T R a_t and s_0 ~ N(0, I). Everything
// except Wd is shared across domains.
struct LqrProblem {
  Mat a;
  Mat b;
  Mat q;
  Mat r;
  Mat wc;

  Eigen::Index n_s() const { return a.rows(); }
  Eigen::Index n_a() const { return b.cols(); }
};

struct LqrDomain {
  std::string id;
  // n_y x n_s with orthonormal columns; 0 x n_s when there is no distractor.
  Mat wd;

  Eigen::Index n_y() const { return wd.rows(); }
};

struct LinearPolicy {
  Mat k;  // n_a x (n_s + n_y)

  const Mat& Effective() const { return k; }
};

// Two-layer factorization K = K1 K2 with hidden width 10 n_a.
struct FactoredPolicy {
  Mat k1;  // n_a x h
  Mat k2;  // h x (n_s + n_y)

  Mat Effective() const { return k1 * k2; }
};

// One linear policy per training domain, acting through their mean composed
// with an optional shared linear representation (absent means identity).
struct IpoLqrPolicy {
  std::optional<Mat> phi;  // h x (n_s + n_y)
  std::vector<Mat> per_domain;

  Mat Average() const;
  Mat Effective() const;
};

LqrProblem MakeProblem(Eigen::Index n_s, Eigen::Index n_a, uint64_t seed);

// n_y == 0 yields a domain without distractors (observation is Wc s).
LqrDomain MakeDomain(const LqrProblem& problem, Eigen::Index n_y,
                     uint64_t seed, std::string id = {});

// F = K W = K[:, :n_s] Wc + K[:, n_s:] Wd, the equivalent state feedback.
Mat StateFeedback(const LqrProblem& problem, const LqrDomain& domain,
                  const Mat& k);

// Everything the cost and its gradient need for one (domain, K) pair.
struct DomainEvaluation {
  double cost = 0.0;
  Mat feedback;    // F = K W
  Mat closed_loop; // A + B F
  Mat value;       // P = Qeff + Acl^T P Acl
};

// Throws UnstableError if the closed loop is not strictly stable.
DomainEvaluation EvaluateDomain(const LqrProblem& problem,
                                const LqrDomain& domain, const Mat& k);

double Cost(const LqrProblem& problem, const LqrDomain& domain, const Mat& k);

// d cost / dK = 2 (R F + B^T P Acl) Sigma W^T, with Sigma = I + Acl Sigma Acl^T.
Mat CostGradient(const LqrProblem& problem, const LqrDomain& domain,
                 const Mat& k);
Mat CostGradient(const LqrProblem& problem, const LqrDomain& domain,
                 const DomainEvaluation& eval);

// K0 = [-gain A Wc^T | 0], so that A + B K0 W = (1 - gain) A when B = I.
Mat InitStabilizing(const LqrProblem& problem, Eigen::Index n_y,
                    double gain = 0.5);

// trace(P) of the full-state Riccati solution.
double OracleCost(const LqrProblem& problem);

struct LqrOptConfig {
  double learning_rate = 0.001;
  int max_iterations = 5000;
  // Stop when |J(t - window) - J(t)| < relative_tolerance * |J(t)|.
  double relative_tolerance = 1e-7;
  int convergence_window = 50;
  int max_backtracks = 20;
  AdamConfig adam;
  // Hidden width factor for the factored policy and the learned
  // representation: h = hidden_factor * n_a.
  int hidden_factor = 10;
  // Trainers start from InitStabilizing(problem, n_y, init_gain): a near-zero
  // policy with closed loop (1 - init_gain) A.
  double init_gain = 0.05;
  // Seeds random initialization (overparameterized factor layout).
  uint64_t seed = 0;
};

struct CurvePoint {
  int iteration = 0;
  std::vector<double> domain_costs;
  // Sum of domain costs of the acting policy.
  double total_cost = 0.0;
};

template <typename Policy>
struct TrainResult {
  Policy policy;
  std::vector<CurvePoint> curve;
  int iterations = 0;
  bool converged = false;
  // Steps that were rejected after exhausting all backtracking halvings
  // without a cost decrease.
  int stalled_steps = 0;
};

TrainResult<LinearPolicy> TrainGd(const LqrProblem& problem,
                                  std::span<const LqrDomain> domains,
                                  const LqrOptConfig& opts);

TrainResult<FactoredPolicy> TrainOverparam(const LqrProblem& problem,
                                           std::span<const LqrDomain> domains,
                                           const LqrOptConfig& opts);

// Best-response training: each domain's player takes one Adam step on its own
// cost of the averaged policy, in fixed order, holding the others fixed.
// With fixed_phi = false a shared linear representation of width
// hidden_factor * n_a is first stepped on the summed cost each round.
TrainResult<IpoLqrPolicy> TrainIpoLqr(const LqrProblem& problem,
                                      std::span<const LqrDomain> domains,
                                      bool fixed_phi, const LqrOptConfig& opts);

struct TransferResult {
  double cost = 0.0;
  bool unstable = false;
};

TransferResult EvaluateTransfer(const Mat& effective_k,
                                const LqrProblem& problem,
                                const LqrDomain& test_domain);

template <typename Policy>
TransferResult EvaluateTransfer(const Policy& policy, const LqrProblem& problem,
                                const LqrDomain& test_domain) {
  return EvaluateTransfer(Mat(policy.Effective()), problem, test_domain);
}

}  // namespace ipo::lqr

#endif  // IPO_LQR_H_
