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

#include "ipo/lqr.h"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "ipo/rng.h"

namespace ipo::lqr {
namespace {


Eigen::Map<const Eigen::VectorXd> Flat(const Mat& m) {
  return {m.data(), m.size()};
}

Mat Unflatten(const Eigen::VectorXd& v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Mat>(v.data(), rows, cols);
}

// h x n rectangular identity.
Mat RectIdentity(Eigen::Index h, Eigen::Index n) {
  return Mat::Identity(h, n);
}

void CheckDomains(const LqrProblem& problem,
                  std::span<const LqrDomain> domains) {
  if (domains.empty()) {
    throw std::invalid_argument("at least one training domain is required");
  }
  for (const LqrDomain& d : domains) {
    if (d.wd.cols() != problem.n_s() || d.n_y() != domains.front().n_y()) {
      throw std::invalid_argument("training domains must share n_y");
    }
  }
}

struct Evaluation {
  std::vector<DomainEvaluation> per_domain;
  double total = 0.0;

  std::vector<double> Costs() const {
    std::vector<double> c;
    c.reserve(per_domain.size());
    for (const DomainEvaluation& e : per_domain) c.push_back(e.cost);
    return c;
  }
};

// Evaluates every domain; std::nullopt if any closed loop is unstable.
std::optional<Evaluation> TryEvaluateAll(const LqrProblem& problem,
                                         std::span<const LqrDomain> domains,
                                         const Mat& k) {
  Evaluation out;
  out.per_domain.reserve(domains.size());
  for (const LqrDomain& d : domains) {
    try {
      out.per_domain.push_back(EvaluateDomain(problem, d, k));
    } catch (const UnstableError&) {
      return std::nullopt;
    }
    out.total += out.per_domain.back().cost;
  }
  return out;
}

Evaluation EvaluateAll(const LqrProblem& problem,
                       std::span<const LqrDomain> domains, const Mat& k) {
  auto e = TryEvaluateAll(problem, domains, k);
  if (!e) throw UnstableError("initial policy is not stabilizing");
  return *std::move(e);
}

enum class Trial { kAccepted, kWorse, kUnstable };

// Tries the step at scales 1, 1/2, ..., 2^-max_backtracks; `trial(scale)`
// commits the candidate and returns kAccepted when it is stable on every
// training domain and does not increase the objective. Returns false when
// every stable candidate increased the objective (the step is dropped).
template <typename TrialFn>
bool Backtrack(int max_backtracks, TrialFn&& trial, int iteration) {
  bool any_stable = false;
  double scale = 1.0;
  for (int i = 0; i <= max_backtracks; ++i, scale *= 0.5) {
    const Trial t = trial(scale);
    if (t == Trial::kAccepted) return true;
    if (t == Trial::kWorse) any_stable = true;
  }
  if (!any_stable) {
    std::ostringstream msg;
    msg << "no stabilizing step after " << max_backtracks
        << " halvings at iteration " << iteration;
    throw StabilityLostError(msg.str());
  }
  return false;
}

class ConvergenceMonitor {
 public:
  explicit ConvergenceMonitor(const LqrOptConfig& opts) : opts_(opts) {}

  bool Push(double total) {
    history_.push_back(total);
    const auto n = static_cast<int>(history_.size());
    if (n <= opts_.convergence_window) return false;
    const double past = history_[n - 1 - opts_.convergence_window];
    return std::abs(past - total) < opts_.relative_tolerance * std::abs(total);
  }

 private:
  const LqrOptConfig& opts_;
  std::vector<double> history_;
};

// Sum over domains of d cost_d / dK, accumulated in domain order.
Mat SummedGradient(const LqrProblem& problem,
                   std::span<const LqrDomain> domains, const Evaluation& eval,
                   Eigen::Index rows, Eigen::Index cols) {
  Mat g = Mat::Zero(rows, cols);
  for (size_t d = 0; d < domains.size(); ++d) {
    g += CostGradient(problem, domains[d], eval.per_domain[d]);
  }
  return g;
}

}  // namespace

Mat IpoLqrPolicy::Average() const {
  if (per_domain.empty()) throw std::logic_error("empty IPO policy");
  Mat sum = per_domain.front();
  for (size_t i = 1; i < per_domain.size(); ++i) sum += per_domain[i];
  return sum / static_cast<double>(per_domain.size());
}

Mat IpoLqrPolicy::Effective() const {
  Mat avg = Average();
  return phi ? Mat(avg * *phi) : avg;
}

LqrProblem MakeProblem(Eigen::Index n_s, Eigen::Index n_a, uint64_t seed) {
  LqrProblem p;
  p.a = SampleOrthogonal(n_s, SplitSeed(seed, "A"));
  p.wc = SampleOrthogonal(n_s, SplitSeed(seed, "Wc"));
  p.b = Mat::Identity(n_s, n_a);
  p.q = Mat::Identity(n_s, n_s);
  p.r = Mat::Identity(n_a, n_a);
  return p;
}

LqrDomain MakeDomain(const LqrProblem& problem, Eigen::Index n_y,
                     uint64_t seed, std::string id) {
  LqrDomain d;
  d.id = std::move(id);
  d.wd = n_y == 0 ? Mat(0, problem.n_s())
                  : SampleSemiOrthogonal(n_y, problem.n_s(), seed);
  return d;
}

Mat StateFeedback(const LqrProblem& problem, const LqrDomain& domain,
                  const Mat& k) {
  const Eigen::Index n_s = problem.n_s();
  if (k.rows() != problem.n_a() || k.cols() != n_s + domain.n_y()) {
    std::ostringstream msg;
    msg << "policy shape " << k.rows() << "x" << k.cols() << ", expected "
        << problem.n_a() << "x" << n_s + domain.n_y();
    throw std::invalid_argument(msg.str());
  }
  Mat f = k.leftCols(n_s) * problem.wc;
  if (domain.n_y() > 0) f.noalias() += k.rightCols(domain.n_y()) * domain.wd;
  return f;
}

DomainEvaluation EvaluateDomain(const LqrProblem& problem,
                                const LqrDomain& domain, const Mat& k) {
  DomainEvaluation e;
  e.feedback = StateFeedback(problem, domain, k);
  e.closed_loop = problem.a + problem.b * e.feedback;
  const Mat q_eff =
      problem.q + e.feedback.transpose() * problem.r * e.feedback;
  e.value = SolveDiscreteLyapunov(e.closed_loop, q_eff);
  e.cost = e.value.trace();
  return e;
}

double Cost(const LqrProblem& problem, const LqrDomain& domain, const Mat& k) {
  return EvaluateDomain(problem, domain, k).cost;
}

Mat CostGradient(const LqrProblem& problem, const LqrDomain& domain,
                 const DomainEvaluation& eval) {
  const Eigen::Index n_s = problem.n_s();
  const Mat sigma = SolveDiscreteLyapunov(
      Mat(eval.closed_loop.transpose()), Mat(Mat::Identity(n_s, n_s)));
  const Mat g_state =
      2.0 *
      (problem.r * eval.feedback +
       problem.b.transpose() * eval.value * eval.closed_loop) *
      sigma;
  Mat g(problem.n_a(), n_s + domain.n_y());
  g.leftCols(n_s).noalias() = g_state * problem.wc.transpose();
  if (domain.n_y() > 0) {
    g.rightCols(domain.n_y()).noalias() = g_state * domain.wd.transpose();
  }
  return g;
}

Mat CostGradient(const LqrProblem& problem, const LqrDomain& domain,
                 const Mat& k) {
  return CostGradient(problem, domain, EvaluateDomain(problem, domain, k));
}

Mat InitStabilizing(const LqrProblem& problem, Eigen::Index n_y,
                    double gain) {
  Mat k = Mat::Zero(problem.n_a(), problem.n_s() + n_y);
  k.leftCols(problem.n_s()) = -gain * problem.a * problem.wc.transpose();
  return k;
}

double OracleCost(const LqrProblem& problem) {
  return SolveDare(problem.a, problem.b, problem.q, problem.r).p.trace();
}

TrainResult<LinearPolicy> TrainGd(const LqrProblem& problem,
                                  std::span<const LqrDomain> domains,
                                  const LqrOptConfig& opts) {
  CheckDomains(problem, domains);
  TrainResult<LinearPolicy> out;
  Mat k = InitStabilizing(problem, domains.front().n_y(), opts.init_gain);
  Evaluation eval = EvaluateAll(problem, domains, k);
  Adam adam(k.size(), opts.adam);
  ConvergenceMonitor monitor(opts);

  for (int it = 1; it <= opts.max_iterations; ++it) {
    const Mat grad =
        SummedGradient(problem, domains, eval, k.rows(), k.cols());
    const Mat step = Unflatten(adam.Step(Flat(grad), opts.learning_rate),
                               k.rows(), k.cols());
    const bool moved = Backtrack(
        opts.max_backtracks,
        [&](double scale) {
          Mat candidate = k - scale * step;
          auto cand_eval = TryEvaluateAll(problem, domains, candidate);
          if (!cand_eval) return Trial::kUnstable;
          if (cand_eval->total > eval.total) return Trial::kWorse;
          k = std::move(candidate);
          eval = *std::move(cand_eval);
          return Trial::kAccepted;
        },
        it);
    if (!moved) ++out.stalled_steps;
    out.curve.push_back({it, eval.Costs(), eval.total});
    out.iterations = it;
    if (monitor.Push(eval.total)) {
      out.converged = true;
      break;
    }
  }
  out.policy.k = std::move(k);
  return out;
}

TrainResult<FactoredPolicy> TrainOverparam(const LqrProblem& problem,
                                           std::span<const LqrDomain> domains,
                                           const LqrOptConfig& opts) {
  CheckDomains(problem, domains);
  TrainResult<FactoredPolicy> out;
  const Eigen::Index n_a = problem.n_a();
  const Eigen::Index h = opts.hidden_factor * n_a;
  const Mat k0 = InitStabilizing(problem, domains.front().n_y(), opts.init_gain);

  // K1 has orthonormal rows, so K1 K1^T = I and K1 (K1^T K0) = K0.
  Mat k1 = SampleSemiOrthogonal(h, n_a, SplitSeed(opts.seed, "overparam"))
               .transpose();
  Mat k2 = k1.transpose() * k0;

  Evaluation eval = EvaluateAll(problem, domains, Mat(k1 * k2));
  Adam adam1(k1.size(), opts.adam);
  Adam adam2(k2.size(), opts.adam);
  ConvergenceMonitor monitor(opts);

  for (int it = 1; it <= opts.max_iterations; ++it) {
    const Mat grad =
        SummedGradient(problem, domains, eval, n_a, k2.cols());
    const Mat g1 = grad * k2.transpose();
    const Mat g2 = k1.transpose() * grad;
    const Mat step1 = Unflatten(adam1.Step(Flat(g1), opts.learning_rate),
                                k1.rows(), k1.cols());
    const Mat step2 = Unflatten(adam2.Step(Flat(g2), opts.learning_rate),
                                k2.rows(), k2.cols());
    const bool moved = Backtrack(
        opts.max_backtracks,
        [&](double scale) {
          Mat c1 = k1 - scale * step1;
          Mat c2 = k2 - scale * step2;
          auto cand_eval = TryEvaluateAll(problem, domains, Mat(c1 * c2));
          if (!cand_eval) return Trial::kUnstable;
          if (cand_eval->total > eval.total) return Trial::kWorse;
          k1 = std::move(c1);
          k2 = std::move(c2);
          eval = *std::move(cand_eval);
          return Trial::kAccepted;
        },
        it);
    if (!moved) ++out.stalled_steps;
    out.curve.push_back({it, eval.Costs(), eval.total});
    out.iterations = it;
    if (monitor.Push(eval.total)) {
      out.converged = true;
      break;
    }
  }
  out.policy.k1 = std::move(k1);
  out.policy.k2 = std::move(k2);
  return out;
}

TrainResult<IpoLqrPolicy> TrainIpoLqr(const LqrProblem& problem,
                                      std::span<const LqrDomain> domains,
                                      bool fixed_phi,
                                      const LqrOptConfig& opts) {
  CheckDomains(problem, domains);
  TrainResult<IpoLqrPolicy> out;
  IpoLqrPolicy& policy = out.policy;
  const auto n_d = static_cast<double>(domains.size());
  const Mat k0 = InitStabilizing(problem, domains.front().n_y(), opts.init_gain);
  const Eigen::Index n_obs = k0.cols();

  if (fixed_phi) {
    policy.per_domain.assign(domains.size(), k0);
  } else {
    const Eigen::Index h = opts.hidden_factor * problem.n_a();
    policy.phi = RectIdentity(h, n_obs);
    // K0 is supported on its first n_s columns, which Phi passes through.
    policy.per_domain.assign(domains.size(), Mat(k0 * policy.phi->transpose()));
  }

  Evaluation eval = EvaluateAll(problem, domains, policy.Effective());
  std::vector<Adam> players(domains.size(),
                            Adam(policy.per_domain.front().size(), opts.adam));
  Adam phi_adam(policy.phi ? policy.phi->size() : 0, opts.adam);
  ConvergenceMonitor monitor(opts);

  for (int it = 1; it <= opts.max_iterations; ++it) {
    bool all_moved = true;
    if (policy.phi) {
      Mat& phi = *policy.phi;
      const Mat avg = policy.Average();
      const Mat grad =
          SummedGradient(problem, domains, eval, problem.n_a(), n_obs);
      const Mat g_phi = avg.transpose() * grad;
      const Mat step = Unflatten(phi_adam.Step(Flat(g_phi), opts.learning_rate),
                                 phi.rows(), phi.cols());
      all_moved &= Backtrack(
          opts.max_backtracks,
          [&](double scale) {
            Mat candidate = phi - scale * step;
            auto cand_eval =
                TryEvaluateAll(problem, domains, Mat(avg * candidate));
            if (!cand_eval) return Trial::kUnstable;
            if (cand_eval->total > eval.total) return Trial::kWorse;
            phi = std::move(candidate);
            eval = *std::move(cand_eval);
            return Trial::kAccepted;
          },
          it);
    }

    for (size_t d = 0; d < domains.size(); ++d) {
      // cost_d(mean_i K^i Phi) depends on K^d through the 1/n_d average.
      Mat grad = CostGradient(problem, domains[d], eval.per_domain[d]) / n_d;
      if (policy.phi) grad = grad * policy.phi->transpose();
      Mat& kd = policy.per_domain[d];
      const Mat step = Unflatten(
          players[d].Step(Flat(grad), opts.learning_rate), kd.rows(),
          kd.cols());
      all_moved &= Backtrack(
          opts.max_backtracks,
          [&](double scale) {
            Mat previous = kd;
            kd = previous - scale * step;
            auto cand_eval =
                TryEvaluateAll(problem, domains, policy.Effective());
            if (cand_eval &&
                cand_eval->per_domain[d].cost <= eval.per_domain[d].cost) {
              eval = *std::move(cand_eval);
              return Trial::kAccepted;
            }
            kd = std::move(previous);
            return cand_eval ? Trial::kWorse : Trial::kUnstable;
          },
          it);
    }
    if (!all_moved) ++out.stalled_steps;
    out.curve.push_back({it, eval.Costs(), eval.total});
    out.iterations = it;
    if (monitor.Push(eval.total)) {
      out.converged = true;
      break;
    }
  }
  return out;
}

TransferResult EvaluateTransfer(const Mat& effective_k,
                                const LqrProblem& problem,
                                const LqrDomain& test_domain) {
  try {
    return {Cost(problem, test_domain, effective_k), false};
  } catch (const UnstableError&) {
    return {std::numeric_limits<double>::infinity(), true};
  }
}

}  // namespace ipo::lqr
