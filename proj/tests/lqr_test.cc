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

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "ipo/errors.h"
#include "ipo/oracles.h"
#include "ipo/rng.h"

namespace ipo::lqr {
namespace {

std::vector<LqrDomain> Domains(const LqrProblem& p, int n_d, int n_y,
                               uint64_t seed) {
  std::vector<LqrDomain> out;
  for (int d = 0; d < n_d; ++d) {
    out.push_back(MakeDomain(p, n_y, SplitSeed(seed, "domain", d)));
  }
  return out;
}

LqrOptConfig SmallOpts(int iterations) {
  LqrOptConfig o;
  o.max_iterations = iterations;
  o.hidden_factor = 2;
  return o;
}

TEST(MakeProblem, PaperSetup) {
  const LqrProblem p = MakeProblem(20, 20, 1);
  const Mat i = Mat::Identity(20, 20);
  EXPECT_LT(MaxAbs(p.a.transpose() * p.a - i), 1e-10);
  EXPECT_LT(MaxAbs(p.wc.transpose() * p.wc - i), 1e-10);
  EXPECT_EQ(p.b, i);
  EXPECT_EQ(p.q, i);
  EXPECT_EQ(p.r, i);
  EXPECT_EQ(MakeProblem(20, 20, 1).a, p.a);
}

TEST(MakeProblem, ScalarIsSign) {
  for (uint64_t s = 0; s < 6; ++s) {
    EXPECT_EQ(std::abs(MakeProblem(1, 1, s).a(0, 0)), 1.0);
  }
}

TEST(MakeDomain, SemiOrthogonalAndDistinct) {
  const LqrProblem p = MakeProblem(20, 20, 1);
  const LqrDomain d1 = MakeDomain(p, 1000, 5);
  const LqrDomain d2 = MakeDomain(p, 1000, 6);
  EXPECT_LT(MaxAbs(d1.wd.transpose() * d1.wd - Mat::Identity(20, 20)), 1e-10);
  EXPECT_NE(d1.wd, d2.wd);
  for (int n_y : {100, 500, 1500, 2000}) {
    EXPECT_EQ(MakeDomain(p, n_y, 3).n_y(), n_y);
  }
  EXPECT_THROW(MakeDomain(p, 10, 3), std::invalid_argument);
}

TEST(Cost, InitStabilizingClosedForm) {
  const LqrProblem p = MakeProblem(20, 20, 2);
  const LqrDomain d = MakeDomain(p, 1000, 3);
  const Mat k0 = InitStabilizing(p, 1000);
  EXPECT_TRUE(k0.rightCols(1000).isZero(0.0));
  const Mat a_cl = p.a + p.b * StateFeedback(p, d, k0);
  EXPECT_NEAR(SpectralRadius(a_cl), 0.5, 1e-10);
  EXPECT_NEAR(Cost(p, d, k0), 20.0 * 5.0 / 3.0, 1e-9);
}

TEST(Cost, ZeroPolicyIsUnstable) {
  const LqrProblem p = MakeProblem(6, 6, 2);
  const LqrDomain d = MakeDomain(p, 8, 3);
  EXPECT_THROW(Cost(p, d, Mat::Zero(6, 14)), UnstableError);
  EXPECT_THROW(Cost(p, d, Mat::Zero(6, 13)), std::invalid_argument);
}

TEST(Cost, MatchesStratifiedSimulation) {
  Rng rng(3);
  for (int trial = 0; trial < 3; ++trial) {
    const LqrProblem p = MakeProblem(20, 20, 10 + trial);
    const LqrDomain d = MakeDomain(p, 40, 20 + trial);
    const Mat k = oracle::RandomStabilizingGain(p, d, 0.9, rng);
    const double exact = Cost(p, d, k);
    const double mc = oracle::MonteCarloCost(p, d, k, 100, 500, trial, true);
    EXPECT_NEAR(mc, exact, 0.02 * exact);
  }
}

TEST(Cost, MatchesGaussianSimulation) {
  Rng rng(4);
  const LqrProblem p = MakeProblem(20, 20, 30);
  const LqrDomain d = MakeDomain(p, 40, 31);
  const Mat k = oracle::RandomStabilizingGain(p, d, 0.9, rng);
  const double exact = Cost(p, d, k);
  EXPECT_NEAR(oracle::MonteCarloCost(p, d, k, 4000, 500, 5, false), exact,
              0.02 * exact);
}

TEST(CostGradient, MatchesFiniteDifferences) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 2 + trial % 5;
    const LqrProblem p = MakeProblem(n, n, 40 + trial);
    const LqrDomain d = MakeDomain(p, n + 2, 50 + trial);
    const Mat k = oracle::RandomStabilizingGain(p, d, 0.9, rng);
    const Mat fd = oracle::CentralDifference(
        [&](const Mat& x) { return Cost(p, d, x); }, k, 1e-5);
    EXPECT_LT(oracle::RelativeError(CostGradient(p, d, k), fd), 1e-5)
        << "n_s=" << n;
  }
}

TEST(CostGradient, VanishesAtRiccatiOptimum) {
  for (uint64_t seed = 0; seed < 3; ++seed) {
    const LqrProblem p = MakeProblem(5, 5, seed);
    const LqrDomain d = MakeDomain(p, 9, seed + 100);
    const Mat k_star = SolveDare(p.a, p.b, p.q, p.r).k;
    Mat w(14, 5);
    w << p.wc, d.wd;
    const Mat k = k_star * (w.transpose() * w).inverse() * w.transpose();
    EXPECT_LT(MaxAbs(CostGradient(p, d, k)), 1e-6);
    EXPECT_NEAR(Cost(p, d, k), OracleCost(p), 1e-8);
  }
}

TEST(CostGradient, Deterministic) {
  const LqrProblem p = MakeProblem(4, 4, 1);
  const LqrDomain d = MakeDomain(p, 6, 2);
  const Mat k = InitStabilizing(p, 6);
  EXPECT_EQ(CostGradient(p, d, k), CostGradient(p, d, k));
}

TEST(OracleCost, GoldenRatio) {
  EXPECT_NEAR(OracleCost(MakeProblem(20, 20, 0)), 20.0 * std::numbers::phi,
              1e-6);
  EXPECT_NEAR(OracleCost(MakeProblem(1, 1, 0)), 1.6180, 1e-4);
}

TEST(TrainGd, FullInformationReachesOracle) {
  const LqrProblem p = MakeProblem(4, 4, 3);
  const std::vector<LqrDomain> domains = {MakeDomain(p, 0, 1)};
  LqrOptConfig o;
  o.learning_rate = 0.01;
  const auto r = TrainGd(p, domains, o);
  EXPECT_LT(Cost(p, domains[0], r.policy.k), 1.005 * OracleCost(p));
}

TEST(TrainGd, MonotoneAndStable) {
  const LqrProblem p = MakeProblem(4, 4, 7);
  const auto domains = Domains(p, 3, 8, 7);
  const auto r = TrainGd(p, domains, SmallOpts(300));
  ASSERT_FALSE(r.curve.empty());
  for (size_t i = 1; i < r.curve.size(); ++i) {
    EXPECT_LE(r.curve[i].total_cost, r.curve[i - 1].total_cost);
  }
  for (const LqrDomain& d : domains) {
    const Mat a_cl = p.a + p.b * StateFeedback(p, d, r.policy.k);
    EXPECT_LT(SpectralRadius(a_cl), 1.0);
  }
}

TEST(TrainOverparam, StartsAtInitAndDescends) {
  const LqrProblem p = MakeProblem(4, 4, 8);
  const auto domains = Domains(p, 2, 8, 8);
  LqrOptConfig o = SmallOpts(0);
  const auto r0 = TrainOverparam(p, domains, o);
  EXPECT_LT(MaxAbs(r0.policy.Effective() - InitStabilizing(p, 8, o.init_gain)),
            1e-12);
  const auto r = TrainOverparam(p, domains, SmallOpts(200));
  for (size_t i = 1; i < r.curve.size(); ++i) {
    EXPECT_LE(r.curve[i].total_cost, r.curve[i - 1].total_cost);
  }
  EXPECT_LT(r.curve.back().total_cost, r.curve.front().total_cost);
}

TEST(TrainIpoLqr, SingleDomainReducesToGd) {
  const LqrProblem p = MakeProblem(4, 4, 9);
  const auto domains = Domains(p, 1, 8, 9);
  LqrOptConfig o = SmallOpts(150);
  o.learning_rate = 0.0005;
  const auto gd = TrainGd(p, domains, o);
  const auto ipo = TrainIpoLqr(p, domains, true, o);
  ASSERT_EQ(gd.curve.size(), ipo.curve.size());
  EXPECT_EQ(gd.policy.k, ipo.policy.Effective());
  for (size_t i = 0; i < gd.curve.size(); ++i) {
    EXPECT_EQ(gd.curve[i].total_cost, ipo.curve[i].total_cost);
  }
}

TEST(TrainIpoLqr, IdenticalDomainsKeepPlayersClose) {
  // Players move one after another against the running average, so with
  // identical domains they are not bit-equal; their spread stays a small
  // fraction of the distance each one travels.
  for (uint64_t seed : {10, 11, 12, 13}) {
    const LqrProblem p = MakeProblem(4, 4, seed);
    const LqrDomain d = MakeDomain(p, 8, seed + 100);
    const std::vector<LqrDomain> domains = {d, d, d};
    const LqrOptConfig o = SmallOpts(100);
    const auto r = TrainIpoLqr(p, domains, true, o);
    const Mat k0 = InitStabilizing(p, 8, o.init_gain);
    const Mat& first = r.policy.per_domain[0];
    for (size_t i = 1; i < r.policy.per_domain.size(); ++i) {
      const double spread = (r.policy.per_domain[i] - first).norm();
      const double travel = (first - k0).norm();
      EXPECT_LT(spread, 0.1 * travel) << "seed " << seed << " player " << i;
    }
  }
}

TEST(TrainIpoLqr, VariablePhiDescends) {
  const LqrProblem p = MakeProblem(4, 4, 12);
  const auto domains = Domains(p, 2, 8, 12);
  const auto r = TrainIpoLqr(p, domains, false, SmallOpts(100));
  ASSERT_TRUE(r.policy.phi.has_value());
  EXPECT_EQ(r.policy.phi->rows(), 8);
  EXPECT_LT(r.curve.back().total_cost, r.curve.front().total_cost);
}

TEST(TrainIpoLqr, Deterministic) {
  const LqrProblem p = MakeProblem(4, 4, 13);
  const auto domains = Domains(p, 2, 8, 13);
  const auto a = TrainIpoLqr(p, domains, false, SmallOpts(60));
  const auto b = TrainIpoLqr(p, domains, false, SmallOpts(60));
  EXPECT_EQ(a.policy.Effective(), b.policy.Effective());
}

TEST(EvaluateTransfer, ConsistentWithTraining) {
  const LqrProblem p = MakeProblem(4, 4, 14);
  const auto domains = Domains(p, 2, 8, 14);
  const auto r = TrainGd(p, domains, SmallOpts(50));
  for (size_t d = 0; d < domains.size(); ++d) {
    EXPECT_NEAR(EvaluateTransfer(r.policy, p, domains[d]).cost,
                r.curve.back().domain_costs[d], 1e-9);
  }
  const TransferResult bad = EvaluateTransfer(Mat(Mat::Zero(4, 12)), p, domains[0]);
  EXPECT_TRUE(bad.unstable);
  EXPECT_TRUE(std::isinf(bad.cost));
}

TEST(OracleCost, LowerBoundsTrainedPolicies) {
  const LqrProblem p = MakeProblem(4, 4, 15);
  const auto domains = Domains(p, 2, 8, 15);
  const double oracle = OracleCost(p);
  const auto r = TrainGd(p, domains, SmallOpts(200));
  for (const LqrDomain& d : domains) {
    EXPECT_GE(Cost(p, d, r.policy.k), oracle - 1e-9);
  }
}

}  // namespace
}  // namespace ipo::lqr
