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


#include "ipo/numlin.h"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "ipo/errors.h"
#include "ipo/oracles.h"
#include "ipo/rng.h"

namespace ipo {
namespace {

TEST(SampleOrthogonal, IsOrthogonalAndSeeded) {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    const Mat q = SampleOrthogonal<double>(20, seed);
    EXPECT_LT(MaxAbs(q.transpose() * q - Mat::Identity(20, 20)), 1e-10);
    EXPECT_LT(std::abs(SpectralRadius(q) - 1.0), 1e-10);
  }
  EXPECT_EQ(SampleOrthogonal<double>(7, 3), SampleOrthogonal<double>(7, 3));
  EXPECT_NE(SampleOrthogonal<double>(7, 3), SampleOrthogonal<double>(7, 4));
}

TEST(SampleOrthogonal, ScalarIsPlusMinusOne) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    EXPECT_EQ(std::abs(SampleOrthogonal<double>(1, seed)(0, 0)), 1.0);
  }
}

TEST(SampleSemiOrthogonal, ColumnsOrthonormal) {
  const Mat m = SampleSemiOrthogonal<double>(1000, 20, 9);
  EXPECT_LT(MaxAbs(m.transpose() * m - Mat::Identity(20, 20)), 1e-10);
  EXPECT_THROW(SampleSemiOrthogonal<double>(3, 5, 1), std::invalid_argument);
  EXPECT_THROW(SampleSemiOrthogonal<double>(3, 0, 1), std::invalid_argument);
}

TEST(SampleSemiOrthogonal, FloatScalar) {
  const Matrix<float> m = SampleSemiOrthogonal<float>(30, 4, 2);
  EXPECT_LT(MaxAbs(m.transpose() * m - Matrix<float>::Identity(4, 4)), 1e-5f);
}

TEST(SpectralRadius, KnownMatrices) {
  Mat rot(2, 2);
  rot << 0, -2, 2, 0;
  EXPECT_NEAR(SpectralRadius(rot), 2.0, 1e-12);
  EXPECT_NEAR(SpectralRadius(Mat(0.5 * Mat::Identity(4, 4))), 0.5, 1e-12);
  EXPECT_THROW(SpectralRadius(Mat(2, 3)), std::invalid_argument);
}

TEST(Lyapunov, MatchesTruncatedSeries) {
  Rng rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    Mat a = SampleGaussian<double>(5, 5, rng);
    a *= (0.3 + 0.15 * trial) / SpectralRadius(a);
    const Mat m = SampleGaussian<double>(5, 5, rng);
    const Mat q = m * m.transpose();
    const Mat p = SolveDiscreteLyapunov(a, q);
    EXPECT_LT(oracle::RelativeError(p, oracle::LyapunovSeries(a, q)), 1e-10);
    EXPECT_LT(MaxAbs(p - q - a.transpose() * p * a), 1e-10 * MaxAbs(p));
  }
}

TEST(Lyapunov, ScaledOrthogonalClosedForm) {
  // Acl = 0.5 A, Qeff = 1.25 I  ->  P = (1.25 / 0.75) I.
  const Mat a = 0.5 * SampleOrthogonal<double>(20, 7);
  const Mat p = SolveDiscreteLyapunov(a, Mat(1.25 * Mat::Identity(20, 20)));
  EXPECT_NEAR(p.trace(), 20.0 * 5.0 / 3.0, 1e-10);
}

TEST(Lyapunov, RejectsUnstable) {
  const Mat a = SampleOrthogonal<double>(4, 1);
  EXPECT_THROW(SolveDiscreteLyapunov(a, Mat(Mat::Identity(4, 4))),
               UnstableError);
  EXPECT_THROW(SolveDiscreteLyapunov(Mat(2, 2), Mat(3, 3)),
               std::invalid_argument);
}

TEST(Dare, OrthogonalGoldenRatio) {
  const Mat a = SampleOrthogonal<double>(20, 0);
  const Mat i = Mat::Identity(20, 20);
  const DareSolution<double> sol = SolveDare(a, i, i, i);
  EXPECT_NEAR(sol.p.trace(), 20.0 * std::numbers::phi, 1e-6);
  EXPECT_LT(MaxAbs(sol.p - std::numbers::phi * i), 1e-9);
}

TEST(Dare, Scalar) {
  const Mat one = Mat::Ones(1, 1);
  EXPECT_NEAR(SolveDare(one, one, one, one).p(0, 0), 1.6180339887, 1e-6);
}

TEST(Dare, SatisfiesRiccatiEquation) {
  Rng rng(4);
  const Mat a = SampleGaussian<double>(4, 4, rng);
  const Mat b = SampleGaussian<double>(4, 2, rng);
  const Mat q = Mat::Identity(4, 4);
  const Mat r = Mat::Identity(2, 2);
  const DareSolution<double> sol = SolveDare(a, b, q, r);
  const Mat& p = sol.p;
  const Mat residual = q + a.transpose() * p * a -
                       a.transpose() * p * b *
                           (r + b.transpose() * p * b).inverse() *
                           b.transpose() * p * a -
                       p;
  EXPECT_LT(MaxAbs(residual), 1e-8 * MaxAbs(p));
  EXPECT_LT(SpectralRadius(Mat(a + b * sol.k)), 1.0);
}

}  // namespace
}  // namespace ipo
