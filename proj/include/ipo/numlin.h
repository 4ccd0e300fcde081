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

#ifndef IPO_NUMLIN_H_
#define IPO_NUMLIN_H_

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>

#include "ipo/errors.h"
#include "ipo/rng.h"

namespace ipo {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Mat = Matrix<double>;

// Solver tolerances and budgets, in one place.
struct NumlinTolerances {
  // Returned (semi-)orthogonal matrices satisfy |Q^T Q - I|_max below this.
  double orthogonality = 1e-10;
  // Lyapunov inputs must have spectral radius below 1 - stability_margin.
  double stability_margin = 1e-9;
  // Smith doubling stops once |A^T P A|_max < lyapunov_update * max(1, |P|).
  double lyapunov_update = 1e-14;
  int lyapunov_max_rounds = 200;
  // Riccati iteration stops once |P_next - P|_max < dare_update * max(1, |P|).
  double dare_update = 1e-12;
  int dare_max_iterations = 10000;
};

inline constexpr NumlinTolerances kNumlinTolerances{};

template <typename Derived>
typename Derived::Scalar MaxAbs(const Eigen::MatrixBase<Derived>& m) {
  return m.size() == 0 ? typename Derived::Scalar(0) : m.cwiseAbs().maxCoeff();
}

// Fills a rows x cols matrix with standard normals, column by column.
template <typename Scalar = double>
Matrix<Scalar> SampleGaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix<Scalar> g(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      g(i, j) = static_cast<Scalar>(rng.Normal());
    }
  }
  return g;
}

// Tall matrix with orthonormal columns: thin QR of a Gaussian matrix with
// the signs of R's diagonal folded into Q, which makes the result Haar
// distributed on the Stiefel manifold.
template <typename Scalar = double>
Matrix<Scalar> SampleSemiOrthogonal(Eigen::Index rows, Eigen::Index cols,
                                    uint64_t seed) {
  if (cols < 1 || rows < cols) {
    std::ostringstream msg;
    msg << "SampleSemiOrthogonal: need rows >= cols >= 1, got " << rows << "x"
        << cols;
    throw std::invalid_argument(msg.str());
  }
  Rng rng(seed);
  const Matrix<Scalar> g = SampleGaussian<Scalar>(rows, cols, rng);
  const Eigen::HouseholderQR<Matrix<Scalar>> qr(g);
  Matrix<Scalar> q = qr.householderQ() * Matrix<Scalar>::Identity(rows, cols);
  const Matrix<Scalar>& r = qr.matrixQR();
  for (Eigen::Index j = 0; j < cols; ++j) {
    if (r(j, j) < Scalar(0)) q.col(j) = -q.col(j);
  }
  return q;
}

template <typename Scalar = double>
Matrix<Scalar> SampleOrthogonal(Eigen::Index n, uint64_t seed) {
  if (n < 1) throw std::invalid_argument("SampleOrthogonal: n must be >= 1");
  return SampleSemiOrthogonal<Scalar>(n, n, seed);
}

// Largest eigenvalue modulus, from the full real Schur-based eigenvalue
// decomposition.
template <typename Derived>
typename Derived::Scalar SpectralRadius(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (m.rows() != m.cols()) {
    throw std::invalid_argument("SpectralRadius: matrix must be square");
  }
  if (m.size() == 0) return Scalar(0);
  const Eigen::EigenSolver<Matrix<Scalar>> solver(m.eval(),
                                                  /*computeEigenvectors=*/false);
  if (solver.info() != Eigen::Success) {
    throw NonConvergentError("SpectralRadius: eigenvalue iteration failed");
  }
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

// Solves P = Qeff + Acl^T P Acl by Smith doubling:
//   P <- P + A^T P A,  A <- A^2,
// which sums the series sum_t (Acl^T)^t Qeff Acl^t in log2 many rounds.
template <typename Scalar>
Matrix<Scalar> SolveDiscreteLyapunov(
    const Matrix<Scalar>& a_cl, const Matrix<Scalar>& q_eff,
    const NumlinTolerances& tol = kNumlinTolerances) {
  if (a_cl.rows() != a_cl.cols() || q_eff.rows() != a_cl.rows() ||
      q_eff.cols() != a_cl.cols()) {
    throw std::invalid_argument("SolveDiscreteLyapunov: shape mismatch");
  }
  const Scalar rho = SpectralRadius(a_cl);
  if (!(rho < Scalar(1) - Scalar(tol.stability_margin))) {
    std::ostringstream msg;
    msg << "SolveDiscreteLyapunov: spectral radius " << rho << " >= 1";
    throw UnstableError(msg.str());
  }
  Matrix<Scalar> p = q_eff;
  Matrix<Scalar> a = a_cl;
  for (int round = 0; round < tol.lyapunov_max_rounds; ++round) {
    const Matrix<Scalar> update = a.transpose() * p * a;
    p += update;
    if (MaxAbs(update) <
        Scalar(tol.lyapunov_update) * std::max(Scalar(1), MaxAbs(p))) {
      return Scalar(0.5) * (p + p.transpose());
    }
    a = (a * a).eval();
  }
  throw NonConvergentError("SolveDiscreteLyapunov: doubling did not converge");
}

template <typename Scalar>
struct DareSolution {
  Matrix<Scalar> p;
  // Optimal state feedback, a = k * s.
  Matrix<Scalar> k;
  int iterations = 0;
};

// Discrete algebraic Riccati equation
//   P = Q + A^T P A - A^T P B (R + B^T P B)^{-1} B^T P A
// by fixed-point (value) iteration from P = Q.
template <typename Scalar>
DareSolution<Scalar> SolveDare(const Matrix<Scalar>& a,
                               const Matrix<Scalar>& b,
                               const Matrix<Scalar>& q,
                               const Matrix<Scalar>& r,
                               const NumlinTolerances& tol = kNumlinTolerances) {
  const Eigen::Index n = a.rows();
  const Eigen::Index m = b.cols();
  if (a.cols() != n || b.rows() != n || q.rows() != n || q.cols() != n ||
      r.rows() != m || r.cols() != m) {
    throw std::invalid_argument("SolveDare: shape mismatch");
  }
  Matrix<Scalar> p = q;
  for (int it = 1; it <= tol.dare_max_iterations; ++it) {
    const Matrix<Scalar> bt_p = b.transpose() * p;
    const Eigen::LDLT<Matrix<Scalar>> gram(r + bt_p * b);
    const Matrix<Scalar> gain = gram.solve(bt_p * a);
    const Matrix<Scalar> pa = p * a;
    Matrix<Scalar> next = q + a.transpose() * pa - (bt_p * a).transpose() * gain;
    next = Scalar(0.5) * (next + next.transpose());
    const Scalar change = MaxAbs(next - p);
    p = std::move(next);
    if (!std::isfinite(static_cast<double>(change))) break;
    if (change < Scalar(tol.dare_update) * std::max(Scalar(1), MaxAbs(p))) {
      const Matrix<Scalar> bt_pf = b.transpose() * p;
      const Eigen::LDLT<Matrix<Scalar>> gram_final(r + bt_pf * b);
      return {p, -gram_final.solve(bt_pf * a), it};
    }
  }
  throw NonConvergentError("SolveDare: Riccati iteration did not converge");
}

}  // namespace ipo

#endif  // IPO_NUMLIN_H_
