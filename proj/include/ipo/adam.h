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

#ifndef IPO_ADAM_H_
#define IPO_ADAM_H_

#include <Eigen/Core>

#include <cmath>
#include <cstdint>

namespace ipo {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction over a flat parameter vector.
class Adam {
 public:
  Adam() = default;
  explicit Adam(Eigen::Index size, AdamConfig config = {})
      : config_(config),
        m_(Eigen::VectorXd::Zero(size)),
        v_(Eigen::VectorXd::Zero(size)) {}

  // Folds `grad` into the moment estimates and returns the update
  //   lr * m_hat / (sqrt(v_hat) + eps),
  // which the caller subtracts (possibly scaled, when backtracking).
  Eigen::VectorXd Step(const Eigen::Ref<const Eigen::VectorXd>& grad,
                       double lr) {
    ++t_;
    m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * grad;
    v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    return (lr * (m_ / c1).array() /
            ((v_ / c2).array().sqrt() + config_.epsilon))
        .matrix();
  }

  void Apply(Eigen::Ref<Eigen::VectorXd> params,
             const Eigen::Ref<const Eigen::VectorXd>& grad, double lr) {
    params -= Step(grad, lr);
  }

  int64_t step_count() const { return t_; }
  const Eigen::VectorXd& first_moment() const { return m_; }
  const Eigen::VectorXd& second_moment() const { return v_; }

  void Restore(Eigen::VectorXd m, Eigen::VectorXd v, int64_t t) {
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
  }

 private:
  AdamConfig config_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  int64_t t_ = 0;
};

}  // namespace ipo

#endif  // IPO_ADAM_H_
