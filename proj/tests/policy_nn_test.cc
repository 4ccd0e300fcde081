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


#include "ipo/policy_nn.h"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <vector>

#include "ipo/gridworld.h"
#include "ipo/numlin.h"
#include "ipo/oracles.h"
#include "ipo/rng.h"

namespace ipo::nn {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::vector<grid::Observation> SomeObservations(int n) {
  std::vector<grid::Observation> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(grid::EncodeObservation(
        grid::GenerateEnv(i % 2 ? grid::Color::kRed : grid::Color::kGreen, i)));
  }
  return out;
}

ActorCriticNet PerturbedNet(uint64_t seed) {
  ActorCriticNet net = ActorCriticNet::Initialize(seed);
  Rng rng(seed + 1);
  for (ParamTensor& p : net.params()) {
    for (Eigen::Index i = 0; i < p.values.size(); ++i) {
      p.values(i) += 0.1 * rng.Normal();
    }
  }
  return net;
}

// Scalar test loss mixing scores and values with fixed random weights.
struct LinearLoss {
  MatrixXd w_scores;
  VectorXd w_values;

  double operator()(const ActorCriticNet& net, const MatrixXd& x, int n) const {
    const ForwardOutput out = net.Forward(x, n);
    return (out.scores.array() * w_scores.array()).sum() +
           out.values.dot(w_values) +
           0.5 * out.values.squaredNorm();
  }
  void Backward(ActorCriticNet& net, const MatrixXd& x, int n) const {
    const ForwardOutput out = net.Forward(x, n);
    net.Backward(out.cache, w_scores, VectorXd(w_values + out.values));
  }
};

TEST(Embed, OneHotPlanes) {
  const auto obs = SomeObservations(3);
  const MatrixXd x = EmbedObservations(obs);
  ASSERT_EQ(x.rows(), kInputPlanes);
  ASSERT_EQ(x.cols(), 3 * kCells);
  // Exactly one type, color and state plane is hot per cell.
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    EXPECT_EQ(x.col(c).head(kTypePlanes).sum(), 1.0);
    EXPECT_EQ(x.col(c).segment(kTypePlanes, grid::kNumColors).sum(), 1.0);
    EXPECT_EQ(x.col(c).tail(3).sum(), 1.0);
  }
}

TEST(Forward, ShapesAndDeterminism) {
  const ActorCriticNet net = ActorCriticNet::Initialize(1);
  const auto obs = SomeObservations(4);
  const ForwardOutput a = net.Forward(obs);
  EXPECT_EQ(a.scores.rows(), grid::kNumActions);
  EXPECT_EQ(a.scores.cols(), 4);
  EXPECT_EQ(a.values.size(), 4);
  const ForwardOutput b = net.Forward(obs);
  EXPECT_EQ(a.scores, b.scores);
  const auto [s0, v0] = net.Forward(obs[0]);
  EXPECT_LT((s0 - a.scores.col(0)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(v0, a.values(0), 1e-12);
}

TEST(Forward, ZeroHeadsGiveUniformPolicy) {
  ActorCriticNet net = ActorCriticNet::Initialize(2);
  net.ZeroHeads();
  const auto obs = SomeObservations(2);
  const ForwardOutput out = net.Forward(obs);
  EXPECT_TRUE(out.scores.isZero(0.0));
  const CategoricalDist d = CategoricalDist::FromScores(out.scores.col(0));
  for (int a = 0; a < grid::kNumActions; ++a) {
    EXPECT_NEAR(d.probs(a), 1.0 / 7.0, 1e-15);
  }
  EXPECT_NEAR(d.Entropy(), std::log(7.0), 1e-12);
  EXPECT_THROW(net.Forward(MatrixXd::Zero(3, 25), 1), std::invalid_argument);
}

TEST(Initialize, OrthogonalGains) {
  const ActorCriticNet net = ActorCriticNet::Initialize(3);
  const auto& p = net.params();
  const MatrixXd actor = p[ActorCriticNet::kActorW].AsMatrix();
  // 7 x 64 with orthonormal rows scaled by 0.01.
  EXPECT_LT((actor * actor.transpose() - 1e-4 * MatrixXd::Identity(7, 7))
                .cwiseAbs()
                .maxCoeff(),
            1e-12);
  const MatrixXd conv1 = p[ActorCriticNet::kConv1W].AsMatrix();
  EXPECT_LT((conv1 * conv1.transpose() - 2.0 * MatrixXd::Identity(16, 16))
                .cwiseAbs()
                .maxCoeff(),
            1e-10);
  EXPECT_TRUE(p[ActorCriticNet::kConv1B].values.isZero(0.0));
  EXPECT_EQ(ActorCriticNet::Initialize(3), net);
  EXPECT_FALSE(ActorCriticNet::Initialize(4) == net);
}

TEST(Backward, MatchesFiniteDifferences) {
  Rng rng(5);
  const int n = 3;
  // Continuous inputs keep max-pool ties and ReLU kinks away.
  const MatrixXd x = SampleGaussian<double>(kInputPlanes, n * kCells, rng);
  const LinearLoss loss{SampleGaussian<double>(grid::kNumActions, n, rng),
                        SampleGaussian<double>(n, 1, rng)};
  ActorCriticNet net = PerturbedNet(6);
  const auto fd = oracle::NetCentralDifference(
      net, [&](const ActorCriticNet& m) { return loss(m, x, n); }, 1e-4);
  net.ZeroGrad();
  loss.Backward(net, x, n);
  for (size_t p = 0; p < fd.size(); ++p) {
    const VectorXd& g = net.params()[p].grad;
    const double err = (g - fd[p]).norm() / (g.norm() + fd[p].norm() + 1e-300);
    EXPECT_LT(err, 1e-4) << net.params()[p].name;
  }
}

TEST(Backward, OneHotInputsMatchFiniteDifferences) {
  Rng rng(7);
  const auto obs = SomeObservations(2);
  const MatrixXd x = EmbedObservations(obs);
  const LinearLoss loss{SampleGaussian<double>(grid::kNumActions, 2, rng),
                        SampleGaussian<double>(2, 1, rng)};
  ActorCriticNet net = PerturbedNet(8);
  const auto fd = oracle::NetCentralDifference(
      net, [&](const ActorCriticNet& m) { return loss(m, x, 2); }, 1e-5);
  net.ZeroGrad();
  loss.Backward(net, x, 2);
  for (size_t p = 0; p < fd.size(); ++p) {
    const VectorXd& g = net.params()[p].grad;
    const double err = (g - fd[p]).norm() / (g.norm() + fd[p].norm() + 1e-300);
    EXPECT_LT(err, 1e-4) << net.params()[p].name;
  }
}

TEST(Backward, LinearInTheLoss) {
  Rng rng(9);
  const MatrixXd x = SampleGaussian<double>(kInputPlanes, 2 * kCells, rng);
  ActorCriticNet net = PerturbedNet(10);
  const ForwardOutput out = net.Forward(x, 2);
  const MatrixXd s1 = SampleGaussian<double>(7, 2, rng);
  const MatrixXd s2 = SampleGaussian<double>(7, 2, rng);
  const VectorXd v1 = SampleGaussian<double>(2, 1, rng);
  const VectorXd v2 = SampleGaussian<double>(2, 1, rng);

  net.ZeroGrad();
  net.Backward(out.cache, s1 + s2, v1 + v2);
  std::vector<VectorXd> joint;
  for (const auto& p : net.params()) joint.push_back(p.grad);

  net.ZeroGrad();
  net.Backward(out.cache, s1, v1);
  net.Backward(out.cache, s2, v2);
  for (size_t p = 0; p < joint.size(); ++p) {
    EXPECT_LT((net.params()[p].grad - joint[p]).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Backward, CriticLossLeavesActorUntouched) {
  Rng rng(11);
  const MatrixXd x = SampleGaussian<double>(kInputPlanes, kCells, rng);
  ActorCriticNet net = PerturbedNet(12);
  const ForwardOutput out = net.Forward(x, 1);
  net.ZeroGrad();
  net.Backward(out.cache, MatrixXd::Zero(7, 1), VectorXd::Ones(1));
  EXPECT_TRUE(net.params()[ActorCriticNet::kActorW].grad.isZero(0.0));
  EXPECT_TRUE(net.params()[ActorCriticNet::kActorB].grad.isZero(0.0));
  EXPECT_FALSE(net.params()[ActorCriticNet::kCriticW].grad.isZero(0.0));
}

TEST(Categorical, SampleAndLogProb) {
  VectorXd scores(7);
  scores << 1, 2, 3, 0, -1, 0.5, 2;
  const CategoricalDist d = CategoricalDist::FromScores(scores);
  EXPECT_NEAR(d.probs.sum(), 1.0, 1e-12);
  EXPECT_NEAR(d.LogProb(2), scores(2) - std::log(scores.array().exp().sum()),
              1e-12);
  EXPECT_EQ(d.Sample(0.0), 0);
  EXPECT_EQ(d.Sample(std::nextafter(1.0, 0.0)), 6);
  // Large scores stay finite.
  VectorXd big = VectorXd::Constant(7, 1000.0);
  big(3) = 1001.0;
  const CategoricalDist b = CategoricalDist::FromScores(big);
  EXPECT_TRUE(b.probs.allFinite());
  EXPECT_NEAR(b.probs.sum(), 1.0, 1e-12);
}

TEST(AverageScores, SymmetricPair) {
  MatrixXd a = MatrixXd::Zero(7, 1), b = MatrixXd::Zero(7, 1);
  a(0, 0) = 2.0;
  b(1, 0) = 2.0;
  const std::vector<MatrixXd> both = {a, b};
  const CategoricalDist d = CategoricalDist::FromScores(AverageScores(both).col(0));
  EXPECT_DOUBLE_EQ(d.probs(0), d.probs(1));
  EXPECT_NEAR(d.probs.sum(), 1.0, 1e-8);
}

TEST(AverageScores, EnsembleProperties) {
  const auto obs = SomeObservations(3);
  PolicyEnsemble one{{PerturbedNet(20)}};
  PolicyEnsemble three{{PerturbedNet(20), PerturbedNet(21), PerturbedNet(22)}};
  PolicyEnsemble rotated{{three.nets[2], three.nets[0], three.nets[1]}};
  for (const auto& o : obs) {
    // Single net: softmax of its own scores.
    const CategoricalDist single = AverageScores(one, o);
    const CategoricalDist direct =
        CategoricalDist::FromScores(one.nets[0].Forward(o).first);
    EXPECT_LT((single.probs - direct.probs).cwiseAbs().maxCoeff(), 1e-15);
    // Permutation invariance.
    const CategoricalDist d3 = AverageScores(three, o);
    EXPECT_LT((d3.probs - AverageScores(rotated, o).probs).cwiseAbs().maxCoeff(),
              1e-12);
    EXPECT_NEAR(d3.probs.sum(), 1.0, 1e-8);
    // Duplicating members of an ensemble of identical nets changes nothing.
    PolicyEnsemble same{{three.nets[0], three.nets[0]}};
    PolicyEnsemble more{{three.nets[0], three.nets[0], three.nets[0]}};
    EXPECT_LT((AverageScores(same, o).probs - AverageScores(more, o).probs)
                  .cwiseAbs()
                  .maxCoeff(),
              1e-12);
  }
}

TEST(AverageScores, ShiftInvariance) {
  Rng rng(3);
  std::vector<MatrixXd> scores = {SampleGaussian<double>(7, 1, rng),
                                  SampleGaussian<double>(7, 1, rng)};
  const VectorXd p = CategoricalDist::FromScores(AverageScores(scores).col(0)).probs;
  for (MatrixXd& s : scores) s.array() += 3.7;
  const VectorXd q = CategoricalDist::FromScores(AverageScores(scores).col(0)).probs;
  EXPECT_LT((p - q).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(AverageGaussian, ArithmeticMeans) {
  const GaussianDist a{VectorXd::Constant(1, 1.0), VectorXd::Constant(1, 0.2)};
  const GaussianDist b{VectorXd::Constant(1, 3.0), VectorXd::Constant(1, 0.4)};
  const std::vector<GaussianDist> ab = {a, b};
  const GaussianDist m = AverageGaussian(ab);
  EXPECT_DOUBLE_EQ(m.mean(0), 2.0);
  EXPECT_NEAR(m.std(0), 0.3, 1e-15);
  const std::vector<GaussianDist> aa = {a, a};
  EXPECT_EQ(AverageGaussian(aa).mean, a.mean);
  EXPECT_EQ(AverageGaussian(aa).std, a.std);
}

TEST(AverageGaussian, RejectsBadInput) {
  const GaussianDist a{VectorXd::Zero(2), VectorXd::Ones(2)};
  const GaussianDist b{VectorXd::Zero(3), VectorXd::Ones(3)};
  const GaussianDist c{VectorXd::Zero(2), VectorXd::Zero(2)};
  EXPECT_THROW(AverageGaussian(std::vector<GaussianDist>{a, b}),
               std::invalid_argument);
  EXPECT_THROW(AverageGaussian(std::vector<GaussianDist>{a, c}),
               std::invalid_argument);
  EXPECT_THROW(AverageGaussian(std::vector<GaussianDist>{}),
               std::invalid_argument);
}

TEST(Adam, FirstStepAndZeroGradient) {
  ActorCriticNet net = ActorCriticNet::Initialize(30);
  const ActorCriticNet before = net;
  AdamState state(net.params());
  net.ZeroGrad();
  net.params()[0].grad.setConstant(-3.0);
  AdamStep(net.params(), state, 0.01);
  const VectorXd delta = net.params()[0].values - before.params()[0].values;
  EXPECT_LT((delta.array() - 0.01).abs().maxCoeff(), 1e-8);
  for (size_t p = 1; p < net.params().size(); ++p) {
    EXPECT_EQ(net.params()[p].values, before.params()[p].values);
  }
}

TEST(Adam, DeterministicTrajectories) {
  auto run = [] {
    ActorCriticNet net = ActorCriticNet::Initialize(31);
    AdamState state(net.params());
    Rng rng(1);
    for (int i = 0; i < 5; ++i) {
      for (ParamTensor& p : net.params()) {
        for (Eigen::Index j = 0; j < p.grad.size(); ++j) p.grad(j) = rng.Normal();
      }
      AdamStep(net.params(), state, 0.001);
    }
    return net;
  };
  EXPECT_EQ(run(), run());
}

TEST(GradClip, NormAndScale) {
  ActorCriticNet net = ActorCriticNet::Initialize(32);
  net.ZeroGrad();
  net.params()[0].grad(0) = 3.0;
  net.params()[1].grad(0) = 4.0;
  EXPECT_DOUBLE_EQ(net.GradNorm(), 5.0);
  net.ScaleGrad(0.1);
  EXPECT_NEAR(net.GradNorm(), 0.5, 1e-15);
}

TEST(Checkpoint, RoundTrip) {
  const std::vector<ActorCriticNet> nets = {PerturbedNet(40), PerturbedNet(41)};
  const auto path =
      std::filesystem::temp_directory_path() / "ipo_policy_nn_test_ckpt.json";
  SaveCheckpoint(path, nets, {{"method", "ipo"}});
  const Checkpoint back = LoadCheckpoint(path);
  ASSERT_EQ(back.nets.size(), 2u);
  EXPECT_EQ(back.nets[0], nets[0]);
  EXPECT_EQ(back.nets[1], nets[1]);
  EXPECT_EQ(back.meta["method"], "ipo");
  EXPECT_EQ(NetFromJson(ToJson(nets[0])), nets[0]);
  std::filesystem::remove(path);

  nlohmann::json bad = ToJson(nets[0]);
  bad["params"][0]["shape"] = {1, 2};
  EXPECT_THROW(NetFromJson(bad), std::exception);
}

}  // namespace
}  // namespace ipo::nn
