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


#include "ipo/rl_train.h"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "ipo/errors.h"
#include "ipo/oracles.h"
#include "ipo/rng.h"

namespace ipo::rl {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::vector<EnvSpec> Pool(grid::Color c, int n, uint64_t base) {
  std::vector<EnvSpec> out;
  for (int i = 0; i < n; ++i) out.push_back({c, SplitSeed(base, "pool", i)});
  return out;
}

PpoConfig TinyConfig() {
  PpoConfig c;
  c.n_steps = 16;
  c.batch_size = 32;
  c.epochs = 2;
  c.envs_per_rollout = 4;
  c.total_steps = 256;
  return c;
}

Minibatch FirstRows(const RolloutBuffer& buf, int n) {
  Minibatch mb;
  mb.size = n;
  std::vector<grid::Observation> obs(buf.obs.begin(), buf.obs.begin() + n);
  mb.embedded = nn::EmbedObservations(obs);
  mb.actions.assign(buf.actions.begin(), buf.actions.begin() + n);
  mb.old_log_probs = Eigen::Map<const VectorXd>(buf.log_probs.data(), n);
  mb.advantages = Eigen::Map<const VectorXd>(buf.advantages.data(), n);
  mb.returns = Eigen::Map<const VectorXd>(buf.returns.data(), n);
  return mb;
}

TEST(PpoConfig, Validation) {
  PpoConfig c;
  EXPECT_NO_THROW(c.Validate());
  c.gamma = 0.0;
  EXPECT_THROW(c.Validate(), std::invalid_argument);
  c = PpoConfig{};
  c.gae_lambda = 1.5;
  EXPECT_THROW(c.Validate(), std::invalid_argument);
  c = PpoConfig{};
  c.clip = 0.0;
  EXPECT_THROW(c.Validate(), std::invalid_argument);
}

TEST(CollectRollout, ShapesAndDeterminism) {
  const TrainedPolicy policy{{nn::ActorCriticNet::Initialize(1)}};
  auto collect = [&] {
    VecEnv envs(Pool(grid::Color::kRed, 6, 1), 4, 2);
    Rng rng(3);
    return CollectRollout(envs, policy, 0, 300, rng);
  };
  const RolloutBuffer a = collect();
  const RolloutBuffer b = collect();
  ASSERT_EQ(a.size(), 1200u);
  EXPECT_EQ(a.rewards.size(), 1200u);
  EXPECT_EQ(a.dones.size(), 1200u);
  EXPECT_EQ(a.bootstrap_values.size(), 4u);
  EXPECT_EQ(a.actions, b.actions);
  EXPECT_EQ(a.rewards, b.rewards);
  EXPECT_EQ(a.log_probs, b.log_probs);
  for (double lp : a.log_probs) EXPECT_TRUE(std::isfinite(lp));
  const size_t dones = std::accumulate(a.dones.begin(), a.dones.end(), size_t{0});
  EXPECT_EQ(dones, a.episode_returns.size());
}

TEST(CollectRollout, EpisodeBoundaries) {
  const TrainedPolicy policy{{nn::ActorCriticNet::Initialize(2)}};
  VecEnv envs(Pool(grid::Color::kGreen, 3, 2), 2, 5);
  Rng rng(6);
  // 250-step time limit: every env finishes at least once in 300 steps.
  const RolloutBuffer buf = CollectRollout(envs, policy, 0, 300, rng);
  for (int e = 0; e < 2; ++e) {
    int length = 0;
    double ret = 0.0;
    bool saw_done = false;
    for (int t = 0; t < 300; ++t) {
      const size_t r = static_cast<size_t>(t) * 2 + e;
      ++length;
      ret += buf.rewards[r];
      if (buf.dones[r]) {
        saw_done = true;
        EXPECT_LE(length, 250);
        // The reward is only paid on the final step.
        EXPECT_EQ(ret, buf.rewards[r]);
        length = 0;
        ret = 0.0;
      } else {
        EXPECT_EQ(buf.rewards[r], 0.0);
      }
    }
    EXPECT_TRUE(saw_done);
  }
}

TEST(CollectRollout, BehaviorLogProbsOfAveragedPolicy) {
  const TrainedPolicy policy{
      {nn::ActorCriticNet::Initialize(3), nn::ActorCriticNet::Initialize(4)}};
  VecEnv envs(Pool(grid::Color::kRed, 4, 3), 3, 7);
  Rng rng(8);
  const RolloutBuffer buf = CollectRollout(envs, policy, 1, 5, rng);
  for (size_t r = 0; r < buf.size(); ++r) {
    const auto [s0, v0] = policy.nets[0].Forward(buf.obs[r]);
    const auto [s1, v1] = policy.nets[1].Forward(buf.obs[r]);
    const nn::CategoricalDist d =
        nn::CategoricalDist::FromScores(0.5 * (s0 + s1));
    EXPECT_NEAR(buf.log_probs[r], d.LogProb(buf.actions[r]), 1e-12);
    EXPECT_NEAR(buf.values[r], v1, 1e-12);
  }
}

TEST(ComputeGae, HandRecursion) {
  RolloutBuffer buf;
  buf.n_envs = 1;
  buf.n_steps = 3;
  buf.actions = {0, 0, 0};
  buf.rewards = {0.0, 0.0, 1.0};
  buf.values = {0.0, 0.0, 0.0};
  buf.dones = {0, 0, 1};
  buf.bootstrap_values = {5.0};
  ComputeGae(buf, 0.99, 0.95);
  EXPECT_NEAR(buf.advantages[0], 0.88454, 1e-5);
  EXPECT_NEAR(buf.advantages[1], 0.9405, 1e-12);
  EXPECT_NEAR(buf.advantages[2], 1.0, 1e-12);
  EXPECT_EQ(buf.returns, buf.advantages);
}

TEST(ComputeGae, LambdaOneTelescopes) {
  Rng rng(9);
  RolloutBuffer buf;
  buf.n_envs = 2;
  buf.n_steps = 40;
  const int n = 80;
  buf.actions.assign(n, 0);
  buf.dones.assign(n, 0);
  for (int i = 0; i < n; ++i) {
    buf.rewards.push_back(rng.Normal());
    buf.values.push_back(rng.Normal());
  }
  buf.bootstrap_values = {rng.Normal(), rng.Normal()};
  const double gamma = 0.97;
  ComputeGae(buf, gamma, 1.0);
  for (int e = 0; e < 2; ++e) {
    for (int t = 0; t < 40; ++t) {
      double ret = std::pow(gamma, 40 - t) * buf.bootstrap_values[e];
      for (int k = t; k < 40; ++k) {
        ret += std::pow(gamma, k - t) * buf.rewards[k * 2 + e];
      }
      EXPECT_NEAR(buf.advantages[t * 2 + e], ret - buf.values[t * 2 + e], 1e-10);
    }
  }
}

TEST(ComputeGae, ZeroRewardsAndValues) {
  RolloutBuffer buf;
  buf.n_envs = 2;
  buf.n_steps = 5;
  buf.actions.assign(10, 0);
  buf.rewards.assign(10, 0.0);
  buf.values.assign(10, 0.0);
  buf.dones.assign(10, 0);
  buf.dones[4] = 1;
  buf.bootstrap_values = {0.0, 0.0};
  ComputeGae(buf, 0.99, 0.95);
  for (double a : buf.advantages) EXPECT_EQ(a, 0.0);
  buf.bootstrap_values = {0.0};
  EXPECT_THROW(ComputeGae(buf, 0.99, 0.95), std::invalid_argument);
}

TEST(PpoLoss, FirstMinibatchIsOnPolicy) {
  nn::ActorCriticNet net = nn::ActorCriticNet::Initialize(10);
  const TrainedPolicy policy{{net}};
  VecEnv envs(Pool(grid::Color::kRed, 8, 4), 8, 11);
  Rng rng(12);
  RolloutBuffer buf = CollectRollout(envs, policy, 0, 32, rng);
  ComputeGae(buf, 0.99, 0.95);
  const Minibatch mb = FirstRows(buf, 256);
  const PpoConfig config;
  const LossParts parts = PpoLoss(net, mb, config, false);
  EXPECT_LT(parts.max_ratio_deviation, 1e-6);
  EXPECT_NEAR(parts.policy, -mb.advantages.mean(), 1e-9);
  EXPECT_EQ(parts.clip_fraction, 0.0);

  // The update's first minibatch sees the same on-policy ratios.
  nn::AdamState adam(net.params());
  Rng shuffle(13);
  const UpdateStats stats =
      PpoUpdate(net, adam, buf, MatrixXd(), 1, config, shuffle);
  EXPECT_LT(stats.first_minibatch.max_ratio_deviation, 1e-6);
  EXPECT_EQ(stats.minibatches, config.epochs * 1);
}

TEST(PpoLoss, ZeroAdvantagesLeaveOnlyValueAndEntropy) {
  nn::ActorCriticNet net = nn::ActorCriticNet::Initialize(14);
  net.ZeroHeads();
  const TrainedPolicy policy{{net}};
  VecEnv envs(Pool(grid::Color::kRed, 4, 5), 4, 15);
  Rng rng(16);
  RolloutBuffer buf = CollectRollout(envs, policy, 0, 8, rng);
  ComputeGae(buf, 0.99, 0.95);
  Minibatch mb = FirstRows(buf, 32);
  mb.advantages.setZero();
  PpoConfig config;
  const LossParts parts = PpoLoss(net, mb, config, false);
  EXPECT_EQ(parts.policy, 0.0);
  // Zero heads: uniform policy with entropy ln 7 and zero values.
  EXPECT_NEAR(parts.entropy, std::log(7.0), 1e-12);
  EXPECT_NEAR(parts.value, mb.returns.squaredNorm() / 32, 1e-12);
  EXPECT_NEAR(parts.total,
              config.value_coef * parts.value - config.entropy_coef * parts.entropy,
              1e-12);
}

TEST(PpoLoss, NonFiniteLossThrows) {
  nn::ActorCriticNet net = nn::ActorCriticNet::Initialize(17);
  net.params()[nn::ActorCriticNet::kCriticB].values(0) =
      std::numeric_limits<double>::quiet_NaN();
  Minibatch mb;
  mb.size = 1;
  grid::Observation obs =
      grid::EncodeObservation(grid::GenerateEnv(grid::Color::kRed, 0));
  mb.embedded = nn::EmbedObservations(std::span<const grid::Observation>(&obs, 1));
  mb.actions = {0};
  mb.old_log_probs = VectorXd::Constant(1, -std::log(7.0));
  mb.advantages = VectorXd::Ones(1);
  mb.returns = VectorXd::Ones(1);
  EXPECT_THROW(PpoLoss(net, mb, PpoConfig{}, true), NumericalError);
}

TEST(TrainIpo, FrozenNetsUntouched) {
  PpoConfig c = TinyConfig();
  c.total_steps = c.n_steps * c.envs_per_rollout;  // one turn: domain 0 only
  const std::vector<DomainPool> pools = {
      {"red", Pool(grid::Color::kRed, 4, 6)},
      {"green", Pool(grid::Color::kGreen, 4, 7)}};
  const TrainOutput out = TrainIpo(pools, c, 1, 99);
  ASSERT_EQ(out.policy.nets.size(), 2u);
  EXPECT_FALSE(out.policy.nets[0] ==
               nn::ActorCriticNet::Initialize(SplitSeed(99, "net", 0)));
  EXPECT_TRUE(out.policy.nets[1] ==
              nn::ActorCriticNet::Initialize(SplitSeed(99, "net", 1)));
  ASSERT_EQ(out.progress.size(), 1u);
  EXPECT_EQ(out.progress[0].domain, "red");
}

TEST(TrainIpo, AlternatesDomainsWithEqualBudget) {
  const PpoConfig c = TinyConfig();
  const std::vector<DomainPool> pools = {
      {"red", Pool(grid::Color::kRed, 4, 6)},
      {"green", Pool(grid::Color::kGreen, 4, 7)}};
  const TrainOutput out = TrainIpo(pools, c, 1, 5);
  EXPECT_EQ(out.steps, 256);
  ASSERT_EQ(out.progress.size(), 4u);
  EXPECT_EQ(out.progress[0].domain, "red");
  EXPECT_EQ(out.progress[1].domain, "green");
  EXPECT_EQ(out.progress[2].domain, "red");
  EXPECT_EQ(out.progress[3].step, 256);
}

TEST(TrainIpo, SingleDomainReducesToPpo) {
  PpoConfig c = TinyConfig();
  c.learning_rate = 0.0005;
  const std::vector<EnvSpec> pool = Pool(grid::Color::kRed, 6, 8);
  const std::vector<DomainPool> pools = {{"pooled", pool}};
  const TrainOutput ppo = TrainPpo(pool, c, 21);
  const TrainOutput ipo = TrainIpo(pools, c, 1, 21);
  ASSERT_EQ(ipo.policy.nets.size(), 1u);
  EXPECT_TRUE(ppo.policy.nets[0] == ipo.policy.nets[0]);
}

TEST(TrainPpo, BitDeterministic) {
  const PpoConfig c = TinyConfig();
  const std::vector<EnvSpec> pool = Pool(grid::Color::kRed, 6, 9);
  const TrainOutput a = TrainPpo(pool, c, 3);
  const TrainOutput b = TrainPpo(pool, c, 3);
  EXPECT_TRUE(a.policy.nets[0] == b.policy.nets[0]);
  ASSERT_EQ(a.progress.size(), b.progress.size());
  for (size_t i = 0; i < a.progress.size(); ++i) {
    EXPECT_EQ(ToJson(a.progress[i]).dump(), ToJson(b.progress[i]).dump());
  }
  const TrainOutput other = TrainPpo(pool, c, 4);
  EXPECT_FALSE(a.policy.nets[0] == other.policy.nets[0]);
}

TEST(TrainPpo, BeatsRandomPolicyBySixtyThousandSteps) {
  std::vector<EnvSpec> pool = Pool(grid::Color::kRed, 24, 10);
  const std::vector<EnvSpec> green = Pool(grid::Color::kGreen, 24, 11);
  pool.insert(pool.end(), green.begin(), green.end());
  PpoConfig c;
  c.total_steps = 60000;
  const TrainOutput out = TrainPpo(pool, c, 7);
  const double random = Evaluate(oracle::RandomPolicy(), pool, 200, 1);
  const double trained = Evaluate(out.policy, pool, 50, 2);
  EXPECT_GT(trained, random + 0.3) << "random " << random;
}

TEST(Evaluate, ScriptedOptimalAndDeterminism) {
  const std::vector<EnvSpec> envs = Pool(grid::Color::kGrey, 5, 12);
  for (const EnvSpec& s : envs) {
    const auto plan = oracle::ShortestPlan(grid::GenerateEnv(s.color, s.layout_seed));
    ASSERT_TRUE(plan.has_value());
    const double r = Evaluate(oracle::ScriptedOptimalPolicy(),
                              std::span<const EnvSpec>(&s, 1), 1, 0);
    EXPECT_DOUBLE_EQ(r, 1.0 - 0.9 * plan->size() / 250.0);
  }
  const TrainedPolicy policy{{nn::ActorCriticNet::Initialize(5)}};
  EXPECT_EQ(Evaluate(policy, envs, 10, 3), Evaluate(policy, envs, 10, 3));
  const ActionFn idle = [](const grid::GridEnv&, const grid::Observation&,
                           Rng&) { return static_cast<int>(grid::Action::kDone); };
  EXPECT_EQ(Evaluate(idle, envs, 5, 0), 0.0);
}

TEST(ProgressRecord, JsonSchema) {
  ProgressRecord r;
  r.step = 10;
  r.domain = "red";
  r.mean_episode_reward = std::numeric_limits<double>::quiet_NaN();
  const nlohmann::json j = ToJson(r);
  EXPECT_TRUE(j["mean_episode_reward"].is_null());
  for (const char* key : {"step", "domain", "policy_loss", "value_loss", "entropy"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
}

}  // namespace
}  // namespace ipo::rl
