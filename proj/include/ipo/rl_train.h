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

#ifndef IPO_RL_TRAIN_H_
#define IPO_RL_TRAIN_H_

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ipo/gridworld.h"
#include "ipo/policy_nn.h"
#include "ipo/rng.h"

namespace ipo::rl {

struct PpoConfig {
  int n_steps = 128;
  int epochs = 4;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  int batch_size = 256;
  double entropy_coef = 0.01;
  double clip = 0.2;
  double value_coef = 0.5;
  double learning_rate = 0.001;
  int64_t total_steps = 120000;
  double max_grad_norm = 0.5;
  // Parallel environments per rollout (per domain for best-response
  // training).
  int envs_per_rollout = 16;
  double adv_epsilon = 1e-8;

  // Throws std::invalid_argument on out-of-range values.
  void Validate() const;
};

// A layout to (re)start episodes from.
struct EnvSpec {
  grid::Color color = grid::Color::kRed;
  uint64_t layout_seed = 0;
};

// Fixed number of environments stepped in lockstep. A finished episode is
// replaced by a fresh one whose layout is drawn uniformly from the pool.
class VecEnv {
 public:
  VecEnv(std::vector<EnvSpec> pool, int n_envs, uint64_t seed);

  int size() const { return static_cast<int>(envs_.size()); }
  const std::vector<grid::Observation>& observations() const { return obs_; }
  const std::vector<grid::GridEnv>& envs() const { return envs_; }

  struct Transition {
    double reward = 0.0;
    bool done = false;
    // Return of the episode that just ended, when done.
    double episode_return = 0.0;
  };

  Transition Step(int index, grid::Action action);

 private:
  void Reset(int index);

  std::vector<EnvSpec> pool_;
  Rng rng_;
  std::vector<grid::GridEnv> envs_;
  std::vector<grid::Observation> obs_;
  std::vector<double> running_return_;
};

// Acting policy: softmax of the mean score vector over `nets` (a single net
// for the pooled baseline).
struct TrainedPolicy {
  std::vector<nn::ActorCriticNet> nets;

  bool IsEnsemble() const { return nets.size() > 1; }
};

// Row r = t * n_envs + e.
struct RolloutBuffer {
  int n_envs = 0;
  int n_steps = 0;
  std::vector<grid::Observation> obs;
  std::vector<int> actions;
  std::vector<double> log_probs;
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<uint8_t> dones;
  std::vector<double> bootstrap_values;  // per env, after the last step
  std::vector<double> episode_returns;   // episodes finished in this rollout

  // Filled by ComputeGae.
  std::vector<double> advantages;
  std::vector<double> returns;

  size_t size() const { return actions.size(); }
};

// Samples actions from `policy`, recording the acting policy's log-probs and
// the value estimates of nets[value_net].
RolloutBuffer CollectRollout(VecEnv& envs, const TrainedPolicy& policy,
                             int value_net, int n_steps, Rng& rng);

// delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t,
// A_t = delta_t + gamma lambda (1 - done_t) A_{t+1},  returns = A + V.
// Advantages are left unnormalized.
void ComputeGae(RolloutBuffer& buffer, double gamma, double lambda);

struct Minibatch {
  Eigen::MatrixXd embedded;         // EmbedObservations of the rows
  int size = 0;
  std::vector<int> actions;
  Eigen::VectorXd old_log_probs;
  Eigen::VectorXd advantages;       // already normalized
  Eigen::VectorXd returns;
  // Sum of the frozen members' scores (kNumActions x size); empty when the
  // trained net acts alone.
  Eigen::MatrixXd frozen_score_sum;
  int n_members = 1;
};

struct LossParts {
  double total = 0.0;
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double max_ratio_deviation = 0.0;  // max |ratio - 1|
};

// Clipped-surrogate loss
//   -mean(min(rho A, clip(rho, 1 - eps, 1 + eps) A))
//   + value_coef mean((V - R)^2) - entropy_coef mean(H)
// of the acting policy softmax((scores + frozen_score_sum) / n_members).
// Accumulates the gradient into net's ParamTensor::grad when `accumulate`.
LossParts PpoLoss(nn::ActorCriticNet& net, const Minibatch& mb,
                  const PpoConfig& config, bool accumulate);

// Epochs x shuffled minibatches of Adam steps on `net` with global-norm
// gradient clipping. `frozen_score_sum` (kNumActions x buffer rows, or empty)
// holds the other members' scores, which stay fixed during the update.
struct UpdateStats {
  LossParts mean;
  LossParts first_minibatch;
  int minibatches = 0;
};

UpdateStats PpoUpdate(nn::ActorCriticNet& net, nn::AdamState& adam,
                      const RolloutBuffer& buffer,
                      const Eigen::MatrixXd& frozen_score_sum, int n_members,
                      const PpoConfig& config, Rng& rng);

struct ProgressRecord {
  int64_t step = 0;
  std::string domain;
  // NaN when no episode finished during the rollout.
  double mean_episode_reward = 0.0;
  int episodes = 0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
};

nlohmann::json ToJson(const ProgressRecord& r);

struct DomainPool {
  std::string name;
  std::vector<EnvSpec> specs;
};

struct TrainOutput {
  TrainedPolicy policy;
  std::vector<ProgressRecord> progress;
  int64_t steps = 0;
};

using ProgressCallback = std::function<void(const ProgressRecord&)>;

// Pooled baseline: one net trained with PPO on all environments.
TrainOutput TrainPpo(std::span<const EnvSpec> pool, const PpoConfig& config,
                     uint64_t seed, const ProgressCallback& on_progress = {});

// Best-response training with one net per domain and identity
// representation. Each turn collects a rollout on domain d with the averaged
// policy, then updates net d only. inner_rounds sweeps over the domains
// happen per outer iteration; the loop ends once total_steps env steps were
// consumed.
TrainOutput TrainIpo(std::span<const DomainPool> pools,
                     const PpoConfig& config, int inner_rounds, uint64_t seed,
                     const ProgressCallback& on_progress = {});

using ActionFn =
    std::function<int(const grid::GridEnv&, const grid::Observation&, Rng&)>;

// Mean episode reward over n_episodes episodes, episode i on
// envs[i % envs.size()].
double Evaluate(const ActionFn& act, std::span<const EnvSpec> envs,
                int n_episodes, uint64_t eval_seed);

// Actions sampled from the acting policy.
double Evaluate(const TrainedPolicy& policy, std::span<const EnvSpec> envs,
                int n_episodes, uint64_t eval_seed);

}  // namespace ipo::rl

#endif  // IPO_RL_TRAIN_H_
