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

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "ipo/errors.h"

namespace ipo::rl {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

void PpoConfig::Validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("PpoConfig: ") + what);
  };
  require(n_steps > 0, "n_steps must be positive");
  require(epochs > 0, "epochs must be positive");
  require(gamma > 0.0 && gamma <= 1.0, "gamma must be in (0, 1]");
  require(gae_lambda >= 0.0 && gae_lambda <= 1.0, "gae_lambda must be in [0, 1]");
  require(batch_size > 0, "batch_size must be positive");
  require(entropy_coef >= 0.0, "entropy_coef must be non-negative");
  require(clip > 0.0, "clip must be positive");
  require(value_coef >= 0.0, "value_coef must be non-negative");
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(total_steps > 0, "total_steps must be positive");
  require(max_grad_norm > 0.0, "max_grad_norm must be positive");
  require(envs_per_rollout > 0, "envs_per_rollout must be positive");
}

VecEnv::VecEnv(std::vector<EnvSpec> pool, int n_envs, uint64_t seed)
    : pool_(std::move(pool)), rng_(seed) {
  if (pool_.empty()) throw std::invalid_argument("VecEnv: empty pool");
  if (n_envs <= 0) throw std::invalid_argument("VecEnv: n_envs must be positive");
  envs_.resize(n_envs);
  obs_.resize(n_envs);
  running_return_.assign(n_envs, 0.0);
  for (int i = 0; i < n_envs; ++i) Reset(i);
}

void VecEnv::Reset(int index) {
  const EnvSpec& spec = pool_[rng_.UniformInt(pool_.size())];
  envs_[index] = grid::GenerateEnv(spec.color, spec.layout_seed);
  obs_[index] = grid::EncodeObservation(envs_[index]);
  running_return_[index] = 0.0;
}

VecEnv::Transition VecEnv::Step(int index, grid::Action action) {
  grid::StepResult r = grid::Step(envs_[index], action);
  running_return_[index] += r.reward;
  Transition tr{r.reward, r.done, 0.0};
  if (r.done) {
    tr.episode_return = running_return_[index];
    Reset(index);
  } else {
    obs_[index] = r.obs;
  }
  return tr;
}


namespace {

// Mean of the members' scores, summed in member order.
MatrixXd MeanScores(const TrainedPolicy& policy, const MatrixXd& embedded,
                    int batch, int value_net, VectorXd* values) {
  MatrixXd sum;
  for (size_t i = 0; i < policy.nets.size(); ++i) {
    nn::ForwardOutput out = policy.nets[i].Forward(embedded, batch);
    if (i == 0) {
      sum = std::move(out.scores);
    } else {
      sum += out.scores;
    }
    if (values != nullptr && static_cast<int>(i) == value_net) {
      *values = std::move(out.values);
    }
  }
  return sum / static_cast<double>(policy.nets.size());
}

void CheckPolicy(const TrainedPolicy& policy, int value_net) {
  if (policy.nets.empty()) throw std::invalid_argument("policy has no nets");
  if (value_net < 0 || value_net >= static_cast<int>(policy.nets.size())) {
    throw std::invalid_argument("value_net out of range");
  }
}

void Shuffle(std::vector<int>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    const size_t j = rng.UniformInt(i);
    std::swap(v[i - 1], v[j]);
  }
}

void AddScaled(LossParts& acc, const LossParts& x, double w) {
  acc.total += w * x.total;
  acc.policy += w * x.policy;
  acc.value += w * x.value;
  acc.entropy += w * x.entropy;
  acc.approx_kl += w * x.approx_kl;
  acc.clip_fraction += w * x.clip_fraction;
  acc.max_ratio_deviation =
      std::max(acc.max_ratio_deviation, x.max_ratio_deviation);
}

}  // namespace

RolloutBuffer CollectRollout(VecEnv& envs, const TrainedPolicy& policy,
                             int value_net, int n_steps, Rng& rng) {
  CheckPolicy(policy, value_net);
  if (n_steps <= 0) throw std::invalid_argument("CollectRollout: n_steps");
  const int n_envs = envs.size();
  const size_t rows = static_cast<size_t>(n_envs) * n_steps;

  RolloutBuffer buf;
  buf.n_envs = n_envs;
  buf.n_steps = n_steps;
  buf.obs.reserve(rows);
  buf.actions.reserve(rows);
  buf.log_probs.reserve(rows);
  buf.rewards.reserve(rows);
  buf.values.reserve(rows);
  buf.dones.reserve(rows);

  for (int t = 0; t < n_steps; ++t) {
    const std::vector<grid::Observation> obs = envs.observations();
    VectorXd values;
    const MatrixXd log_probs = nn::LogSoftmax(MeanScores(
        policy, nn::EmbedObservations(obs), n_envs, value_net, &values));
    for (int e = 0; e < n_envs; ++e) {
      const nn::CategoricalDist dist{log_probs.col(e).array().exp().matrix()};
      const int action = dist.Sample(rng.Uniform());
      buf.obs.push_back(obs[e]);
      buf.actions.push_back(action);
      buf.log_probs.push_back(log_probs(action, e));
      buf.values.push_back(values(e));
      const VecEnv::Transition tr =
          envs.Step(e, static_cast<grid::Action>(action));
      buf.rewards.push_back(tr.reward);
      buf.dones.push_back(tr.done ? 1 : 0);
      if (tr.done) buf.episode_returns.push_back(tr.episode_return);
    }
  }

  const nn::ForwardOutput last =
      policy.nets[value_net].Forward(envs.observations());
  buf.bootstrap_values.assign(last.values.data(),
                              last.values.data() + last.values.size());
  return buf;
}

void ComputeGae(RolloutBuffer& buf, double gamma, double lambda) {
  const size_t rows = buf.size();
  if (rows != static_cast<size_t>(buf.n_envs) * buf.n_steps ||
      buf.bootstrap_values.size() != static_cast<size_t>(buf.n_envs)) {
    throw std::invalid_argument("ComputeGae: inconsistent buffer");
  }
  buf.advantages.assign(rows, 0.0);
  buf.returns.assign(rows, 0.0);
  for (int e = 0; e < buf.n_envs; ++e) {
    double gae = 0.0;
    for (int t = buf.n_steps - 1; t >= 0; --t) {
      const size_t r = static_cast<size_t>(t) * buf.n_envs + e;
      const double next_value =
          t == buf.n_steps - 1 ? buf.bootstrap_values[e]
                               : buf.values[r + buf.n_envs];
      const double nonterminal = buf.dones[r] ? 0.0 : 1.0;
      const double delta =
          buf.rewards[r] + gamma * next_value * nonterminal - buf.values[r];
      gae = delta + gamma * lambda * nonterminal * gae;
      buf.advantages[r] = gae;
      buf.returns[r] = gae + buf.values[r];
    }
  }
}

LossParts PpoLoss(nn::ActorCriticNet& net, const Minibatch& mb,
                  const PpoConfig& config, bool accumulate) {
  const int b = mb.size;
  if (b <= 0 || static_cast<int>(mb.actions.size()) != b ||
      mb.old_log_probs.size() != b || mb.advantages.size() != b ||
      mb.returns.size() != b || mb.n_members < 1) {
    throw std::invalid_argument("PpoLoss: inconsistent minibatch");
  }
  const bool has_frozen = mb.frozen_score_sum.size() > 0;
  if (has_frozen && (mb.frozen_score_sum.rows() != grid::kNumActions ||
                     mb.frozen_score_sum.cols() != b)) {
    throw std::invalid_argument("PpoLoss: frozen score shape");
  }

  nn::ForwardOutput out = net.Forward(mb.embedded, b);
  MatrixXd scores = out.scores;
  if (has_frozen) scores += mb.frozen_score_sum;
  scores /= static_cast<double>(mb.n_members);
  const MatrixXd log_p = nn::LogSoftmax(scores);
  const MatrixXd p = log_p.array().exp();

  const double inv_b = 1.0 / b;
  MatrixXd d_scores = MatrixXd::Zero(grid::kNumActions, b);
  VectorXd d_values(b);
  LossParts parts;
  int clipped = 0;
  for (int i = 0; i < b; ++i) {
    const int a = mb.actions[i];
    const double lp = log_p(a, i);
    const double ratio = std::exp(lp - mb.old_log_probs(i));
    const double adv = mb.advantages(i);
    const double surr1 = ratio * adv;
    const double surr2 =
        std::clamp(ratio, 1.0 - config.clip, 1.0 + config.clip) * adv;
    parts.policy -= std::min(surr1, surr2) * inv_b;
    parts.approx_kl += (mb.old_log_probs(i) - lp) * inv_b;
    parts.max_ratio_deviation =
        std::max(parts.max_ratio_deviation, std::abs(ratio - 1.0));
    if (std::abs(ratio - 1.0) > config.clip) ++clipped;

    // d(-surr)/d log p(a); zero when the clipped branch is active.
    const double d_lp = surr1 <= surr2 ? -adv * ratio * inv_b : 0.0;
    d_scores.col(i) -= d_lp * p.col(i);
    d_scores(a, i) += d_lp;

    double h = 0.0;
    for (int k = 0; k < grid::kNumActions; ++k) h -= p(k, i) * log_p(k, i);
    parts.entropy += h * inv_b;
    // dH/ds_k = -p_k (log p_k + H).
    const double ent_scale = config.entropy_coef * inv_b;
    for (int k = 0; k < grid::kNumActions; ++k) {
      d_scores(k, i) += ent_scale * p(k, i) * (log_p(k, i) + h);
    }

    const double diff = out.values(i) - mb.returns(i);
    parts.value += diff * diff * inv_b;
    d_values(i) = config.value_coef * 2.0 * diff * inv_b;
  }
  parts.clip_fraction = static_cast<double>(clipped) * inv_b;
  parts.total = parts.policy + config.value_coef * parts.value -
                config.entropy_coef * parts.entropy;
  if (!std::isfinite(parts.total)) {
    std::ostringstream msg;
    msg << "PPO loss is not finite (policy " << parts.policy << ", value "
        << parts.value << ", entropy " << parts.entropy << ")";
    throw NumericalError(msg.str());
  }
  if (accumulate) {
    d_scores /= static_cast<double>(mb.n_members);
    net.Backward(out.cache, d_scores, d_values);
  }
  return parts;
}

UpdateStats PpoUpdate(nn::ActorCriticNet& net, nn::AdamState& adam,
                      const RolloutBuffer& buf, const MatrixXd& frozen,
                      int n_members, const PpoConfig& config, Rng& rng) {
  const int rows = static_cast<int>(buf.size());
  if (rows == 0 || buf.advantages.size() != buf.size() ||
      buf.returns.size() != buf.size()) {
    throw std::invalid_argument("PpoUpdate: buffer without advantages");
  }
  if (frozen.size() > 0 &&
      (frozen.rows() != grid::kNumActions || frozen.cols() != rows)) {
    throw std::invalid_argument("PpoUpdate: frozen score shape");
  }

  // Advantages are normalized once over the whole rollout.
  const Eigen::Map<const VectorXd> raw(buf.advantages.data(), rows);
  const double mean = raw.mean();
  const double std_dev =
      std::sqrt((raw.array() - mean).square().sum() / rows);
  const VectorXd adv = (raw.array() - mean) / (std_dev + config.adv_epsilon);

  std::vector<int> perm(rows);
  std::iota(perm.begin(), perm.end(), 0);
  UpdateStats stats;
  std::vector<grid::Observation> obs;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Shuffle(perm, rng);
    for (int start = 0; start < rows; start += config.batch_size) {
      const int b = std::min(config.batch_size, rows - start);
      Minibatch mb;
      mb.size = b;
      mb.n_members = n_members;
      mb.actions.resize(b);
      mb.old_log_probs.resize(b);
      mb.advantages.resize(b);
      mb.returns.resize(b);
      if (frozen.size() > 0) mb.frozen_score_sum.resize(grid::kNumActions, b);
      obs.clear();
      for (int i = 0; i < b; ++i) {
        const int r = perm[start + i];
        obs.push_back(buf.obs[r]);
        mb.actions[i] = buf.actions[r];
        mb.old_log_probs(i) = buf.log_probs[r];
        mb.advantages(i) = adv(r);
        mb.returns(i) = buf.returns[r];
        if (frozen.size() > 0) mb.frozen_score_sum.col(i) = frozen.col(r);
      }
      mb.embedded = nn::EmbedObservations(obs);

      net.ZeroGrad();
      const LossParts parts = PpoLoss(net, mb, config, true);
      const double norm = net.GradNorm();
      if (norm > config.max_grad_norm) {
        net.ScaleGrad(config.max_grad_norm / (norm + 1e-6));
      }
      nn::AdamStep(net.params(), adam, config.learning_rate);

      if (stats.minibatches == 0) stats.first_minibatch = parts;
      AddScaled(stats.mean, parts, 1.0);
      ++stats.minibatches;
    }
  }
  const double inv = 1.0 / stats.minibatches;
  const double max_dev = stats.mean.max_ratio_deviation;
  LossParts scaled;
  AddScaled(scaled, stats.mean, inv);
  scaled.max_ratio_deviation = max_dev;
  stats.mean = scaled;
  return stats;
}

nlohmann::json ToJson(const ProgressRecord& r) {
  nlohmann::json j;
  j["step"] = r.step;
  j["domain"] = r.domain;
  if (std::isfinite(r.mean_episode_reward)) {
    j["mean_episode_reward"] = r.mean_episode_reward;
  } else {
    j["mean_episode_reward"] = nullptr;
  }
  j["episodes"] = r.episodes;
  j["policy_loss"] = r.policy_loss;
  j["value_loss"] = r.value_loss;
  j["entropy"] = r.entropy;
  j["approx_kl"] = r.approx_kl;
  return j;
}

namespace {

TrainOutput TrainMembers(std::span<const DomainPool> pools,
                         const PpoConfig& config, int inner_rounds,
                         uint64_t seed, const ProgressCallback& on_progress) {
  config.Validate();
  if (inner_rounds < 1) throw std::invalid_argument("inner_rounds must be >= 1");
  if (pools.empty()) throw std::invalid_argument("no domains");
  const int n = static_cast<int>(pools.size());

  TrainOutput result;
  std::vector<nn::AdamState> adam;
  std::vector<VecEnv> envs;
  for (int d = 0; d < n; ++d) {
    if (pools[d].specs.empty()) {
      throw std::invalid_argument("domain " + pools[d].name + " has no layouts");
    }
    result.policy.nets.push_back(
        nn::ActorCriticNet::Initialize(SplitSeed(seed, "net", d)));
    adam.emplace_back(result.policy.nets.back().params());
    envs.emplace_back(pools[d].specs, config.envs_per_rollout,
                      SplitSeed(seed, "envs", d));
  }
  Rng action_rng(SplitSeed(seed, "actions"));
  Rng shuffle_rng(SplitSeed(seed, "minibatches"));

  while (result.steps < config.total_steps) {
    for (int round = 0; round < inner_rounds; ++round) {
      for (int d = 0; d < n && result.steps < config.total_steps; ++d) {
        RolloutBuffer buf = CollectRollout(envs[d], result.policy, d,
                                           config.n_steps, action_rng);
        result.steps += static_cast<int64_t>(buf.size());
        ComputeGae(buf, config.gamma, config.gae_lambda);

        MatrixXd frozen;
        if (n > 1) {
          const MatrixXd embedded = nn::EmbedObservations(buf.obs);
          const int rows = static_cast<int>(buf.size());
          frozen = MatrixXd::Zero(grid::kNumActions, rows);
          for (int i = 0; i < n; ++i) {
            if (i != d) frozen += result.policy.nets[i].Forward(embedded, rows).scores;
          }
        }
        const UpdateStats stats = PpoUpdate(result.policy.nets[d], adam[d], buf,
                                            frozen, n, config, shuffle_rng);

        ProgressRecord rec;
        rec.step = result.steps;
        rec.domain = pools[d].name;
        rec.episodes = static_cast<int>(buf.episode_returns.size());
        rec.mean_episode_reward =
            buf.episode_returns.empty()
                ? std::numeric_limits<double>::quiet_NaN()
                : std::accumulate(buf.episode_returns.begin(),
                                  buf.episode_returns.end(), 0.0) /
                      rec.episodes;
        rec.policy_loss = stats.mean.policy;
        rec.value_loss = stats.mean.value;
        rec.entropy = stats.mean.entropy;
        rec.approx_kl = stats.mean.approx_kl;
        result.progress.push_back(rec);
        if (on_progress) on_progress(rec);
      }
      if (result.steps >= config.total_steps) break;
    }
  }
  return result;
}

}  // namespace

TrainOutput TrainPpo(std::span<const EnvSpec> pool, const PpoConfig& config,
                     uint64_t seed, const ProgressCallback& on_progress) {
  const DomainPool pooled{"pooled", {pool.begin(), pool.end()}};
  return TrainMembers(std::span<const DomainPool>(&pooled, 1), config, 1, seed,
                      on_progress);
}

TrainOutput TrainIpo(std::span<const DomainPool> pools,
                     const PpoConfig& config, int inner_rounds, uint64_t seed,
                     const ProgressCallback& on_progress) {
  return TrainMembers(pools, config, inner_rounds, seed, on_progress);
}

double Evaluate(const ActionFn& act, std::span<const EnvSpec> envs,
                int n_episodes, uint64_t eval_seed) {
  if (envs.empty() || n_episodes <= 0) {
    throw std::invalid_argument("Evaluate: no episodes");
  }
  Rng rng(eval_seed);
  double total = 0.0;
  for (int i = 0; i < n_episodes; ++i) {
    const EnvSpec& spec = envs[i % envs.size()];
    grid::GridEnv env = grid::GenerateEnv(spec.color, spec.layout_seed);
    grid::Observation obs = grid::EncodeObservation(env);
    double ret = 0.0;
    while (!env.done) {
      const int a = act(env, obs, rng);
      const grid::StepResult r = grid::Step(env, static_cast<grid::Action>(a));
      ret += r.reward;
      obs = r.obs;
    }
    total += ret;
  }
  return total / n_episodes;
}

double Evaluate(const TrainedPolicy& policy, std::span<const EnvSpec> envs,
                int n_episodes, uint64_t eval_seed) {
  CheckPolicy(policy, 0);
  const ActionFn act = [&policy](const grid::GridEnv&,
                                 const grid::Observation& obs, Rng& rng) {
    const MatrixXd embedded =
        nn::EmbedObservations(std::span<const grid::Observation>(&obs, 1));
    const MatrixXd scores = MeanScores(policy, embedded, 1, -1, nullptr);
    return nn::CategoricalDist::FromScores(scores.col(0)).Sample(rng.Uniform());
  };
  return Evaluate(act, envs, n_episodes, eval_seed);
}

}  // namespace ipo::rl
