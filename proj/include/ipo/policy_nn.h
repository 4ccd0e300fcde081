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

#ifndef IPO_POLICY_NN_H_
#define IPO_POLICY_NN_H_

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ipo/adam.h"
#include "ipo/gridworld.h"

namespace ipo::nn {

struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  Eigen::VectorXd values;
  Eigen::VectorXd grad;

  // Column-major view of a rank-2 tensor.
  Eigen::Map<Eigen::MatrixXd> AsMatrix() {
    return {values.data(), shape.at(0), shape.at(1)};
  }
  Eigen::Map<const Eigen::MatrixXd> AsMatrix() const {
    return {values.data(), shape.at(0), shape.at(1)};
  }
  Eigen::Map<Eigen::MatrixXd> GradMatrix() {
    return {grad.data(), shape.at(0), shape.at(1)};
  }
};

// One-hot planes per observation channel: 6 type codes, 6 colors, 3 states.
inline constexpr int kTypePlanes = 6;
inline constexpr int kInputPlanes = kTypePlanes + grid::kNumColors + 3;
inline constexpr int kCells = grid::kViewSize * grid::kViewSize;

// (kInputPlanes, N * kCells); column n * kCells + y * kViewSize + x.
Eigen::MatrixXd EmbedObservations(std::span<const grid::Observation> obs);

// Activations kept by Forward for Backward.
struct ForwardCache {
  int batch = 0;
  Eigen::MatrixXd cols1;   // im2col of the input
  Eigen::MatrixXd act1;    // relu(conv1), 16 x N*16
  std::vector<Eigen::Index> pool_argmax;
  Eigen::MatrixXd cols2;   // im2col of pooled, 64 x N*4
  Eigen::MatrixXd act2;    // relu(conv2), 32 x N*4
  Eigen::MatrixXd cols3;   // im2col of act2, 128 x N
  Eigen::MatrixXd features;  // relu(conv3), 64 x N
};

struct ForwardOutput {
  Eigen::MatrixXd scores;  // kNumActions x N
  Eigen::VectorXd values;  // N
  ForwardCache cache;
};

// Actor-critic network on 5x5 egocentric observations:
//   conv 2x2 (15 -> 16), ReLU, max-pool 2x2 (stride 1),
//   conv 2x2 (16 -> 32), ReLU, conv 2x2 (32 -> 64), ReLU  -> 64 features,
//   actor: affine 64 -> 7 scores, critic: affine 64 -> 1 value.
// All convolutions are unpadded with stride 1.
class ActorCriticNet {
 public:
  enum ParamId : int {
    kConv1W, kConv1B, kConv2W, kConv2B, kConv3W, kConv3B,
    kActorW, kActorB, kCriticW, kCriticB, kNumParams
  };

  // All parameters zero.
  ActorCriticNet();

  // Orthogonal weights (gain sqrt(2) for the encoder, 0.01 for the actor,
  // 1 for the critic) and zero biases.
  static ActorCriticNet Initialize(uint64_t seed);

  ForwardOutput Forward(const Eigen::MatrixXd& embedded, int batch) const;
  ForwardOutput Forward(std::span<const grid::Observation> obs) const;
  std::pair<Eigen::VectorXd, double> Forward(const grid::Observation& obs) const;

  // Accumulates d loss / d params into each ParamTensor::grad, given the
  // loss gradient with respect to the scores and values of a forward pass.
  void Backward(const ForwardCache& cache, const Eigen::MatrixXd& d_scores,
                const Eigen::VectorXd& d_values);

  void ZeroGrad();
  void ZeroHeads();
  double GradNorm() const;
  void ScaleGrad(double factor);
  size_t NumValues() const;

  std::vector<ParamTensor>& params() { return params_; }
  const std::vector<ParamTensor>& params() const { return params_; }

  bool operator==(const ActorCriticNet& other) const;

 private:
  std::vector<ParamTensor> params_;
};

struct CategoricalDist {
  Eigen::VectorXd probs;

  static CategoricalDist FromScores(const Eigen::VectorXd& scores);
  double LogProb(int action) const;
  double Entropy() const;
  int Sample(double uniform) const;
};

struct GaussianDist {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
};

struct PolicyEnsemble {
  std::vector<ActorCriticNet> nets;
};

// Row-wise numerically stable log-softmax of a (classes x N) score matrix.
Eigen::MatrixXd LogSoftmax(const Eigen::MatrixXd& scores);

// Mean of per-net score matrices (kNumActions x N).
Eigen::MatrixXd AverageScores(std::span<const Eigen::MatrixXd> scores);

// softmax((1/n) sum_d scores_d(obs)).
CategoricalDist AverageScores(const PolicyEnsemble& ensemble,
                              const grid::Observation& obs);

// Elementwise mean of means and of standard deviations (not variances).
GaussianDist AverageGaussian(std::span<const GaussianDist> dists);

// Per-tensor Adam state for a parameter list.
class AdamState {
 public:
  AdamState() = default;
  AdamState(const std::vector<ParamTensor>& params, AdamConfig config = {});

  std::vector<Adam>& slots() { return slots_; }

 private:
  std::vector<Adam> slots_;
};

void AdamStep(std::vector<ParamTensor>& params, AdamState& state, double lr);

// Versioned JSON checkpoint: a shape manifest and value arrays per net.
inline constexpr int kCheckpointSchemaVersion = 1;

nlohmann::json ToJson(const ActorCriticNet& net);
ActorCriticNet NetFromJson(const nlohmann::json& j);

void SaveCheckpoint(const std::filesystem::path& path,
                    std::span<const ActorCriticNet> nets,
                    const nlohmann::json& meta = nlohmann::json::object());

struct Checkpoint {
  std::vector<ActorCriticNet> nets;
  nlohmann::json meta;
};

Checkpoint LoadCheckpoint(const std::filesystem::path& path);

}  // namespace ipo::nn

#endif  // IPO_POLICY_NN_H_
