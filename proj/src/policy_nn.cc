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

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "ipo/numlin.h"
#include "ipo/rng.h"

namespace ipo::nn {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr int kC1 = 16;
constexpr int kC2 = 32;
constexpr int kC3 = 64;
constexpr int kFeatures = kC3;

int TypePlane(uint8_t code) {
  switch (code) {
    case 0: return 0;
    case 1: return 1;
    case 2: return 2;
    case 4: return 3;
    case 5: return 4;
    case 8: return 5;
    default: throw std::invalid_argument("observation: invalid type code");
  }
}

// 2x2 valid-convolution patches. Row c * 4 + ky * 2 + kx; column
// n * oh * ow + oy * ow + ox.
MatrixXd Im2Col(const MatrixXd& x, int channels, int batch, int h, int w) {
  const int oh = h - 1;
  const int ow = w - 1;
  MatrixXd cols(channels * 4, static_cast<Index>(batch) * oh * ow);
  for (int n = 0; n < batch; ++n) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const Index col = (static_cast<Index>(n) * oh + oy) * ow + ox;
        for (int c = 0; c < channels; ++c) {
          for (int ky = 0; ky < 2; ++ky) {
            for (int kx = 0; kx < 2; ++kx) {
              cols(c * 4 + ky * 2 + kx, col) =
                  x(c, (static_cast<Index>(n) * h + oy + ky) * w + ox + kx);
            }
          }
        }
      }
    }
  }
  return cols;
}

MatrixXd Col2Im(const MatrixXd& cols, int channels, int batch, int h, int w) {
  const int oh = h - 1;
  const int ow = w - 1;
  MatrixXd x = MatrixXd::Zero(channels, static_cast<Index>(batch) * h * w);
  for (int n = 0; n < batch; ++n) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const Index col = (static_cast<Index>(n) * oh + oy) * ow + ox;
        for (int c = 0; c < channels; ++c) {
          for (int ky = 0; ky < 2; ++ky) {
            for (int kx = 0; kx < 2; ++kx) {
              x(c, (static_cast<Index>(n) * h + oy + ky) * w + ox + kx) +=
                  cols(c * 4 + ky * 2 + kx, col);
            }
          }
        }
      }
    }
  }
  return x;
}

// 2x2 max-pool with stride 1; records the winning input column per output
// element (first maximum on ties).
MatrixXd MaxPool(const MatrixXd& x, int batch, int h, int w,
                 std::vector<Index>& argmax) {
  const int oh = h - 1;
  const int ow = w - 1;
  const Index channels = x.rows();
  MatrixXd out(channels, static_cast<Index>(batch) * oh * ow);
  argmax.resize(static_cast<size_t>(out.size()));
  for (int n = 0; n < batch; ++n) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const Index col = (static_cast<Index>(n) * oh + oy) * ow + ox;
        for (Index c = 0; c < channels; ++c) {
          Index best = (static_cast<Index>(n) * h + oy) * w + ox;
          for (int ky = 0; ky < 2; ++ky) {
            for (int kx = 0; kx < 2; ++kx) {
              const Index in = (static_cast<Index>(n) * h + oy + ky) * w + ox + kx;
              if (x(c, in) > x(c, best)) best = in;
            }
          }
          out(c, col) = x(c, best);
          argmax[static_cast<size_t>(col * channels + c)] = best;
        }
      }
    }
  }
  return out;
}

ParamTensor MakeParam(std::string name, std::vector<int> shape) {
  ParamTensor p;
  p.name = std::move(name);
  Index size = 1;
  for (const int d : shape) size *= d;
  p.shape = std::move(shape);
  p.values = VectorXd::Zero(size);
  p.grad = VectorXd::Zero(size);
  return p;
}

MatrixXd OrthogonalInit(int rows, int cols, double gain, uint64_t seed) {
  if (rows >= cols) return gain * SampleSemiOrthogonal(rows, cols, seed);
  return gain * SampleSemiOrthogonal(cols, rows, seed).transpose();
}

}  // namespace

MatrixXd EmbedObservations(std::span<const grid::Observation> obs) {
  MatrixXd x = MatrixXd::Zero(kInputPlanes,
                              static_cast<Index>(obs.size()) * kCells);
  for (size_t n = 0; n < obs.size(); ++n) {
    for (int y = 0; y < grid::kViewSize; ++y) {
      for (int xx = 0; xx < grid::kViewSize; ++xx) {
        const Index col = static_cast<Index>(n) * kCells + y * grid::kViewSize + xx;
        const int color = obs[n].at(xx, y, 1);
        const int state = obs[n].at(xx, y, 2);
        if (color >= grid::kNumColors || state > 2) {
          throw std::invalid_argument("observation: invalid color/state code");
        }
        x(TypePlane(obs[n].at(xx, y, 0)), col) = 1.0;
        x(kTypePlanes + color, col) = 1.0;
        x(kTypePlanes + grid::kNumColors + state, col) = 1.0;
      }
    }
  }
  return x;
}

ActorCriticNet::ActorCriticNet() {
  params_.reserve(kNumParams);
  params_.push_back(MakeParam("conv1.weight", {kC1, kInputPlanes * 4}));
  params_.push_back(MakeParam("conv1.bias", {kC1, 1}));
  params_.push_back(MakeParam("conv2.weight", {kC2, kC1 * 4}));
  params_.push_back(MakeParam("conv2.bias", {kC2, 1}));
  params_.push_back(MakeParam("conv3.weight", {kC3, kC2 * 4}));
  params_.push_back(MakeParam("conv3.bias", {kC3, 1}));
  params_.push_back(MakeParam("actor.weight", {grid::kNumActions, kFeatures}));
  params_.push_back(MakeParam("actor.bias", {grid::kNumActions, 1}));
  params_.push_back(MakeParam("critic.weight", {1, kFeatures}));
  params_.push_back(MakeParam("critic.bias", {1, 1}));
}

ActorCriticNet ActorCriticNet::Initialize(uint64_t seed) {
  ActorCriticNet net;
  const double hidden_gain = std::sqrt(2.0);
  for (const int idx : {kConv1W, kConv2W, kConv3W, kActorW, kCriticW}) {
    ParamTensor& p = net.params_[idx];
    const double gain = idx == kActorW    ? 0.01
                        : idx == kCriticW ? 1.0
                                          : hidden_gain;
    p.AsMatrix() = OrthogonalInit(p.shape[0], p.shape[1], gain,
                                  SplitSeed(seed, p.name));
  }
  return net;
}

ForwardOutput ActorCriticNet::Forward(const MatrixXd& embedded,
                                      int batch) const {
  if (embedded.rows() != kInputPlanes ||
      embedded.cols() != static_cast<Index>(batch) * kCells) {
    throw std::invalid_argument("ActorCriticNet::Forward: input shape");
  }
  constexpr int v = grid::kViewSize;
  ForwardOutput out;
  ForwardCache& c = out.cache;
  c.batch = batch;

  c.cols1 = Im2Col(embedded, kInputPlanes, batch, v, v);
  c.act1 = (params_[kConv1W].AsMatrix() * c.cols1).colwise() +
           params_[kConv1B].values;
  c.act1 = c.act1.cwiseMax(0.0);
  const MatrixXd pooled = MaxPool(c.act1, batch, v - 1, v - 1, c.pool_argmax);

  c.cols2 = Im2Col(pooled, kC1, batch, v - 2, v - 2);
  c.act2 = (params_[kConv2W].AsMatrix() * c.cols2).colwise() +
           params_[kConv2B].values;
  c.act2 = c.act2.cwiseMax(0.0);

  c.cols3 = Im2Col(c.act2, kC2, batch, v - 3, v - 3);
  c.features = (params_[kConv3W].AsMatrix() * c.cols3).colwise() +
               params_[kConv3B].values;
  c.features = c.features.cwiseMax(0.0);

  out.scores = (params_[kActorW].AsMatrix() * c.features).colwise() +
               params_[kActorB].values;
  out.values = ((params_[kCriticW].AsMatrix() * c.features).array() +
                params_[kCriticB].values(0))
                   .matrix()
                   .transpose();
  return out;
}

ForwardOutput ActorCriticNet::Forward(
    std::span<const grid::Observation> obs) const {
  return Forward(EmbedObservations(obs), static_cast<int>(obs.size()));
}

std::pair<VectorXd, double> ActorCriticNet::Forward(
    const grid::Observation& obs) const {
  ForwardOutput out = Forward(std::span<const grid::Observation>(&obs, 1));
  return {out.scores.col(0), out.values(0)};
}

void ActorCriticNet::Backward(const ForwardCache& c, const MatrixXd& d_scores,
                              const VectorXd& d_values) {
  constexpr int v = grid::kViewSize;
  const int batch = c.batch;
  const MatrixXd d_values_row = d_values.transpose();

  params_[kActorW].GradMatrix().noalias() += d_scores * c.features.transpose();
  params_[kActorB].grad += d_scores.rowwise().sum();
  params_[kCriticW].GradMatrix().noalias() +=
      d_values_row * c.features.transpose();
  params_[kCriticB].grad(0) += d_values.sum();

  MatrixXd d_pre3 = params_[kActorW].AsMatrix().transpose() * d_scores +
                    params_[kCriticW].AsMatrix().transpose() * d_values_row;
  d_pre3 = d_pre3.cwiseProduct((c.features.array() > 0.0).cast<double>().matrix());
  params_[kConv3W].GradMatrix().noalias() += d_pre3 * c.cols3.transpose();
  params_[kConv3B].grad += d_pre3.rowwise().sum();

  MatrixXd d_act2 =
      Col2Im(params_[kConv3W].AsMatrix().transpose() * d_pre3, kC2, batch,
             v - 3, v - 3);
  d_act2 = d_act2.cwiseProduct((c.act2.array() > 0.0).cast<double>().matrix());
  params_[kConv2W].GradMatrix().noalias() += d_act2 * c.cols2.transpose();
  params_[kConv2B].grad += d_act2.rowwise().sum();

  const MatrixXd d_pooled =
      Col2Im(params_[kConv2W].AsMatrix().transpose() * d_act2, kC1, batch,
             v - 2, v - 2);
  MatrixXd d_act1 = MatrixXd::Zero(c.act1.rows(), c.act1.cols());
  for (Index col = 0; col < d_pooled.cols(); ++col) {
    for (Index ch = 0; ch < d_pooled.rows(); ++ch) {
      d_act1(ch, c.pool_argmax[static_cast<size_t>(col * d_pooled.rows() + ch)]) +=
          d_pooled(ch, col);
    }
  }
  d_act1 = d_act1.cwiseProduct((c.act1.array() > 0.0).cast<double>().matrix());
  params_[kConv1W].GradMatrix().noalias() += d_act1 * c.cols1.transpose();
  params_[kConv1B].grad += d_act1.rowwise().sum();
}

void ActorCriticNet::ZeroGrad() {
  for (ParamTensor& p : params_) p.grad.setZero();
}

void ActorCriticNet::ZeroHeads() {
  for (const int idx : {kActorW, kActorB, kCriticW, kCriticB}) {
    params_[idx].values.setZero();
  }
}

double ActorCriticNet::GradNorm() const {
  double sq = 0.0;
  for (const ParamTensor& p : params_) sq += p.grad.squaredNorm();
  return std::sqrt(sq);
}

void ActorCriticNet::ScaleGrad(double factor) {
  for (ParamTensor& p : params_) p.grad *= factor;
}

size_t ActorCriticNet::NumValues() const {
  size_t n = 0;
  for (const ParamTensor& p : params_) n += static_cast<size_t>(p.values.size());
  return n;
}

bool ActorCriticNet::operator==(const ActorCriticNet& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].shape != other.params_[i].shape ||
        params_[i].values != other.params_[i].values) {
      return false;
    }
  }
  return true;
}

MatrixXd LogSoftmax(const MatrixXd& scores) {
  MatrixXd out(scores.rows(), scores.cols());
  for (Index n = 0; n < scores.cols(); ++n) {
    const double m = scores.col(n).maxCoeff();
    const double lse =
        m + std::log((scores.col(n).array() - m).exp().sum());
    out.col(n) = scores.col(n).array() - lse;
  }
  return out;
}

CategoricalDist CategoricalDist::FromScores(const VectorXd& scores) {
  return {LogSoftmax(scores).col(0).array().exp().matrix()};
}

double CategoricalDist::LogProb(int action) const {
  return std::log(probs(action));
}

double CategoricalDist::Entropy() const {
  double h = 0.0;
  for (Index i = 0; i < probs.size(); ++i) {
    if (probs(i) > 0.0) h -= probs(i) * std::log(probs(i));
  }
  return h;
}

int CategoricalDist::Sample(double uniform) const {
  double acc = 0.0;
  for (Index i = 0; i < probs.size(); ++i) {
    acc += probs(i);
    if (uniform < acc) return static_cast<int>(i);
  }
  // Rounding left uniform above the cumulative sum; take the last action
  // with nonzero mass.
  for (Index i = probs.size() - 1; i >= 0; --i) {
    if (probs(i) > 0.0) return static_cast<int>(i);
  }
  return 0;
}

MatrixXd AverageScores(std::span<const MatrixXd> scores) {
  if (scores.empty()) throw std::invalid_argument("AverageScores: empty");
  MatrixXd sum = scores.front();
  for (size_t i = 1; i < scores.size(); ++i) sum += scores[i];
  return sum / static_cast<double>(scores.size());
}

CategoricalDist AverageScores(const PolicyEnsemble& ensemble,
                              const grid::Observation& obs) {
  if (ensemble.nets.empty()) {
    throw std::invalid_argument("AverageScores: empty ensemble");
  }
  std::vector<MatrixXd> scores;
  scores.reserve(ensemble.nets.size());
  for (const ActorCriticNet& net : ensemble.nets) {
    scores.emplace_back(net.Forward(obs).first);
  }
  return CategoricalDist::FromScores(AverageScores(scores).col(0));
}

GaussianDist AverageGaussian(std::span<const GaussianDist> dists) {
  if (dists.empty()) throw std::invalid_argument("AverageGaussian: empty");
  const Index dim = dists.front().mean.size();
  GaussianDist out{VectorXd::Zero(dim), VectorXd::Zero(dim)};
  for (const GaussianDist& d : dists) {
    if (d.mean.size() != dim || d.std.size() != dim) {
      throw std::invalid_argument("AverageGaussian: dimension mismatch");
    }
    if ((d.std.array() <= 0.0).any()) {
      throw std::invalid_argument("AverageGaussian: std must be positive");
    }
    out.mean += d.mean;
    out.std += d.std;
  }
  out.mean /= static_cast<double>(dists.size());
  out.std /= static_cast<double>(dists.size());
  return out;
}

AdamState::AdamState(const std::vector<ParamTensor>& params,
                     AdamConfig config) {
  slots_.reserve(params.size());
  for (const ParamTensor& p : params) slots_.emplace_back(p.values.size(), config);
}

void AdamStep(std::vector<ParamTensor>& params, AdamState& state, double lr) {
  if (state.slots().size() != params.size()) {
    throw std::invalid_argument("AdamStep: state does not match parameters");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    state.slots()[i].Apply(params[i].values, params[i].grad, lr);
  }
}

nlohmann::json ToJson(const ActorCriticNet& net) {
  nlohmann::json params = nlohmann::json::array();
  for (const ParamTensor& p : net.params()) {
    params.push_back({{"name", p.name},
                      {"shape", p.shape},
                      {"values", std::vector<double>(p.values.data(),
                                                     p.values.data() +
                                                         p.values.size())}});
  }
  return {{"params", std::move(params)}};
}

ActorCriticNet NetFromJson(const nlohmann::json& j) {
  ActorCriticNet net;
  const auto& params = j.at("params");
  if (params.size() != net.params().size()) {
    throw std::runtime_error("checkpoint: parameter count mismatch");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    ParamTensor& p = net.params()[i];
    if (params[i].at("name").get<std::string>() != p.name ||
        params[i].at("shape").get<std::vector<int>>() != p.shape) {
      throw std::runtime_error("checkpoint: manifest mismatch at " + p.name);
    }
    const auto values = params[i].at("values").get<std::vector<double>>();
    if (static_cast<Index>(values.size()) != p.values.size()) {
      throw std::runtime_error("checkpoint: value count mismatch at " + p.name);
    }
    p.values = Eigen::Map<const VectorXd>(values.data(), p.values.size());
  }
  return net;
}

void SaveCheckpoint(const std::filesystem::path& path,
                    std::span<const ActorCriticNet> nets,
                    const nlohmann::json& meta) {
  nlohmann::json j;
  j["schema_version"] = kCheckpointSchemaVersion;
  j["format"] = "ipo-actor-critic";
  j["meta"] = meta;
  j["nets"] = nlohmann::json::array();
  for (const ActorCriticNet& net : nets) j["nets"].push_back(ToJson(net));
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump();
}

Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  const nlohmann::json j = nlohmann::json::parse(in);
  if (j.at("schema_version").get<int>() != kCheckpointSchemaVersion) {
    throw std::runtime_error("checkpoint: unsupported schema_version");
  }
  Checkpoint cp;
  cp.meta = j.value("meta", nlohmann::json::object());
  for (const auto& n : j.at("nets")) cp.nets.push_back(NetFromJson(n));
  return cp;
}

}  // namespace ipo::nn
