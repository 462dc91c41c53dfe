// Copyright 2026 The CBD Authors
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

#include "cbd/inverse_dynamics.hpp"

#include <cstring>
#include <fstream>

#include "cbd/error.hpp"
#include "cbd/io_util.hpp"
#include "train_util.hpp"

namespace cbd {

void InverseDynamicsModel::validate() const {
  if (window < 0) throw ValidationError("InverseDynamicsModel: negative window");
  if (net.input_dim() != input_dim() || net.output_dim() != action_dim)
    throw ShapeError("InverseDynamicsModel: network dims do not match");
}

Vec predict_action(const InverseDynamicsModel& model, const Mat& recent,
                   const Vec& planned_next) {
  if (recent.rows() != model.window + 1 || recent.cols() != model.state_dim)
    throw ShapeError("predict_action: window must be (L+1) x D");
  if (planned_next.size() != model.state_dim)
    throw ShapeError("predict_action: planned state dim mismatch");
  Vec input(model.input_dim());
  for (int r = 0; r <= model.window; ++r)
    input.segment(static_cast<Eigen::Index>(r) * model.state_dim, model.state_dim) =
        recent.row(r).transpose();
  input.tail(model.state_dim) = planned_next;
  return model.net.forward(input);
}

Vec idm_input_from_sequence(const InverseDynamicsModel& model, const Mat& states, int t,
                            const Vec& planned_next) {
  if (t < 0 || t >= static_cast<int>(states.rows()))
    throw ValidationError("idm_input_from_sequence: t out of range");
  Mat recent(model.window + 1, model.state_dim);
  for (int offset = -model.window; offset <= 0; ++offset) {
    const int src = std::max(0, t + offset);  // repeat s_0 near the start
    recent.row(offset + model.window) = states.row(src);
  }
  Vec input(model.input_dim());
  for (int r = 0; r <= model.window; ++r)
    input.segment(static_cast<Eigen::Index>(r) * model.state_dim, model.state_dim) =
        recent.row(r).transpose();
  input.tail(model.state_dim) = planned_next;
  return input;
}

IdmLossResult idm_loss(const InverseDynamicsModel& model, const std::vector<IdmBatchItem>& batch) {
  if (batch.empty()) throw ValidationError("idm_loss: empty batch");
  std::vector<internal::RegressionSample> samples;
  samples.reserve(batch.size());
  for (const IdmBatchItem& item : batch) samples.push_back({item.input, item.action});
  const internal::RegressionLoss res = internal::regression_loss(model.net, samples);
  return IdmLossResult{res.loss, res.grads};
}

TrainedIdm train_idm(const Dataset& dataset, const IdmTrainConfig& cfg) {
  if (dataset.empty()) throw ValidationError("train_idm: empty dataset");
  if (!dataset.normalized) throw ValidationError("train_idm: dataset must be normalized first");

  TrainedIdm out;
  out.model.window = cfg.window;
  out.model.state_dim = dataset.D;
  out.model.action_dim = dataset.A;
  out.model.net = Network::mlp(out.model.input_dim(), cfg.hidden, dataset.A, cfg.act,
                               Rng::derive_seed(cfg.train.seed, 505));

  std::vector<internal::RegressionSample> data;
  data.reserve(dataset.size() * static_cast<std::size_t>(dataset.T));
  for (const Trajectory& traj : dataset.trajectories) {
    for (int t = 0; t < dataset.T; ++t) {
      const Vec next = traj.states.row(t + 1).transpose();
      data.push_back({idm_input_from_sequence(out.model, traj.states, t, next),
                      traj.actions.row(t).transpose()});
    }
  }
  out.loss_curve = internal::train_regression(out.model.net, data, cfg.train, "train_idm");
  return out;
}

namespace {
constexpr char kIdmMagic[4] = {'C', 'B', 'D', 'I'};
constexpr std::uint32_t kIdmVersion = 1;
}  // namespace

void save_idm(const std::string& path, const InverseDynamicsModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write checkpoint: " + path);
  out.write(kIdmMagic, 4);
  write_u32(out, kIdmVersion);
  write_u32(out, static_cast<std::uint32_t>(model.window));
  write_u32(out, static_cast<std::uint32_t>(model.state_dim));
  write_u32(out, static_cast<std::uint32_t>(model.action_dim));
  save_network(out, model.net);
}

InverseDynamicsModel load_idm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kIdmMagic, 4) != 0)
    throw FormatError(FormatError::Code::bad_magic, "not an inverse-dynamics checkpoint");
  if (read_u32(in) != kIdmVersion)
    throw FormatError(FormatError::Code::version_mismatch, "unsupported idm version");
  InverseDynamicsModel model;
  model.window = static_cast<int>(read_u32(in));
  model.state_dim = static_cast<int>(read_u32(in));
  model.action_dim = static_cast<int>(read_u32(in));
  model.net = load_network(in);
  model.validate();
  return model;
}

}  // namespace cbd
