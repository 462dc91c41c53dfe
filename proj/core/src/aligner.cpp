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

#include "cbd/aligner.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "cbd/error.hpp"
#include "cbd/io_util.hpp"
#include "train_util.hpp"

namespace cbd {

double ReturnModel::predict_flat(const Vec& flat) const { return net.forward(flat)[0]; }

double ReturnModel::predict(const Mat& states) const {
  return predict_flat(flatten_states(states));
}

void RefinementConfig::validate() const {
  if (!(step_size >= 0.0) || !std::isfinite(step_size))
    throw ValidationError("RefinementConfig: step size must be finite and >= 0");
  if (rounds < 1) throw ValidationError("RefinementConfig: rounds must be >= 1");
}

ReturnLossResult return_loss(const ReturnModel& model,
                             const std::vector<ReturnBatchItem>& batch) {
  if (batch.empty()) throw ValidationError("return_loss: empty batch");
  std::vector<internal::RegressionSample> samples;
  samples.reserve(batch.size());
  for (const ReturnBatchItem& item : batch)
    samples.push_back({item.x0, Vec::Constant(1, item.y)});
  const internal::RegressionLoss res = internal::regression_loss(model.net, samples);
  return ReturnLossResult{res.loss, res.grads};
}

RefineResult refine(const ReturnModel& model, const Mat& states, int t, double y,
                    const RefinementConfig& cfg) {
  cfg.validate();
  const TrajLayout& layout = model.layout;
  if (states.rows() != layout.positions() || states.cols() != layout.D)
    throw ShapeError("refine: states are not (T+1) x D");
  if (t < 0 || t > layout.T - 1) throw ValidationError("refine: t out of range");

  RefineResult out;
  out.states = states;
  Vec flat = flatten_states(states);
  const Eigen::Index suffix_begin = static_cast<Eigen::Index>(t + 1) * layout.D;
  for (int round = 0; round < cfg.rounds; ++round) {
    const double residual = model.net.forward(flat)[0] - y;
    const Gradients g = backward(model.net, flat, Vec::Constant(1, 2.0 * residual));
    if (!g.input.allFinite()) {
      out.skipped_nonfinite = true;
      return out;  // input returned unchanged
    }
    flat.tail(flat.size() - suffix_begin) -=
        cfg.step_size * g.input.tail(flat.size() - suffix_begin);
  }
  Mat refined = unflatten_states(flat, layout);
  // Prefix rows were never written; copy through to keep them bit-equal.
  refined.topRows(t + 1) = states.topRows(t + 1);
  out.states = std::move(refined);
  return out;
}

std::size_t gs_align(const ReturnModel& model, const std::vector<Mat>& candidates, double y) {
  if (candidates.empty()) throw ValidationError("gs_align: empty candidate list");
  std::size_t best = 0;
  double best_err = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double r = model.predict(candidates[i]) - y;
    const double err = r * r;
    if (err < best_err) {
      best_err = err;
      best = i;
    }
  }
  return best;
}

double aligner_target(const Trajectory& traj, PropertyTag criterion) {
  switch (criterion) {
    case PropertyTag::trajectory_return:
      return traj.y;
    case PropertyTag::smoothness:
      return spend_variance(traj.states);
    case PropertyTag::early_spend:
      return early_spend_ratio(traj.states);
  }
  throw ValidationError("unknown criterion");
}

TrainedAligner train_aligner(const Dataset& dataset, const AlignerTrainConfig& cfg) {
  if (dataset.empty()) throw ValidationError("train_aligner: empty dataset");
  if (!dataset.normalized)
    throw ValidationError("train_aligner: dataset must be normalized first");

  const TrajLayout layout{dataset.T, dataset.D};
  TrainedAligner out;
  out.model.layout = layout;
  out.model.criterion = cfg.criterion;
  out.model.net = Network::mlp(layout.size(), cfg.hidden, 1, cfg.act,
                               Rng::derive_seed(cfg.train.seed, 404));

  std::vector<internal::RegressionSample> data;
  data.reserve(dataset.size());
  for (const Trajectory& t : dataset.trajectories)
    data.push_back({flatten_states(t.states), Vec::Constant(1, aligner_target(t, cfg.criterion))});
  out.loss_curve = internal::train_regression(out.model.net, data, cfg.train, "train_aligner");
  return out;
}

namespace {
constexpr char kAlignerMagic[4] = {'C', 'B', 'D', 'A'};
constexpr std::uint32_t kAlignerVersion = 1;
}  // namespace

void save_aligner(const std::string& path, const ReturnModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write checkpoint: " + path);
  out.write(kAlignerMagic, 4);
  write_u32(out, kAlignerVersion);
  write_u32(out, static_cast<std::uint32_t>(model.criterion));
  write_u32(out, static_cast<std::uint32_t>(model.layout.T));
  write_u32(out, static_cast<std::uint32_t>(model.layout.D));
  save_network(out, model.net);
}

ReturnModel load_aligner(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kAlignerMagic, 4) != 0)
    throw FormatError(FormatError::Code::bad_magic, "not an aligner checkpoint");
  if (read_u32(in) != kAlignerVersion)
    throw FormatError(FormatError::Code::version_mismatch, "unsupported aligner version");
  ReturnModel model;
  model.criterion = static_cast<PropertyTag>(read_u32(in));
  model.layout.T = static_cast<int>(read_u32(in));
  model.layout.D = static_cast<int>(read_u32(in));
  model.net = load_network(in);
  if (model.net.input_dim() != model.layout.size() || model.net.output_dim() != 1)
    throw FormatError(FormatError::Code::malformed, "aligner: network dims mismatch");
  return model;
}

}  // namespace cbd
