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

#pragma once

#include <string>
#include <vector>

#include "cbd/diffusion.hpp"
#include "cbd/net.hpp"
#include "cbd/trajectory.hpp"

namespace cbd {

// Trajectory-level return model: flattened (T+1) x D states -> scalar
// predicted property.
struct ReturnModel {
  Network net;
  PropertyTag criterion = PropertyTag::trajectory_return;
  TrajLayout layout;

  double predict(const Mat& states) const;
  double predict_flat(const Vec& flat) const;
};

struct RefinementConfig {
  double step_size = 0.1;  // gradient guidance scale
  int rounds = 1;

  void validate() const;
};

struct ReturnBatchItem {
  Vec x0;  // flattened normalized states
  double y = 0.0;
};

struct ReturnLossResult {
  double loss = 0.0;
  Gradients grads;
};

// mean_s (R(x_s) - y_s)^2 with parameter gradients.
ReturnLossResult return_loss(const ReturnModel& model, const std::vector<ReturnBatchItem>& batch);

struct RefineResult {
  Mat states;
  bool skipped_nonfinite = false;
};

// Gradient refinement of the generated suffix: positions t+1..T move
// against the gradient of (R(x) - y)^2; positions 0..t are untouched.
// A non-finite gradient skips the update and returns the input.
RefineResult refine(const ReturnModel& model, const Mat& states, int t, double y,
                    const RefinementConfig& cfg);

// Greedy selection: index of the candidate minimizing (R(c) - y)^2,
// lowest index on ties.
std::size_t gs_align(const ReturnModel& model, const std::vector<Mat>& candidates, double y);

struct AlignerTrainConfig {
  TrainConfig train;
  PropertyTag criterion = PropertyTag::trajectory_return;
  std::vector<int> hidden = {128, 128};
  Activation act = Activation::silu;
};

struct TrainedAligner {
  ReturnModel model;
  std::vector<double> loss_curve;
};

// Regression on the criterion targets; smoothness/early-spend targets
// are recomputed from the (normalized) states, return uses the stored y.
TrainedAligner train_aligner(const Dataset& dataset, const AlignerTrainConfig& cfg);

// Criterion target for one trajectory of the (normalized) dataset.
double aligner_target(const Trajectory& traj, PropertyTag criterion);

void save_aligner(const std::string& path, const ReturnModel& model);
ReturnModel load_aligner(const std::string& path);

}  // namespace cbd
