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

// Action decoder: (L+1 recent states, planned next state) -> action.
struct InverseDynamicsModel {
  Network net;
  int window = 3;  // L
  int state_dim = kStateDim;
  int action_dim = 1;

  int input_dim() const { return (window + 2) * state_dim; }
  void validate() const;
};

// `recent` holds the L+1 states s_{t-L..t} (callers zero-pad episode
// starts by repeating s_0).
Vec predict_action(const InverseDynamicsModel& model, const Mat& recent, const Vec& planned_next);

// Builds the flat model input from a full state sequence at step t,
// left-padding with s_0 near the episode start.
Vec idm_input_from_sequence(const InverseDynamicsModel& model, const Mat& states, int t,
                            const Vec& planned_next);

struct IdmBatchItem {
  Vec input;   // flattened (L+2) x D
  Vec action;  // A
};

struct IdmLossResult {
  double loss = 0.0;
  Gradients grads;
};

IdmLossResult idm_loss(const InverseDynamicsModel& model, const std::vector<IdmBatchItem>& batch);

struct IdmTrainConfig {
  TrainConfig train;
  int window = 3;
  std::vector<int> hidden = {128, 128};
  Activation act = Activation::silu;
};

struct TrainedIdm {
  InverseDynamicsModel model;
  std::vector<double> loss_curve;
};

// Trains on ground-truth consecutive transitions only.
TrainedIdm train_idm(const Dataset& dataset, const IdmTrainConfig& cfg);

void save_idm(const std::string& path, const InverseDynamicsModel& model);
InverseDynamicsModel load_idm(const std::string& path);

}  // namespace cbd
