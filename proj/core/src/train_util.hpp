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

namespace cbd::internal {

struct RegressionSample {
  Vec input;
  Vec target;
};

struct RegressionLoss {
  double loss = 0.0;
  Gradients grads;
};

// mean_s ||net(x_s) - t_s||^2 with parameter gradients; chunk-parallel,
// deterministic for any thread count.
RegressionLoss regression_loss(const Network& net, const std::vector<RegressionSample>& batch);

// Shared epoch loop (shuffle, Adam, gradient accumulation, divergence
// check) for the plain MSE regressors.
std::vector<double> train_regression(Network& net, const std::vector<RegressionSample>& data,
                                     const TrainConfig& cfg, const std::string& what);

}  // namespace cbd::internal
