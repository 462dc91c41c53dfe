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

#include "cbd/net.hpp"

namespace cbd {

struct Impression;

// Bidding parameters lambda_0..lambda_J. Non-negative after every
// update. Default J=0: a single pacing parameter.
struct BiddingParams {
  Vec lambda;

  static BiddingParams single(double lambda0);
  int constraint_count() const { return static_cast<int>(lambda.size()) - 1; }
  void validate() const;
};

// Optimal-form bid: lambda_0 * v + sum_j lambda_j * p_j * C_j.
// `constraint_caps` holds C_1..C_J (empty when J=0).
double compute_bid(const BiddingParams& params, const Impression& imp,
                   const Vec& constraint_caps);

// Multiplicative-exponential adjustment: lambda_j <- lambda_j * exp(a_j),
// identity at a_j = 0. The exponent is clamped to +-20 to keep
// parameters finite under runaway actions.
BiddingParams apply_action(const BiddingParams& params, const Vec& action);

}  // namespace cbd
