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

#include "cbd/bidding.hpp"

#include <algorithm>
#include <cmath>

#include "cbd/auction.hpp"
#include "cbd/error.hpp"

namespace cbd {

BiddingParams BiddingParams::single(double lambda0) {
  BiddingParams p;
  p.lambda = Vec::Constant(1, lambda0);
  p.validate();
  return p;
}

void BiddingParams::validate() const {
  if (lambda.size() < 1) throw ValidationError("BiddingParams: needs lambda_0");
  if (!lambda.allFinite()) throw ValidationError("BiddingParams: non-finite lambda");
  if ((lambda.array() < 0.0).any()) throw ValidationError("BiddingParams: negative lambda");
}

double compute_bid(const BiddingParams& params, const Impression& imp,
                   const Vec& constraint_caps) {
  if (constraint_caps.size() != params.constraint_count())
    throw ShapeError("compute_bid: constraint cap count mismatch");
  double bid = params.lambda[0] * imp.value;
  for (int j = 1; j < static_cast<int>(params.lambda.size()); ++j)
    bid += params.lambda[j] * imp.p_value * constraint_caps[j - 1];
  return bid;
}

BiddingParams apply_action(const BiddingParams& params, const Vec& action) {
  if (!action.allFinite()) throw ValidationError("apply_action: non-finite action");
  if (action.size() != params.lambda.size())
    throw ShapeError("apply_action: action dim != parameter dim");
  BiddingParams next = params;
  for (Eigen::Index j = 0; j < action.size(); ++j) {
    const double a = std::clamp(action[j], -20.0, 20.0);
    next.lambda[j] = std::max(0.0, params.lambda[j] * std::exp(a));
  }
  return next;
}

}  // namespace cbd
