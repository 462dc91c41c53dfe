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

#include <cstdint>
#include <string>
#include <vector>

#include "cbd/net.hpp"

namespace cbd {

// Index of the remaining-budget feature in the 16-dim state.
inline constexpr int kBudgetFeature = 1;
inline constexpr int kStateDim = 16;

// Fixed-length episode record: T+1 states, T actions, T rewards, plus a
// scalar condition on the normalized scale.
struct Trajectory {
  Mat states;   // (T+1) x D
  Mat actions;  // T x A
  Vec rewards;  // T
  double y = 0.0;
  std::int64_t period = 0;

  int horizon() const { return static_cast<int>(rewards.size()); }
  int state_dim() const { return static_cast<int>(states.cols()); }
  int action_dim() const { return static_cast<int>(actions.cols()); }
  void validate() const;  // shapes chain and everything is finite
};

// Per-feature z-score statistics. Constant features have their std
// clamped to the floor and are flagged.
struct FeatureStats {
  Vec mean;
  Vec stddev;
  std::vector<std::uint8_t> clamped;

  static constexpr double kStdFloor = 1e-6;
  int dim() const { return static_cast<int>(mean.size()); }
};

struct ConditionStats {
  double y_min = 0.0;
  double y_max = 1.0;
  double range() const;
};

struct Dataset {
  std::vector<Trajectory> trajectories;
  FeatureStats state_stats;
  ConditionStats condition_stats;
  int T = 48;
  int D = kStateDim;
  int A = 1;
  bool normalized = false;

  std::size_t size() const { return trajectories.size(); }
  bool empty() const { return trajectories.empty(); }
  void validate() const;
};

enum class PropertyTag : std::uint32_t { trajectory_return = 0, smoothness = 1, early_spend = 2 };

// Scalar trajectory property used as the generation condition y.
// `trajectory_return` min-max normalizes the reward sum with the stats
// captured here; the other tags need no parameters.
struct PropertyFunctional {
  PropertyTag tag = PropertyTag::trajectory_return;
  ConditionStats stats;  // used by trajectory_return only

  static PropertyFunctional returns(const ConditionStats& stats) {
    return PropertyFunctional{PropertyTag::trajectory_return, stats};
  }
  static PropertyFunctional smoothness() { return PropertyFunctional{PropertyTag::smoothness, {}}; }
  static PropertyFunctional early_spend() {
    return PropertyFunctional{PropertyTag::early_spend, {}};
  }
};

const char* property_tag_name(PropertyTag tag);
PropertyTag property_tag_from_name(const std::string& name);

double compute_condition(const Trajectory& traj, const PropertyFunctional& f);

// Per-interval budget spend derived from the budget feature. The Mat
// overloads accept a bare (T+1) x D state sequence (raw or normalized;
// the z-score shift cancels in the differences).
Vec spend_series(const Mat& states);
Vec spend_series(const Trajectory& traj);
double spend_variance(const Mat& states);
double spend_variance(const Trajectory& traj);
// First-half cost ratio; 0 when the total spend is zero.
double early_spend_ratio(const Mat& states);

FeatureStats compute_feature_stats(const Dataset& dataset);
ConditionStats compute_condition_stats(const Dataset& dataset);

// Z-scores every state in the dataset; stats are fitted on the input.
Dataset normalize_states(const Dataset& dataset);
Mat normalize_states(const Mat& states, const FeatureStats& stats);
Mat denormalize_states(const Mat& states, const FeatureStats& stats);
Vec normalize_state(const Vec& state, const FeatureStats& stats);
Vec denormalize_state(const Vec& state, const FeatureStats& stats);

// Dataset files. `path` ending in ".bin" selects the binary variant,
// anything else the canonical line-delimited text variant; stats go in a
// `<path>.stats` sidecar. Loading sniffs the format from the content.
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

// The stats sidecar on its own (shared with policy bundles).
void save_stats_file(const std::string& path, const FeatureStats& fs, const ConditionStats& cs);
std::pair<FeatureStats, ConditionStats> load_stats_file(const std::string& path);

}  // namespace cbd
