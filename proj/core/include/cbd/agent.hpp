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

#include <optional>
#include <string>
#include <vector>

#include "cbd/aligner.hpp"
#include "cbd/auction.hpp"
#include "cbd/diffusion.hpp"
#include "cbd/inverse_dynamics.hpp"
#include "cbd/trajectory.hpp"

namespace cbd {

enum class AlignMode : std::uint32_t { none = 0, gradient = 1, gs = 2 };

const char* align_mode_name(AlignMode mode);
AlignMode align_mode_from_name(const std::string& name);

// Everything needed to run the inference loop: completer + schedule,
// optional aligner, inverse dynamics, normalization stats, and the
// inference knobs.
struct AgentPolicy {
  TrainedCompleter completer;
  std::optional<ReturnModel> aligner;
  InverseDynamicsModel idm;
  FeatureStats state_stats;
  ConditionStats condition_stats;

  double omega = 1.0;
  RefinementConfig refinement;
  double target_y = 0.9;
  AlignMode align_mode = AlignMode::gradient;
  int gs_candidates = 10;
  double lambda0_scale = 1.0;

  void validate() const;
};

struct RunOptions {
  bool record_generations = false;  // keep each tick's denormalized plan
};

struct EpisodeRunResult {
  Trajectory trajectory;  // realized raw states/actions/rewards
  std::vector<IntervalLedger> ledger;
  double total_value = 0.0;
  double total_cost = 0.0;
  std::int64_t conversions = 0;
  double cpa_target = 0.0;
  std::vector<Mat> generations;  // per tick, denormalized (if recorded)
};

// Full inference loop: featurize -> generate suffix -> align -> inverse
// dynamics -> adjust parameters -> step the auction, growing the query
// with realized states only.
EpisodeRunResult run_episode(const AgentPolicy& policy, Episode& env, Rng& rng,
                             const RunOptions& opts = {});

// Policy bundle manifest (JSON): checkpoint paths, stats sidecar path,
// schedule summary, and the inference config. Paths are resolved
// relative to the manifest location.
void save_policy_bundle(const std::string& path, const AgentPolicy& policy,
                        const std::string& completer_path, const std::string& aligner_path,
                        const std::string& idm_path, const std::string& stats_path);
AgentPolicy load_policy_bundle(const std::string& path);

}  // namespace cbd
