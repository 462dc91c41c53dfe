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

#include "cbd/auction.hpp"
#include "cbd/trajectory.hpp"

namespace cbd {

enum class PolicyKind : std::uint32_t { constant = 0, pid_pacer = 1, noisy_expert = 2 };

PolicyKind policy_kind_from_name(const std::string& name);

struct ScriptedPolicyConfig {
  PolicyKind kind = PolicyKind::pid_pacer;
  // Velocity-form PID on the uniform-pacing error, acting in log space.
  double kp = 3.0;
  double ki = 0.8;
  double kd = 0.5;
  double action_clip = 0.6;
  double noise_sigma = 0.25;  // noisy_expert only
};

// Behavior policy driving an Episode; fresh instance per trajectory.
class ScriptedPolicy {
 public:
  ScriptedPolicy(const ScriptedPolicyConfig& cfg, std::uint64_t noise_seed);

  // Bidding-parameter adjustment for the upcoming interval.
  Vec act(const Episode& ep);

 private:
  ScriptedPolicyConfig cfg_;
  Rng rng_;
  double prev_error_ = 0.0;
  double prev_prev_error_ = 0.0;
};

ScriptedPolicyConfig scripted_policy(PolicyKind kind);

struct DatasetGenOptions {
  int periods = 200;
  std::uint64_t seed = 1;
  // Initial lambda_0 = lambda0_scale * B / E[total value], jittered
  // log-uniformly by [init_jitter_min, init_jitter_max] per trajectory.
  double lambda0_scale = 1.0;
  double init_jitter_min = 3.0;
  double init_jitter_max = 6.0;
};

// Default quality mix: 20% constant, 50% pid_pacer, 30% noisy_expert.
std::vector<ScriptedPolicyConfig> default_policy_mix();

// Runs every policy once per period against fresh advertiser configs;
// records raw states/actions/rewards, fits normalization and condition
// stats, and stores min-max normalized returns as y.
Dataset collect_dataset(const std::vector<ScriptedPolicyConfig>& policies, const SimConfig& sim,
                        const DatasetGenOptions& opts);

// One scripted rollout; exposed for tests and the agent's stub paths.
Trajectory run_scripted_episode(const ScriptedPolicyConfig& policy, const SimConfig& sim,
                                const AdvertiserConfig& adv, double initial_lambda0,
                                std::uint64_t episode_seed, std::uint64_t policy_seed,
                                std::int64_t period);

}  // namespace cbd
