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

#include "cbd/dataset_gen.hpp"

#include <algorithm>
#include <cmath>

#include "cbd/error.hpp"
#include "cbd/threading.hpp"

namespace cbd {

PolicyKind policy_kind_from_name(const std::string& name) {
  if (name == "constant") return PolicyKind::constant;
  if (name == "pid_pacer") return PolicyKind::pid_pacer;
  if (name == "noisy_expert") return PolicyKind::noisy_expert;
  throw ValidationError("unknown policy kind: " + name);
}

ScriptedPolicyConfig scripted_policy(PolicyKind kind) {
  ScriptedPolicyConfig cfg;
  cfg.kind = kind;
  return cfg;
}

ScriptedPolicy::ScriptedPolicy(const ScriptedPolicyConfig& cfg, std::uint64_t noise_seed)
    : cfg_(cfg), rng_(noise_seed) {}

Vec ScriptedPolicy::act(const Episode& ep) {
  Vec action = Vec::Zero(1);
  if (cfg_.kind == PolicyKind::constant) return action;

  // Uniform-pacing error: positive when spend lags the linear target.
  const double budget = ep.advertiser().budget;
  const double spent = budget - ep.remaining_budget();
  const double t = static_cast<double>(ep.interval());
  const double target = budget * t / static_cast<double>(ep.horizon());
  const double error = (target - spent) / budget;

  double a = cfg_.kp * (error - prev_error_) + cfg_.ki * error +
             cfg_.kd * (error - 2.0 * prev_error_ + prev_prev_error_);
  prev_prev_error_ = prev_error_;
  prev_error_ = error;
  a = std::clamp(a, -cfg_.action_clip, cfg_.action_clip);
  if (cfg_.kind == PolicyKind::noisy_expert) a += cfg_.noise_sigma * rng_.normal();
  action[0] = std::clamp(a, -cfg_.action_clip, cfg_.action_clip);
  return action;
}

std::vector<ScriptedPolicyConfig> default_policy_mix() {
  std::vector<ScriptedPolicyConfig> mix;
  for (int i = 0; i < 2; ++i) mix.push_back(scripted_policy(PolicyKind::constant));
  for (int i = 0; i < 5; ++i) mix.push_back(scripted_policy(PolicyKind::pid_pacer));
  for (int i = 0; i < 3; ++i) mix.push_back(scripted_policy(PolicyKind::noisy_expert));
  return mix;
}

Trajectory run_scripted_episode(const ScriptedPolicyConfig& policy, const SimConfig& sim,
                                const AdvertiserConfig& adv, double initial_lambda0,
                                std::uint64_t episode_seed, std::uint64_t policy_seed,
                                std::int64_t period) {
  Episode ep(sim, adv, episode_seed);
  ScriptedPolicy pi(policy, policy_seed);
  BiddingParams params = BiddingParams::single(initial_lambda0);

  Trajectory traj;
  traj.period = period;
  traj.states = Mat(sim.T + 1, kStateDim);
  traj.actions = Mat(sim.T, 1);
  traj.rewards = Vec(sim.T);
  for (int t = 0; t < sim.T; ++t) {
    ep.begin_interval();
    traj.states.row(t) = featurize(ep).transpose();
    const Vec action = pi.act(ep);
    params = apply_action(params, action);
    traj.actions.row(t) = action.transpose();
    traj.rewards[t] = ep.step(params).reward;
  }
  traj.states.row(sim.T) = featurize(ep).transpose();
  return traj;
}

Dataset collect_dataset(const std::vector<ScriptedPolicyConfig>& policies, const SimConfig& sim,
                        const DatasetGenOptions& opts) {
  if (policies.empty()) throw ValidationError("collect_dataset: no behavior policies");
  if (opts.periods < 1) throw ValidationError("collect_dataset: periods must be >= 1");
  if (!(opts.init_jitter_min > 0.0) || opts.init_jitter_max < opts.init_jitter_min)
    throw ValidationError("collect_dataset: bad init jitter range");
  sim.validate();

  const double expected_value = std::max(sim.expected_total_value(), 1e-9);
  const std::size_t per_period = policies.size();
  const std::size_t total = per_period * static_cast<std::size_t>(opts.periods);

  Dataset out;
  out.T = sim.T;
  out.D = kStateDim;
  out.A = 1;
  out.trajectories.resize(total);

  parallel_chunks(
      static_cast<std::size_t>(opts.periods), 16,
      [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
          const std::uint64_t period_seed = Rng::derive_seed(opts.seed, p);
          for (std::size_t q = 0; q < per_period; ++q) {
            Rng setup(Rng::derive_seed(period_seed, 2 * q));
            const AdvertiserConfig adv = sample_advertiser(sim, setup);
            const double jitter = std::exp(setup.uniform(std::log(opts.init_jitter_min),
                                                         std::log(opts.init_jitter_max)));
            const double lambda0 =
                opts.lambda0_scale * adv.budget / expected_value * jitter;
            out.trajectories[p * per_period + q] = run_scripted_episode(
                policies[q], sim, adv, lambda0, Rng::derive_seed(period_seed, 2 * q + 1),
                setup.raw(), static_cast<std::int64_t>(p));
          }
        }
      });

  out.condition_stats = compute_condition_stats(out);
  out.state_stats = compute_feature_stats(out);
  const PropertyFunctional f = PropertyFunctional::returns(out.condition_stats);
  for (Trajectory& t : out.trajectories) t.y = compute_condition(t, f);
  out.validate();
  return out;
}

}  // namespace cbd
