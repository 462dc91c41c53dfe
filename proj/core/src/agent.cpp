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

#include "cbd/agent.hpp"

#include <cmath>
#include <filesystem>
#include <json.hpp>

#include "cbd/error.hpp"
#include "cbd/io_util.hpp"

namespace cbd {

namespace fs = std::filesystem;
using nlohmann::json;

const char* align_mode_name(AlignMode mode) {
  switch (mode) {
    case AlignMode::none:
      return "none";
    case AlignMode::gradient:
      return "gradient";
    case AlignMode::gs:
      return "gs_align";
  }
  throw ValidationError("unknown align mode");
}

AlignMode align_mode_from_name(const std::string& name) {
  if (name == "none") return AlignMode::none;
  if (name == "gradient") return AlignMode::gradient;
  if (name == "gs_align" || name == "gs") return AlignMode::gs;
  throw ValidationError("unknown align mode: " + name);
}

void AgentPolicy::validate() const {
  refinement.validate();
  if (align_mode != AlignMode::none && !aligner.has_value())
    throw ValidationError("AgentPolicy: align mode requires an aligner checkpoint");
  if (align_mode == AlignMode::gs && gs_candidates < 2)
    throw ValidationError("AgentPolicy: gs_align needs at least 2 candidates");
  const PredictorConfig& p = completer.predictor.config();
  if (idm.state_dim != p.D) throw ShapeError("AgentPolicy: idm state dim mismatch");
  if (state_stats.dim() != p.D) throw ShapeError("AgentPolicy: stats dim mismatch");
  if (aligner.has_value() &&
      (aligner->layout.T != p.T || aligner->layout.D != p.D))
    throw ShapeError("AgentPolicy: aligner layout mismatch");
}

EpisodeRunResult run_episode(const AgentPolicy& policy, Episode& env, Rng& rng,
                             const RunOptions& opts) {
  policy.validate();
  const PredictorConfig& pcfg = policy.completer.predictor.config();
  const int T = env.horizon();
  if (T != pcfg.T) throw ShapeError("run_episode: environment horizon != model horizon");
  if (env.interval() != 0 || env.interval_open())
    throw StateError("run_episode: episode must be fresh");

  const double expected_value = std::max(env.config().expected_total_value(), 1e-9);
  BiddingParams params =
      BiddingParams::single(policy.lambda0_scale * env.advertiser().budget / expected_value);

  EpisodeRunResult out;
  out.trajectory.period = -1;
  out.trajectory.states = Mat(T + 1, pcfg.D);
  out.trajectory.actions = Mat(T, 1);
  out.trajectory.rewards = Vec(T);
  if (opts.record_generations) out.generations.reserve(static_cast<std::size_t>(T));

  Mat query_norm(T + 1, pcfg.D);  // realized states only, normalized
  for (int t = 0; t < T; ++t) {
    env.begin_interval();
    const Vec raw_state = featurize(env);
    out.trajectory.states.row(t) = raw_state.transpose();
    query_norm.row(t) = normalize_state(raw_state, policy.state_stats).transpose();

    const Mat observed = query_norm.topRows(t + 1);
    Mat plan;
    if (policy.align_mode == AlignMode::gs) {
      const std::vector<Mat> candidates =
          generate_batch(policy.completer.predictor, policy.completer.schedule, observed,
                         policy.target_y, policy.omega, rng, policy.gs_candidates);
      plan = candidates[gs_align(*policy.aligner, candidates, policy.target_y)];
    } else {
      plan = generate(policy.completer.predictor, policy.completer.schedule, observed,
                      policy.target_y, policy.omega, rng);
      if (policy.align_mode == AlignMode::gradient)
        plan = refine(*policy.aligner, plan, t, policy.target_y, policy.refinement).states;
    }
    if (opts.record_generations)
      out.generations.push_back(denormalize_states(plan, policy.state_stats));

    const Vec planned_next = plan.row(t + 1).transpose();
    const Vec idm_input = idm_input_from_sequence(policy.idm, observed, t, planned_next);
    const Vec action = policy.idm.net.forward(idm_input);
    params = apply_action(params, action);

    out.trajectory.actions.row(t) = action.transpose();
    out.trajectory.rewards[t] = env.step(params).reward;
  }
  const Vec final_state = featurize(env);
  out.trajectory.states.row(T) = final_state.transpose();
  out.trajectory.y =
      (out.trajectory.rewards.sum() - policy.condition_stats.y_min) /
      policy.condition_stats.range();

  out.ledger = env.ledger();
  out.total_value = env.total_won_value();
  out.total_cost = env.total_cost();
  out.conversions = env.total_conversions();
  out.cpa_target = env.advertiser().cpa_target;
  return out;
}

void save_policy_bundle(const std::string& path, const AgentPolicy& policy,
                        const std::string& completer_path, const std::string& aligner_path,
                        const std::string& idm_path, const std::string& stats_path) {
  json j;
  j["format"] = "cbd-policy-bundle";
  j["version"] = 1;
  j["completer"] = completer_path;
  if (!aligner_path.empty()) j["aligner"] = aligner_path;
  j["idm"] = idm_path;
  j["stats"] = stats_path;
  j["schedule"] = {{"K", policy.completer.schedule.K},
                   {"sigma_mode", policy.completer.schedule.mode == SigmaMode::variance
                                      ? "variance"
                                      : "literal"}};
  j["inference"] = {{"omega", policy.omega},
                    {"step_size", policy.refinement.step_size},
                    {"rounds", policy.refinement.rounds},
                    {"target_y", policy.target_y},
                    {"align_mode", align_mode_name(policy.align_mode)},
                    {"candidates", policy.gs_candidates},
                    {"lambda0_scale", policy.lambda0_scale}};
  write_file(path, j.dump(2) + "\n");
}

AgentPolicy load_policy_bundle(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw FormatError(FormatError::Code::malformed, std::string("policy bundle: ") + e.what());
  }
  if (j.value("format", "") != std::string("cbd-policy-bundle"))
    throw FormatError(FormatError::Code::bad_magic, "not a policy bundle manifest");
  if (j.at("version").get<int>() != 1)
    throw FormatError(FormatError::Code::version_mismatch, "unsupported bundle version");

  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    const fs::path candidate(p);
    return candidate.is_absolute() ? candidate.string() : (base / candidate).string();
  };

  AgentPolicy policy;
  policy.completer = load_completer(resolve(j.at("completer").get<std::string>()));
  if (j.contains("aligner"))
    policy.aligner = load_aligner(resolve(j.at("aligner").get<std::string>()));
  policy.idm = load_idm(resolve(j.at("idm").get<std::string>()));
  std::tie(policy.state_stats, policy.condition_stats) =
      load_stats_file(resolve(j.at("stats").get<std::string>()));

  const json& inf = j.at("inference");
  policy.omega = inf.value("omega", 1.0);
  policy.refinement.step_size = inf.value("step_size", 0.1);
  policy.refinement.rounds = inf.value("rounds", 1);
  policy.target_y = inf.value("target_y", 0.9);
  policy.align_mode = align_mode_from_name(inf.value("align_mode", "gradient"));
  policy.gs_candidates = inf.value("candidates", 10);
  policy.lambda0_scale = inf.value("lambda0_scale", 1.0);
  policy.validate();
  return policy;
}

}  // namespace cbd
