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

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>

#include "cbd/agent.hpp"
#include "cbd/aligner.hpp"
#include "cbd/auction.hpp"
#include "cbd/dataset_gen.hpp"
#include "cbd/diffusion.hpp"
#include "cbd/error.hpp"
#include "cbd/inverse_dynamics.hpp"
#include "cbd/io_util.hpp"
#include "cbd/metrics.hpp"
#include "cbd/trajectory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;

struct GlobalArgs {
  std::uint64_t seed = 1;
  bool seed_given = false;
  std::string config_path;
  std::string out_dir = ".";
};

cbd::KvConfig load_config(const GlobalArgs& g) {
  if (g.config_path.empty()) return {};
  return cbd::KvConfig::load(g.config_path);
}

std::string out_path(const GlobalArgs& g, const std::string& name) {
  fs::create_directories(g.out_dir);
  return (fs::path(g.out_dir) / name).string();
}

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stoi(item));
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stod(item));
  }
  return out;
}

std::vector<std::string> parse_string_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::uint64_t effective_seed(const GlobalArgs& g, const cbd::KvConfig& kv) {
  if (g.seed_given) return g.seed;
  return static_cast<std::uint64_t>(kv.get_int("seed", static_cast<std::int64_t>(g.seed)));
}

// ---------------------------------------------------------------------------
// gen-data

int cmd_gen_data(const GlobalArgs& g) {
  const cbd::KvConfig kv = load_config(g);
  cbd::SimConfig sim = cbd::SimConfig::from_kv(kv);
  const std::uint64_t seed = effective_seed(g, kv);
  sim.seed = seed;

  cbd::DatasetGenOptions opts;
  opts.periods = static_cast<int>(kv.get_int("periods", 200));
  opts.seed = seed;
  opts.lambda0_scale = kv.get_double("lambda0_scale", opts.lambda0_scale);
  opts.init_jitter_min = kv.get_double("init_jitter_min", opts.init_jitter_min);
  opts.init_jitter_max = kv.get_double("init_jitter_max", opts.init_jitter_max);

  std::vector<cbd::ScriptedPolicyConfig> mix;
  const int n_constant = static_cast<int>(kv.get_int("mix_constant", 2));
  const int n_pid = static_cast<int>(kv.get_int("mix_pid", 5));
  const int n_noisy = static_cast<int>(kv.get_int("mix_noisy", 3));
  for (int i = 0; i < n_constant; ++i)
    mix.push_back(cbd::scripted_policy(cbd::PolicyKind::constant));
  for (int i = 0; i < n_pid; ++i) mix.push_back(cbd::scripted_policy(cbd::PolicyKind::pid_pacer));
  for (int i = 0; i < n_noisy; ++i)
    mix.push_back(cbd::scripted_policy(cbd::PolicyKind::noisy_expert));

  const cbd::Dataset dataset = cbd::collect_dataset(mix, sim, opts);
  const std::string name = kv.get_string("dataset_name", "dataset.jsonl");
  const std::string path = out_path(g, name);
  cbd::save_dataset(dataset, path);

  // Manifest: everything needed to regenerate this dataset exactly.
  json manifest;
  manifest["command"] = "gen-data";
  manifest["seed"] = seed;
  manifest["periods"] = opts.periods;
  manifest["mix"] = {{"constant", n_constant}, {"pid_pacer", n_pid}, {"noisy_expert", n_noisy}};
  manifest["lambda0_scale"] = opts.lambda0_scale;
  manifest["init_jitter"] = {opts.init_jitter_min, opts.init_jitter_max};
  manifest["sim"] = sim.to_kv_text();
  manifest["trajectories"] = dataset.size();
  cbd::write_file(path + ".manifest", manifest.dump(2) + "\n");

  std::cout << "wrote " << dataset.size() << " trajectories to " << path << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

cbd::TrainConfig base_train_config(const cbd::KvConfig& kv, std::uint64_t seed,
                                   int default_epochs) {
  cbd::TrainConfig t;
  t.epochs = static_cast<int>(kv.get_int("epochs", default_epochs));
  t.batch_size = static_cast<int>(kv.get_int("batch", 64));
  t.lr = kv.get_double("lr", 3e-4);
  t.grad_accum = static_cast<int>(kv.get_int("grad_accum", 1));
  t.seed = seed;
  return t;
}

int cmd_train(const GlobalArgs& g, const std::string& component, const std::string& dataset_path) {
  const cbd::KvConfig kv = load_config(g);
  const std::uint64_t seed = effective_seed(g, kv);
  cbd::Dataset dataset = cbd::load_dataset(dataset_path);
  if (!dataset.normalized) dataset = cbd::normalize_states(dataset);

  if (component == "completer") {
    cbd::CompleterTrainConfig cfg;
    cfg.train = base_train_config(kv, seed, 60);
    cfg.mask_mode = kv.get_string("mask_mode", "completion") == "vanilla"
                        ? cbd::MaskMode::vanilla
                        : cbd::MaskMode::completion;
    cfg.K = static_cast<int>(kv.get_int("K", 100));
    cfg.beta_start = kv.get_double("beta_start", cfg.beta_start);
    cfg.beta_end = kv.get_double("beta_end", cfg.beta_end);
    cfg.sigma_mode = kv.get_string("sigma_mode", "variance") == "literal"
                         ? cbd::SigmaMode::literal
                         : cbd::SigmaMode::variance;
    cfg.predictor.p_drop = kv.get_double("p_drop", cfg.predictor.p_drop);
    if (kv.has("hidden")) cfg.predictor.hidden = parse_int_list(kv.get_string("hidden", ""));
    const cbd::TrainedCompleter model = cbd::train_completer(dataset, cfg);
    const std::string name = kv.get_string(
        "name", cfg.mask_mode == cbd::MaskMode::vanilla ? "completer_vanilla.ckpt"
                                                        : "completer.ckpt");
    cbd::save_completer(out_path(g, name), model);
    std::cout << "completer trained, final loss " << model.loss_curve.back() << ", saved "
              << name << "\n";
    return kExitOk;
  }
  if (component == "aligner") {
    cbd::AlignerTrainConfig cfg;
    cfg.train = base_train_config(kv, seed, 40);
    cfg.criterion = cbd::property_tag_from_name(kv.get_string("criterion", "return"));
    if (kv.has("hidden")) cfg.hidden = parse_int_list(kv.get_string("hidden", ""));
    const cbd::TrainedAligner model = cbd::train_aligner(dataset, cfg);
    const std::string name = kv.get_string("name", "aligner.ckpt");
    cbd::save_aligner(out_path(g, name), model.model);
    std::cout << "aligner trained (" << cbd::property_tag_name(cfg.criterion)
              << "), final loss " << model.loss_curve.back() << ", saved " << name << "\n";
    return kExitOk;
  }
  if (component == "idm") {
    cbd::IdmTrainConfig cfg;
    cfg.train = base_train_config(kv, seed, 30);
    cfg.window = static_cast<int>(kv.get_int("window", 3));
    if (kv.has("hidden")) cfg.hidden = parse_int_list(kv.get_string("hidden", ""));
    const cbd::TrainedIdm model = cbd::train_idm(dataset, cfg);
    const std::string name = kv.get_string("name", "idm.ckpt");
    cbd::save_idm(out_path(g, name), model.model);
    std::cout << "idm trained, final loss " << model.loss_curve.back() << ", saved " << name
              << "\n";
    return kExitOk;
  }
  throw cbd::ValidationError("unknown component: " + component);
}

// ---------------------------------------------------------------------------
// bundle

int cmd_bundle(const GlobalArgs& g, const std::string& completer, const std::string& aligner,
               const std::string& idm, const std::string& stats, double omega, double step_size,
               int rounds, double target_y, const std::string& align_mode, int candidates,
               const std::string& name) {
  cbd::AgentPolicy policy;
  policy.omega = omega;
  policy.refinement.step_size = step_size;
  policy.refinement.rounds = rounds;
  policy.target_y = target_y;
  policy.align_mode = cbd::align_mode_from_name(align_mode);
  policy.gs_candidates = candidates;
  // Load once to validate the pieces fit together.
  policy.completer = cbd::load_completer(completer);
  if (!aligner.empty()) policy.aligner = cbd::load_aligner(aligner);
  policy.idm = cbd::load_idm(idm);
  std::tie(policy.state_stats, policy.condition_stats) = cbd::load_stats_file(stats);
  policy.validate();

  const std::string path = out_path(g, name);
  const fs::path base = fs::path(path).parent_path();
  auto rel = [&](const std::string& p) {
    std::error_code ec;
    const fs::path r = fs::relative(p, base, ec);
    return ec ? p : r.string();
  };
  cbd::save_policy_bundle(path, policy, rel(completer), aligner.empty() ? "" : rel(aligner),
                          rel(idm), rel(stats));
  std::cout << "wrote bundle " << path << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate

int cmd_evaluate(const GlobalArgs& g, const std::string& bundle_path, const std::string& sim_path,
                 int episodes, double budget_frac) {
  const cbd::KvConfig kv = load_config(g);
  const std::uint64_t seed = effective_seed(g, kv);
  const cbd::AgentPolicy policy = cbd::load_policy_bundle(bundle_path);
  const cbd::SimConfig sim =
      sim_path.empty() ? cbd::SimConfig{} : cbd::SimConfig::from_file(sim_path);

  cbd::AblationConfig cfg;
  cfg.sim = sim;
  cfg.budget_fractions = {budget_frac};
  cfg.episodes = episodes;
  cfg.seed = seed;
  const std::vector<cbd::AblationRow> rows =
      cbd::ablation_run({{fs::path(bundle_path).stem().string(), policy}}, cfg);

  const std::string table = cbd::ablation_table_text(rows);
  cbd::write_file(out_path(g, "metrics.tsv"), table);
  std::cout << table;
  return kExitOk;
}

// ---------------------------------------------------------------------------
// ablate

int cmd_ablate(const GlobalArgs& g) {
  const cbd::KvConfig kv = load_config(g);
  if (g.config_path.empty()) throw cbd::ValidationError("ablate: --config is required");
  const std::uint64_t seed = effective_seed(g, kv);
  const fs::path base = fs::path(g.config_path).parent_path();
  auto resolve = [&](const std::string& p) {
    const fs::path c(p);
    return c.is_absolute() ? c.string() : (base / c).string();
  };

  cbd::AblationConfig cfg;
  cfg.seed = seed;
  cfg.episodes = static_cast<int>(kv.get_int("episodes", 20));
  if (kv.has("budgets")) cfg.budget_fractions = parse_double_list(kv.get_string("budgets", ""));
  if (kv.has("sim_config")) cfg.sim = cbd::SimConfig::from_file(resolve(kv.get_string("sim_config", "")));

  std::vector<cbd::AblationMode> modes;
  for (const std::string& mode : parse_string_list(kv.get_string("modes", ""))) {
    const std::string key = "bundle." + mode;
    if (!kv.has(key)) throw cbd::ValidationError("ablate: missing checkpoint bundle key " + key);
    modes.push_back({mode, cbd::load_policy_bundle(resolve(kv.get_string(key, "")))});
  }
  if (modes.empty()) throw cbd::ValidationError("ablate: no modes configured");

  const std::vector<cbd::AblationRow> rows = cbd::ablation_run(modes, cfg);
  const std::string table = cbd::ablation_table_text(rows);
  cbd::write_file(out_path(g, "ablation.tsv"), table);
  std::cout << table;
  return kExitOk;
}

// ---------------------------------------------------------------------------
// plot-emit

int cmd_plot_emit(const GlobalArgs& g, const std::string& dataset_path, const std::string& kind) {
  cbd::Dataset dataset = cbd::load_dataset(dataset_path);
  std::vector<cbd::Mat> states;
  states.reserve(dataset.size());
  for (const cbd::Trajectory& t : dataset.trajectories)
    states.push_back(dataset.normalized ? cbd::denormalize_states(t.states, dataset.state_stats)
                                        : t.states);
  const cbd::PlotKind pk = cbd::plot_kind_from_name(kind);
  const std::string text = cbd::emit_plot_data(states, pk);
  const std::string path = out_path(g, kind + ".tsv");
  cbd::write_file(path, text);
  std::cout << "wrote " << path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"diffusion completer-aligner auto-bidding pipeline"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--seed", g.seed, "global random seed")->each([&](const std::string&) {
    g.seed_given = true;
  });
  app.add_option("--config", g.config_path, "flat key-value config file");
  app.add_option("--out", g.out_dir, "output directory");

  auto* gen = app.add_subcommand("gen-data", "run scripted policies and write a dataset");

  auto* train = app.add_subcommand("train", "train a component from a dataset");
  std::string component, dataset_path;
  train->add_option("--component", component, "completer|aligner|idm")->required();
  train->add_option("--dataset", dataset_path, "dataset file")->required();

  auto* bundle = app.add_subcommand("bundle", "assemble a policy bundle manifest");
  std::string b_completer, b_aligner, b_idm, b_stats, b_align_mode = "gradient";
  std::string b_name = "policy.json";
  double b_omega = 1.0, b_step = 0.1, b_target = 0.9;
  int b_rounds = 1, b_candidates = 10;
  bundle->add_option("--completer", b_completer)->required();
  bundle->add_option("--aligner", b_aligner);
  bundle->add_option("--idm", b_idm)->required();
  bundle->add_option("--stats", b_stats)->required();
  bundle->add_option("--omega", b_omega, "guidance scale");
  bundle->add_option("--step-size", b_step, "refinement step size");
  bundle->add_option("--rounds", b_rounds, "refinement rounds");
  bundle->add_option("--target-return", b_target, "condition y on the normalized scale");
  bundle->add_option("--align-mode", b_align_mode, "none|gradient|gs_align");
  bundle->add_option("--candidates", b_candidates, "gs_align sample count");
  bundle->add_option("--name", b_name, "manifest file name");

  auto* eval = app.add_subcommand("evaluate", "run a policy bundle in the simulator");
  std::string e_bundle, e_sim;
  int e_episodes = 20;
  double e_budget = 1.0;
  eval->add_option("--bundle", e_bundle)->required();
  eval->add_option("--sim-config", e_sim, "simulator config file");
  eval->add_option("--episodes", e_episodes);
  eval->add_option("--budget-frac", e_budget, "budget scale factor");

  auto* ablate = app.add_subcommand("ablate", "compare modes over budgets");

  auto* plot = app.add_subcommand("plot-emit", "emit columnar plot data");
  std::string p_dataset, p_kind = "budget_curve";
  plot->add_option("--dataset", p_dataset)->required();
  plot->add_option("--kind", p_kind, "budget_curve|smoothness_hist|spendup_hist");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(g);
    if (train->parsed()) return cmd_train(g, component, dataset_path);
    if (bundle->parsed())
      return cmd_bundle(g, b_completer, b_aligner, b_idm, b_stats, b_omega, b_step, b_rounds,
                        b_target, b_align_mode, b_candidates, b_name);
    if (eval->parsed()) return cmd_evaluate(g, e_bundle, e_sim, e_episodes, e_budget);
    if (ablate->parsed()) return cmd_ablate(g);
    if (plot->parsed()) return cmd_plot_emit(g, p_dataset, p_kind);
  } catch (const cbd::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const cbd::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitOk;
}
