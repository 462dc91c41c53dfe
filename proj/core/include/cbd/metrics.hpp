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

#include "cbd/agent.hpp"
#include "cbd/auction.hpp"
#include "cbd/trajectory.hpp"

namespace cbd {

// Per-impression outcome record; the brute-force view of Eq.-style
// metrics with J constraints.
struct ImpressionOutcome {
  bool won = false;
  double value = 0.0;
  Vec costs;  // c_{ij} per constraint
  Vec perfs;  // p_{ij} per constraint
};

// Total value: sum of o_i v_i.
double value_metric(const std::vector<ImpressionOutcome>& ledger);
double value_metric(const std::vector<IntervalLedger>& ledger);

// Exceeding rate: (1/J) sum_j (realized unit cost_j / C_j). Throws
// ValidationError when any constraint has zero won performance.
double exceed_rate(const std::vector<ImpressionOutcome>& ledger, const Vec& caps);
double exceed_rate(double cost, double conversions, double cap);

// penalty_j = min{(C_j / realized_j)^beta, 1}; score = value * min_j penalty_j.
double score_metric(const std::vector<ImpressionOutcome>& ledger, const Vec& caps,
                    double beta = 2.0);
double score_metric(double value, double cost, double conversions, double cap, double beta = 2.0);

struct EpisodeMetrics {
  double value = 0.0;
  std::optional<double> er;  // empty when no conversions
  double score = 0.0;        // 0 with flag on zero conversions
  bool zero_conversions = false;
};

EpisodeMetrics episode_metrics(const EpisodeRunResult& result);

// Fraction of trajectories whose budget feature is monotone
// non-increasing (within tol_frac of the initial budget) and
// non-negative. Trajectories must be denormalized.
bool budget_legitimate(const Mat& states, double tol_frac = 1e-6);
double validity(const std::vector<Mat>& trajectories, double tol_frac = 1e-6);

// First state index where at least `spent_frac` of the initial budget is
// gone; T when the budget is never used up.
int spendup_timestep(const Mat& states, double spent_frac = 0.95);

// Ablation harness: every mode runs the same seeded episodes at every
// budget fraction.
struct AblationMode {
  std::string name;
  AgentPolicy policy;
};

struct AblationConfig {
  SimConfig sim;
  std::vector<double> budget_fractions = {0.5, 0.75, 1.0, 1.25, 1.5};
  int episodes = 20;
  std::uint64_t seed = 1;
  bool record_generations = true;
};

struct AblationRow {
  std::string mode;
  double budget_fraction = 1.0;
  int episodes = 0;
  double value_mean = 0.0;
  double value_se = 0.0;
  double er_mean = 0.0;
  double er_se = 0.0;
  double score_mean = 0.0;
  double score_se = 0.0;
  double validity = 0.0;
  int zero_conversion_episodes = 0;
};

std::vector<AblationRow> ablation_run(const std::vector<AblationMode>& modes,
                                      const AblationConfig& cfg);
std::string ablation_table_text(const std::vector<AblationRow>& rows);

// Columnar plot data. Empty input produces a header-only file.
enum class PlotKind { budget_curve, smoothness_hist, spendup_hist };
PlotKind plot_kind_from_name(const std::string& name);
std::string emit_plot_data(const std::vector<Mat>& trajectories, PlotKind kind, int bins = 30);

// Mean and standard error of a sample.
std::pair<double, double> mean_and_se(const std::vector<double>& xs);

}  // namespace cbd
