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

#include "cbd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cbd/error.hpp"
#include "cbd/io_util.hpp"
#include "cbd/threading.hpp"

namespace cbd {

double value_metric(const std::vector<ImpressionOutcome>& ledger) {
  double v = 0.0;
  for (const auto& imp : ledger)
    if (imp.won) v += imp.value;
  return v;
}

double value_metric(const std::vector<IntervalLedger>& ledger) {
  double v = 0.0;
  for (const auto& row : ledger) v += row.won_value;
  return v;
}

namespace {

// Realized unit cost per constraint over the won set.
Vec realized_unit_costs(const std::vector<ImpressionOutcome>& ledger, Eigen::Index J) {
  Vec cost = Vec::Zero(J);
  Vec perf = Vec::Zero(J);
  for (const auto& imp : ledger) {
    if (!imp.won) continue;
    if (imp.costs.size() != J || imp.perfs.size() != J)
      throw ShapeError("metrics: constraint dim mismatch");
    cost += imp.costs;
    perf += imp.perfs;
  }
  Vec realized(J);
  for (Eigen::Index j = 0; j < J; ++j) {
    if (!(perf[j] > 0.0))
      throw ValidationError("exceed_rate: zero won performance for constraint " +
                            std::to_string(j));
    realized[j] = cost[j] / perf[j];
  }
  return realized;
}

}  // namespace

double exceed_rate(const std::vector<ImpressionOutcome>& ledger, const Vec& caps) {
  const Eigen::Index J = caps.size();
  if (J < 1) throw ValidationError("exceed_rate: needs at least one constraint");
  const Vec realized = realized_unit_costs(ledger, J);
  double er = 0.0;
  for (Eigen::Index j = 0; j < J; ++j) er += realized[j] / caps[j];
  return er / static_cast<double>(J);
}

double exceed_rate(double cost, double conversions, double cap) {
  if (!(conversions > 0.0)) throw ValidationError("exceed_rate: zero conversions");
  return (cost / conversions) / cap;
}

double score_metric(const std::vector<ImpressionOutcome>& ledger, const Vec& caps, double beta) {
  const Eigen::Index J = caps.size();
  if (J < 1) throw ValidationError("score: needs at least one constraint");
  const Vec realized = realized_unit_costs(ledger, J);
  double min_penalty = 1.0;
  for (Eigen::Index j = 0; j < J; ++j) {
    const double penalty = std::min(std::pow(caps[j] / realized[j], beta), 1.0);
    min_penalty = std::min(min_penalty, penalty);
  }
  return value_metric(ledger) * min_penalty;
}

double score_metric(double value, double cost, double conversions, double cap, double beta) {
  if (!(conversions > 0.0)) throw ValidationError("score: zero conversions");
  const double realized = cost / conversions;
  const double penalty = std::min(std::pow(cap / realized, beta), 1.0);
  return value * penalty;
}

EpisodeMetrics episode_metrics(const EpisodeRunResult& result) {
  EpisodeMetrics m;
  m.value = result.total_value;
  if (result.conversions > 0) {
    const double conv = static_cast<double>(result.conversions);
    m.er = exceed_rate(result.total_cost, conv, result.cpa_target);
    m.score = score_metric(result.total_value, result.total_cost, conv, result.cpa_target);
  } else {
    // ER undefined; the episode scores 0 with the flag raised.
    m.zero_conversions = true;
    m.score = 0.0;
  }
  return m;
}

bool budget_legitimate(const Mat& states, double tol_frac) {
  const Eigen::Index n = states.rows();
  if (n < 2) throw ShapeError("budget_legitimate: need at least two states");
  const double scale = std::max(std::abs(states(0, kBudgetFeature)), 1e-12);
  const double tol = tol_frac * scale;
  for (Eigen::Index t = 0; t < n; ++t) {
    const double b = states(t, kBudgetFeature);
    if (b < -tol) return false;
    if (t + 1 < n && states(t + 1, kBudgetFeature) > b + tol) return false;
  }
  return true;
}

double validity(const std::vector<Mat>& trajectories, double tol_frac) {
  if (trajectories.empty()) return 0.0;
  std::size_t ok = 0;
  for (const Mat& m : trajectories)
    if (budget_legitimate(m, tol_frac)) ++ok;
  return static_cast<double>(ok) / static_cast<double>(trajectories.size());
}

int spendup_timestep(const Mat& states, double spent_frac) {
  const int T = static_cast<int>(states.rows()) - 1;
  const double b0 = states(0, kBudgetFeature);
  if (!(b0 > 0.0)) return T;
  const double threshold = (1.0 - spent_frac) * b0;
  for (int t = 0; t <= T; ++t)
    if (states(t, kBudgetFeature) <= threshold) return t;
  return T;
}

std::pair<double, double> mean_and_se(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() == 1) return {mean, 0.0};
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size() - 1);
  return {mean, std::sqrt(var / static_cast<double>(xs.size()))};
}

std::vector<AblationRow> ablation_run(const std::vector<AblationMode>& modes,
                                      const AblationConfig& cfg) {
  if (modes.empty()) throw ValidationError("ablation_run: no modes");
  if (cfg.episodes < 1) throw ValidationError("ablation_run: episodes must be >= 1");
  for (const AblationMode& m : modes) m.policy.validate();

  std::vector<AblationRow> rows;
  for (const AblationMode& mode : modes) {
    for (double frac : cfg.budget_fractions) {
      std::vector<EpisodeMetrics> metrics(static_cast<std::size_t>(cfg.episodes));
      std::vector<double> episode_validity(static_cast<std::size_t>(cfg.episodes), 0.0);
      RunOptions opts;
      opts.record_generations = cfg.record_generations;
      parallel_chunks(
          static_cast<std::size_t>(cfg.episodes), 8,
          [&](std::size_t, std::size_t begin, std::size_t end) {
            for (std::size_t e = begin; e < end; ++e) {
              // Episode seeds depend only on (seed, episode): identical
              // draws for every mode and budget fraction.
              const std::uint64_t ep_seed = Rng::derive_seed(cfg.seed, e);
              Rng adv_rng(Rng::derive_seed(ep_seed, 1));
              AdvertiserConfig adv = sample_advertiser(cfg.sim, adv_rng);
              adv.budget *= frac;
              Episode env(cfg.sim, adv, Rng::derive_seed(ep_seed, 2));
              Rng policy_rng(Rng::derive_seed(ep_seed, 3));
              const EpisodeRunResult result =
                  run_episode(mode.policy, env, policy_rng, opts);
              metrics[e] = episode_metrics(result);
              if (cfg.record_generations && !result.generations.empty())
                episode_validity[e] = validity(result.generations);
            }
          });

      AblationRow row;
      row.mode = mode.name;
      row.budget_fraction = frac;
      row.episodes = cfg.episodes;
      std::vector<double> values, ers, scores;
      double validity_sum = 0.0;
      for (const EpisodeMetrics& m : metrics) {
        values.push_back(m.value);
        scores.push_back(m.score);
        if (m.er.has_value())
          ers.push_back(*m.er);
        else
          row.zero_conversion_episodes += 1;
      }
      for (double v : episode_validity) validity_sum += v;
      std::tie(row.value_mean, row.value_se) = mean_and_se(values);
      std::tie(row.er_mean, row.er_se) = mean_and_se(ers);
      std::tie(row.score_mean, row.score_se) = mean_and_se(scores);
      row.validity = cfg.record_generations
                         ? validity_sum / static_cast<double>(cfg.episodes)
                         : 0.0;
      rows.push_back(row);
    }
  }
  return rows;
}

std::string ablation_table_text(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "mode\tbudget\tepisodes\tvalue_mean\tvalue_se\ter_mean\ter_se\t"
         "score_mean\tscore_se\tvalidity\tzero_conv\n";
  for (const AblationRow& r : rows) {
    out << r.mode << '\t' << format_double(r.budget_fraction) << '\t' << r.episodes << '\t'
        << format_double(r.value_mean) << '\t' << format_double(r.value_se) << '\t'
        << format_double(r.er_mean) << '\t' << format_double(r.er_se) << '\t'
        << format_double(r.score_mean) << '\t' << format_double(r.score_se) << '\t'
        << format_double(r.validity) << '\t' << r.zero_conversion_episodes << '\n';
  }
  return out.str();
}

PlotKind plot_kind_from_name(const std::string& name) {
  if (name == "budget_curve") return PlotKind::budget_curve;
  if (name == "smoothness_hist") return PlotKind::smoothness_hist;
  if (name == "spendup_hist") return PlotKind::spendup_hist;
  throw ValidationError("unknown plot kind: " + name);
}

namespace {

std::string histogram_text(const std::vector<double>& xs, int bins, const char* value_name) {
  std::ostringstream out;
  out << "bin_lo\tbin_hi\tcount\t# " << value_name << "\n";
  if (xs.empty()) return out.str();
  double lo = xs[0], hi = xs[0];
  for (double x : xs) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (hi <= lo) hi = lo + 1e-12;
  std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
  for (double x : xs) {
    auto b = static_cast<std::size_t>((x - lo) / (hi - lo) * bins);
    if (b >= counts.size()) b = counts.size() - 1;
    counts[b] += 1;
  }
  for (int b = 0; b < bins; ++b) {
    const double bin_lo = lo + (hi - lo) * b / bins;
    const double bin_hi = lo + (hi - lo) * (b + 1) / bins;
    out << format_double(bin_lo) << '\t' << format_double(bin_hi) << '\t'
        << counts[static_cast<std::size_t>(b)] << '\n';
  }
  return out.str();
}

}  // namespace

std::string emit_plot_data(const std::vector<Mat>& trajectories, PlotKind kind, int bins) {
  if (bins < 1) throw ValidationError("emit_plot_data: bins must be >= 1");
  std::ostringstream out;
  switch (kind) {
    case PlotKind::budget_curve: {
      out << "trajectory\tt\tbudget_left\n";
      for (std::size_t i = 0; i < trajectories.size(); ++i)
        for (Eigen::Index t = 0; t < trajectories[i].rows(); ++t)
          out << i << '\t' << t << '\t' << format_double(trajectories[i](t, kBudgetFeature))
              << '\n';
      return out.str();
    }
    case PlotKind::smoothness_hist: {
      std::vector<double> vars;
      vars.reserve(trajectories.size());
      for (const Mat& m : trajectories) vars.push_back(spend_variance(m));
      return histogram_text(vars, bins, "spend variance");
    }
    case PlotKind::spendup_hist: {
      out << "t\tcount\t# budget used-up timestep\n";
      if (trajectories.empty()) return out.str();
      const int T = static_cast<int>(trajectories[0].rows()) - 1;
      std::vector<std::size_t> counts(static_cast<std::size_t>(T + 1), 0);
      for (const Mat& m : trajectories)
        counts[static_cast<std::size_t>(spendup_timestep(m))] += 1;
      for (int t = 0; t <= T; ++t) out << t << '\t' << counts[static_cast<std::size_t>(t)] << '\n';
      return out.str();
    }
  }
  throw ValidationError("unknown plot kind");
}

}  // namespace cbd
