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

#include "cbd/auction.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cbd/error.hpp"
#include "cbd/io_util.hpp"

namespace cbd {

const char* const kFeatureNames[kStateDim] = {
    "time_left",
    "budget_left",
    "historical_bid_mean",
    "last_three_bid_mean",
    "historical_LeastWinningCost_mean",
    "historical_pValues_mean",
    "historical_conversion_mean",
    "historical_xi_mean",
    "last_three_LeastWinningCost_mean",
    "last_three_pValues_mean",
    "last_three_conversion_mean",
    "last_three_xi_mean",
    "current_pValues_mean",
    "current_pv_num",
    "last_three_pv_num_total",
    "historical_pv_num_total",
};

void AdvertiserConfig::validate() const {
  if (!(budget > 0.0) || !std::isfinite(budget))
    throw ValidationError("AdvertiserConfig: budget must be positive and finite");
  if (!(cpa_target > 0.0) || !std::isfinite(cpa_target))
    throw ValidationError("AdvertiserConfig: CPA target must be positive and finite");
}

SimConfig SimConfig::from_kv(const KvConfig& kv) {
  SimConfig c;
  c.T = static_cast<int>(kv.get_int("T", c.T));
  c.base_impressions = kv.get_double("base_impressions", c.base_impressions);
  c.count_jitter = kv.get_double("count_jitter", c.count_jitter);
  c.profile = kv.get_string("profile", c.profile);
  c.competitor_count = static_cast<int>(kv.get_int("competitor_count", c.competitor_count));
  c.sparse = kv.get_bool("sparse", c.sparse);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<std::int64_t>(c.seed)));
  c.value_alpha = kv.get_double("value_alpha", c.value_alpha);
  c.value_beta = kv.get_double("value_beta", c.value_beta);
  c.p_alpha = kv.get_double("p_alpha", c.p_alpha);
  c.p_beta = kv.get_double("p_beta", c.p_beta);
  c.sparse_p_scale = kv.get_double("sparse_p_scale", c.sparse_p_scale);
  c.budget_min = kv.get_double("budget_min", c.budget_min);
  c.budget_max = kv.get_double("budget_max", c.budget_max);
  c.cpa_min = kv.get_double("cpa_min", c.cpa_min);
  c.cpa_max = kv.get_double("cpa_max", c.cpa_max);
  c.sparse_cpa_scale = kv.get_double("sparse_cpa_scale", c.sparse_cpa_scale);
  c.comp_scale_min = kv.get_double("comp_scale_min", c.comp_scale_min);
  c.comp_scale_max = kv.get_double("comp_scale_max", c.comp_scale_max);
  c.comp_noise_sigma = kv.get_double("comp_noise_sigma", c.comp_noise_sigma);
  c.comp_budget_factor = kv.get_double("comp_budget_factor", c.comp_budget_factor);
  c.validate();
  return c;
}

SimConfig SimConfig::from_file(const std::string& path) {
  return from_kv(KvConfig::load(path));
}

std::string SimConfig::to_kv_text() const {
  std::ostringstream out;
  out << "T = " << T << "\n";
  out << "base_impressions = " << format_double(base_impressions) << "\n";
  out << "count_jitter = " << format_double(count_jitter) << "\n";
  out << "profile = " << profile << "\n";
  out << "competitor_count = " << competitor_count << "\n";
  out << "sparse = " << (sparse ? 1 : 0) << "\n";
  out << "seed = " << seed << "\n";
  out << "value_alpha = " << format_double(value_alpha) << "\n";
  out << "value_beta = " << format_double(value_beta) << "\n";
  out << "p_alpha = " << format_double(p_alpha) << "\n";
  out << "p_beta = " << format_double(p_beta) << "\n";
  out << "sparse_p_scale = " << format_double(sparse_p_scale) << "\n";
  out << "budget_min = " << format_double(budget_min) << "\n";
  out << "budget_max = " << format_double(budget_max) << "\n";
  out << "cpa_min = " << format_double(cpa_min) << "\n";
  out << "cpa_max = " << format_double(cpa_max) << "\n";
  out << "sparse_cpa_scale = " << format_double(sparse_cpa_scale) << "\n";
  out << "comp_scale_min = " << format_double(comp_scale_min) << "\n";
  out << "comp_scale_max = " << format_double(comp_scale_max) << "\n";
  out << "comp_noise_sigma = " << format_double(comp_noise_sigma) << "\n";
  out << "comp_budget_factor = " << format_double(comp_budget_factor) << "\n";
  return out.str();
}

void SimConfig::validate() const {
  if (T <= 0) throw ValidationError("SimConfig: T must be positive");
  if (base_impressions < 0.0) throw ValidationError("SimConfig: base_impressions < 0");
  if (competitor_count < 0) throw ValidationError("SimConfig: competitor_count < 0");
  if (profile != "bimodal" && profile != "uniform")
    throw ValidationError("SimConfig: unknown profile '" + profile + "'");
  if (!(budget_min > 0.0) || budget_max < budget_min)
    throw ValidationError("SimConfig: bad budget range");
  if (!(cpa_min > 0.0) || cpa_max < cpa_min) throw ValidationError("SimConfig: bad CPA range");
  if (!(value_alpha > 0.0) || !(value_beta > 0.0) || !(p_alpha > 0.0) || !(p_beta > 0.0))
    throw ValidationError("SimConfig: distribution parameters must be positive");
}

double SimConfig::intensity(int interval) const {
  if (profile == "uniform") return base_impressions;
  const double t = static_cast<double>(interval);
  const double morning = 0.8 * std::exp(-std::pow((t - 0.25 * T) / (0.12 * T), 2.0));
  const double evening = 1.0 * std::exp(-std::pow((t - 0.75 * T) / (0.15 * T), 2.0));
  return base_impressions * (0.55 + morning + evening);
}

double SimConfig::expected_total_value() const {
  double total = 0.0;
  for (int t = 0; t < T; ++t) total += intensity(t);
  return total * value_mean();
}

AdvertiserConfig sample_advertiser(const SimConfig& cfg, Rng& rng) {
  AdvertiserConfig adv;
  adv.budget = rng.uniform(cfg.budget_min, cfg.budget_max);
  adv.cpa_target = rng.uniform(cfg.cpa_min, cfg.cpa_max) * cfg.cpa_scale();
  adv.category = static_cast<int>(rng.uniform_int(0, 7));
  return adv;
}

std::vector<Impression> generate_impressions(Rng& rng, int interval, const SimConfig& cfg) {
  if (interval < 0 || interval >= cfg.T)
    throw ValidationError("generate_impressions: interval out of range");
  const double base = cfg.intensity(interval);
  long count = 0;
  if (base > 0.0) {
    const double jittered = base * (1.0 + cfg.count_jitter * rng.normal());
    count = std::lround(std::max(0.0, jittered));
  }
  std::vector<Impression> out;
  out.reserve(static_cast<std::size_t>(count));
  for (long i = 0; i < count; ++i) {
    Impression imp;
    imp.index = i;
    imp.interval = interval;
    imp.value = rng.beta(cfg.value_alpha, cfg.value_beta);
    imp.p_value = rng.beta(cfg.p_alpha, cfg.p_beta) * cfg.p_scale();
    out.push_back(imp);
  }
  return out;
}

AuctionOutcome run_auction(double our_bid, const std::vector<double>& competitor_bids) {
  if (!(our_bid >= 0.0)) throw ValidationError("run_auction: negative or NaN bid");
  AuctionOutcome out;
  if (competitor_bids.empty()) {
    out.won = true;
    return out;
  }
  double top = 0.0;
  double second = 0.0;
  for (double b : competitor_bids) {
    if (!(b >= 0.0)) throw ValidationError("run_auction: negative or NaN competitor bid");
    if (b > top) {
      second = top;
      top = b;
    } else if (b > second) {
      second = b;
    }
  }
  out.won = our_bid > top;
  if (out.won) {
    out.cost = top;
    out.least_winning_cost = top;  // highest losing bid
  } else {
    // A competitor holds the top bid; the best of the rest includes us.
    out.least_winning_cost = std::max(our_bid, second);
  }
  return out;
}

CompetitorPool CompetitorPool::sample(const SimConfig& cfg, Rng& rng) {
  CompetitorPool pool;
  pool.members.resize(static_cast<std::size_t>(cfg.competitor_count));
  const double mean_budget = 0.5 * (cfg.budget_min + cfg.budget_max);
  for (auto& c : pool.members) {
    c.scale = rng.uniform(cfg.comp_scale_min, cfg.comp_scale_max);
    c.noise_sigma = cfg.comp_noise_sigma;
    c.budget = mean_budget * cfg.comp_budget_factor * rng.uniform(0.6, 1.4);
  }
  return pool;
}

Episode::Episode(const SimConfig& sim, const AdvertiserConfig& adv, std::uint64_t seed)
    : sim_(sim), adv_(adv), rng_(seed) {
  sim_.validate();
  adv_.validate();
  pool_ = CompetitorPool::sample(sim_, rng_);
  remaining_budget_ = adv_.budget;
  ledger_.reserve(static_cast<std::size_t>(sim_.T));
}

void Episode::begin_interval() {
  if (done()) throw StateError("Episode::begin_interval: episode finished");
  if (interval_open_) throw StateError("Episode::begin_interval: interval already open");
  pending_ = generate_impressions(rng_, interval_, sim_);
  pending_comp_bids_.assign(pending_.size(), {});
  pending_conv_draws_.assign(pending_.size(), 0.0);
  for (std::size_t i = 0; i < pending_.size(); ++i) {
    auto& bids = pending_comp_bids_[i];
    bids.resize(pool_.members.size());
    for (std::size_t c = 0; c < pool_.members.size(); ++c) {
      const auto& comp = pool_.members[c];
      // Private per-competitor valuation, cheap right-skewed draw on [0,1].
      const double u = rng_.uniform();
      const double own_value = u * u;
      bids[c] = comp.scale * own_value * std::exp(comp.noise_sigma * rng_.normal());
    }
    // Pre-drawn so the stream position does not depend on auction outcomes.
    pending_conv_draws_[i] = rng_.uniform();
  }
  interval_open_ = true;
}

Episode::StepResult Episode::step(const BiddingParams& params) {
  if (done()) throw StateError("Episode::step: episode finished");
  if (!interval_open_) throw StateError("Episode::step: begin_interval not called");
  params.validate();
  if (params.constraint_count() > 1)
    throw ValidationError("Episode::step: simulator models a single CPA constraint");
  Vec caps(params.constraint_count());
  for (Eigen::Index j = 0; j < caps.size(); ++j) caps[j] = adv_.cpa_target;

  IntervalLedger row;
  row.pv_num = static_cast<int>(pending_.size());
  std::vector<double> effective_bids(pool_.members.size());
  for (std::size_t i = 0; i < pending_.size(); ++i) {
    const Impression& imp = pending_[i];
    row.pvalue_sum += imp.p_value;

    double our_bid = compute_bid(params, imp, caps);
    our_bid = remaining_budget_ > 0.0 ? std::min(our_bid, remaining_budget_) : 0.0;

    for (std::size_t c = 0; c < pool_.members.size(); ++c) {
      const double b = pending_comp_bids_[i][c];
      const double left = pool_.members[c].budget;
      effective_bids[c] = left > 0.0 ? std::min(b, left) : 0.0;
    }
    const AuctionOutcome outcome = run_auction(our_bid, effective_bids);
    row.bid_sum += our_bid;
    row.lwc_sum += outcome.least_winning_cost;
    if (outcome.won && our_bid > 0.0) {
      row.wins += 1;
      row.cost += outcome.cost;
      row.won_value += imp.value;
      remaining_budget_ -= outcome.cost;
      if (pending_conv_draws_[i] < imp.p_value) row.conversions += 1;
    } else if (!effective_bids.empty()) {
      // Charge the winning competitor the second price among the rest.
      std::size_t winner = 0;
      double top = -1.0;
      for (std::size_t c = 0; c < effective_bids.size(); ++c) {
        if (effective_bids[c] > top) {
          top = effective_bids[c];
          winner = c;
        }
      }
      if (top > 0.0) {
        double second = our_bid;
        for (std::size_t c = 0; c < effective_bids.size(); ++c)
          if (c != winner) second = std::max(second, effective_bids[c]);
        pool_.members[winner].budget -= second;
      }
    }
  }
  // Guard against accumulated rounding pushing past zero.
  remaining_budget_ = std::max(remaining_budget_, 0.0);

  ledger_.push_back(row);
  pending_.clear();
  pending_comp_bids_.clear();
  pending_conv_draws_.clear();
  interval_open_ = false;
  interval_ += 1;
  return StepResult{static_cast<double>(row.conversions), done()};
}

double Episode::total_cost() const {
  double c = 0.0;
  for (const auto& row : ledger_) c += row.cost;
  return c;
}

double Episode::total_won_value() const {
  double v = 0.0;
  for (const auto& row : ledger_) v += row.won_value;
  return v;
}

std::int64_t Episode::total_conversions() const {
  std::int64_t n = 0;
  for (const auto& row : ledger_) n += row.conversions;
  return n;
}

std::int64_t Episode::total_wins() const {
  std::int64_t n = 0;
  for (const auto& row : ledger_) n += row.wins;
  return n;
}

namespace {

double step_bid_mean(const IntervalLedger& r) {
  return r.pv_num > 0 ? r.bid_sum / r.pv_num : 0.0;
}
double step_lwc_mean(const IntervalLedger& r) {
  return r.pv_num > 0 ? r.lwc_sum / r.pv_num : 0.0;
}
double step_pvalue_mean(const IntervalLedger& r) {
  return r.pv_num > 0 ? r.pvalue_sum / r.pv_num : 0.0;
}
double step_xi_mean(const IntervalLedger& r) {
  return r.pv_num > 0 ? static_cast<double>(r.wins) / r.pv_num : 0.0;
}

}  // namespace

Vec featurize(const Episode& ep) {
  const auto& ledger = ep.ledger();
  const int t = ep.interval();
  const int lo3 = std::max(0, t - 3);

  auto mean_over = [&](int lo, int hi, auto&& fn) {
    if (hi <= lo) return 0.0;
    double sum = 0.0;
    for (int u = lo; u < hi; ++u) sum += fn(ledger[static_cast<std::size_t>(u)]);
    return sum / (hi - lo);
  };
  auto total_over = [&](int lo, int hi, auto&& fn) {
    double sum = 0.0;
    for (int u = lo; u < hi; ++u) sum += fn(ledger[static_cast<std::size_t>(u)]);
    return sum;
  };

  double current_p_mean = 0.0;
  double current_pv = 0.0;
  if (ep.interval_open() && !ep.current_impressions().empty()) {
    for (const Impression& imp : ep.current_impressions()) current_p_mean += imp.p_value;
    current_pv = static_cast<double>(ep.current_impressions().size());
    current_p_mean /= current_pv;
  }

  Vec f(kStateDim);
  f[0] = static_cast<double>(ep.horizon() - t);
  f[1] = ep.remaining_budget();
  f[2] = mean_over(0, t, step_bid_mean);
  f[3] = mean_over(lo3, t, step_bid_mean);
  f[4] = mean_over(0, t, step_lwc_mean);
  f[5] = mean_over(0, t, step_pvalue_mean);
  f[6] = mean_over(0, t, [](const IntervalLedger& r) { return double(r.conversions); });
  f[7] = mean_over(0, t, step_xi_mean);
  f[8] = mean_over(lo3, t, step_lwc_mean);
  f[9] = mean_over(lo3, t, step_pvalue_mean);
  f[10] = mean_over(lo3, t, [](const IntervalLedger& r) { return double(r.conversions); });
  f[11] = mean_over(lo3, t, step_xi_mean);
  f[12] = current_p_mean;
  f[13] = current_pv;
  f[14] = total_over(lo3, t, [](const IntervalLedger& r) { return double(r.pv_num); });
  f[15] = total_over(0, t, [](const IntervalLedger& r) { return double(r.pv_num); });
  return f;
}

}  // namespace cbd
