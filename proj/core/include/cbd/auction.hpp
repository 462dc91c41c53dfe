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

#include "cbd/bidding.hpp"
#include "cbd/net.hpp"
#include "cbd/rng.hpp"
#include "cbd/trajectory.hpp"

namespace cbd {

// One auctioned ad opportunity.
struct Impression {
  std::int64_t index = 0;
  double value = 0.0;    // v_i in [0,1]
  double p_value = 0.0;  // predicted conversion probability in [0,1]
  int interval = 0;
};

struct AdvertiserConfig {
  double budget = 300.0;
  double cpa_target = 4.0;
  int category = 0;

  void validate() const;
};

// Synthetic environment parameters. Loadable from a flat key-value file.
struct SimConfig {
  int T = 48;
  double base_impressions = 400.0;  // per-interval intensity scale
  double count_jitter = 0.05;
  std::string profile = "bimodal";  // or "uniform"
  int competitor_count = 8;
  bool sparse = false;
  std::uint64_t seed = 0;

  // Impression value / conversion-probability distributions.
  double value_alpha = 2.0;
  double value_beta = 5.0;
  double p_alpha = 2.0;
  double p_beta = 8.0;
  double sparse_p_scale = 0.1;

  // Advertiser sampling ranges.
  double budget_min = 250.0;
  double budget_max = 600.0;
  double cpa_min = 2.5;
  double cpa_max = 5.0;
  double sparse_cpa_scale = 10.0;

  // Scripted competitor bidders.
  double comp_scale_min = 0.8;
  double comp_scale_max = 1.6;
  double comp_noise_sigma = 0.25;
  double comp_budget_factor = 2.0;

  static SimConfig from_file(const std::string& path);
  static SimConfig from_kv(const class KvConfig& kv);
  std::string to_kv_text() const;
  void validate() const;

  // Relative traffic intensity of interval t; bimodal over the day.
  double intensity(int interval) const;
  // E[sum_i v_i] over a whole period, used by the pacing prior.
  double expected_total_value() const;
  double value_mean() const { return value_alpha / (value_alpha + value_beta); }
  double p_scale() const { return sparse ? sparse_p_scale : 1.0; }
  double cpa_scale() const { return sparse ? sparse_cpa_scale : 1.0; }
};

AdvertiserConfig sample_advertiser(const SimConfig& cfg, Rng& rng);

std::vector<Impression> generate_impressions(Rng& rng, int interval, const SimConfig& cfg);

struct AuctionOutcome {
  bool won = false;
  double cost = 0.0;
  double least_winning_cost = 0.0;
};

// Second-price clearing from the focal agent's view. Ties lose.
AuctionOutcome run_auction(double our_bid, const std::vector<double>& competitor_bids);

// N scripted value-scalers with lognormal bid noise and budgets.
struct CompetitorPool {
  struct Competitor {
    double scale = 1.0;
    double noise_sigma = 0.3;
    double budget = 0.0;
  };
  std::vector<Competitor> members;

  static CompetitorPool sample(const SimConfig& cfg, Rng& rng);
};

// Per-interval win/cost/conversion ledger row.
struct IntervalLedger {
  double bid_sum = 0.0;
  double lwc_sum = 0.0;
  double pvalue_sum = 0.0;
  double won_value = 0.0;
  double cost = 0.0;
  int pv_num = 0;
  int wins = 0;
  int conversions = 0;
};

// A single advertising delivery period. Strictly sequential:
// begin_interval() -> featurize() -> step(params), T times.
class Episode {
 public:
  Episode(const SimConfig& sim, const AdvertiserConfig& adv, std::uint64_t seed);

  // Generates the impressions (with competitor bids and conversion draws
  // pre-sampled) for the upcoming interval.
  void begin_interval();

  struct StepResult {
    double reward = 0.0;  // conversions gained in the interval
    bool done = false;
  };
  StepResult step(const BiddingParams& params);

  bool done() const { return interval_ >= sim_.T; }
  int interval() const { return interval_; }
  int horizon() const { return sim_.T; }
  double remaining_budget() const { return remaining_budget_; }
  const AdvertiserConfig& advertiser() const { return adv_; }
  const SimConfig& config() const { return sim_; }
  const std::vector<IntervalLedger>& ledger() const { return ledger_; }
  const std::vector<Impression>& current_impressions() const { return pending_; }
  bool interval_open() const { return interval_open_; }

  double total_cost() const;
  double total_won_value() const;
  std::int64_t total_conversions() const;
  std::int64_t total_wins() const;

 private:
  SimConfig sim_;
  AdvertiserConfig adv_;
  Rng rng_;
  CompetitorPool pool_;
  double remaining_budget_ = 0.0;
  int interval_ = 0;
  bool interval_open_ = false;
  std::vector<IntervalLedger> ledger_;
  std::vector<Impression> pending_;
  std::vector<std::vector<double>> pending_comp_bids_;  // per impression
  std::vector<double> pending_conv_draws_;
};

// The 16 state features, in canonical order.
Vec featurize(const Episode& ep);

extern const char* const kFeatureNames[kStateDim];

}  // namespace cbd
