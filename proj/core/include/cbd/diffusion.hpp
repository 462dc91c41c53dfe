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
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cbd/net.hpp"
#include "cbd/rng.hpp"
#include "cbd/trajectory.hpp"

namespace cbd {

// Flat layout of a (T+1) x D trajectory tensor, position-major.
struct TrajLayout {
  int T = 48;
  int D = kStateDim;

  int positions() const { return T + 1; }
  int size() const { return (T + 1) * D; }
  int flat(int pos, int d) const { return pos * D + d; }
};

Vec flatten_states(const Mat& states);
Mat unflatten_states(const Vec& flat, const TrajLayout& layout);

enum class SigmaMode : std::uint32_t {
  variance = 0,  // sigma_k = sqrt(1 - alpha_k)
  literal = 1,   // sigma_k = 1 - alpha_k
};

// Per-step noise levels for K diffusion steps; index with 1-based k.
struct NoiseSchedule {
  int K = 0;
  Vec alpha;
  Vec alpha_bar;
  Vec sigma;
  SigmaMode mode = SigmaMode::variance;

  double a(int k) const;
  double abar(int k) const;
  double sig(int k) const;
  void validate() const;
};

// Linear beta schedule: beta spaced over [beta_start, beta_end],
// alpha_k = 1 - beta_k, alpha_bar cumulative.
NoiseSchedule build_schedule(int K, double beta_start, double beta_end,
                             SigmaMode mode = SigmaMode::variance);

// Closed-form forward noising: sqrt(abar_k) x0 + sqrt(1 - abar_k) eps.
Vec forward_noise(const Vec& x0, int k, const Vec& eps, const NoiseSchedule& schedule);

// Query construction: positions 0..t take the observed states verbatim,
// positions t+1..T come from the noisy tensor.
Vec build_query_input(const Vec& x_noisy, const Mat& observed, int t, const TrajLayout& layout);

struct PredictorConfig {
  int T = 48;
  int D = kStateDim;
  int window = 2;           // half-width of the per-position input window
  int k_embed_dim = 16;     // sinusoidal, even
  int pos_embed_dim = 8;    // sinusoidal, even
  int cond_embed_dim = 8;   // output of the condition projection
  std::vector<int> cond_hidden = {32};
  std::vector<int> hidden = {128, 128};
  Activation act = Activation::silu;
  double p_drop = 0.1;

  TrajLayout layout() const { return TrajLayout{T, D}; }
  int window_positions() const { return 2 * window + 1; }
  // Per-position trunk input: state window + k/pos embeddings +
  // condition embedding + drop flag.
  int trunk_input_dim() const {
    return window_positions() * D + k_embed_dim + pos_embed_dim + cond_embed_dim + 1;
  }
  void validate() const;
};

// eps_theta over (noisy trajectory, step k, condition y, drop flag).
// A dropped condition feeds a zero embedding and raises the flag input.
//
// One trunk network is shared across the T+1 positions, each seeing a
// clamped window of neighboring states plus step/position embeddings;
// weight sharing over time is what the paper-scale temporal U-Net
// provides and is essential for sample efficiency at this scale.
//
// The prediction is a fixed passthrough sqrt(1 - abar_k) * x plus the
// learned residual: the passthrough carries the component of eps that
// is proportional to x_k, so with a zero-initialized head the
// untrained reverse process is exactly contractive.
class NoisePredictor {
 public:
  NoisePredictor() = default;
  NoisePredictor(const PredictorConfig& cfg, std::uint64_t seed);
  NoisePredictor(const PredictorConfig& cfg, std::uint64_t seed, const NoiseSchedule& schedule);
  NoisePredictor(PredictorConfig cfg, Network cond_net, Network trunk,
                 Vec passthrough = Vec());

  // sqrt(1 - abar_k), or 0 when the passthrough is disabled.
  double passthrough_scale(int k) const;
  bool has_passthrough() const { return passthrough_.size() > 0; }

  // Per-feature sampling bounds (normalized units). When set, every
  // denoise step clamps the tensor to the training-data range, the
  // usual clip-denoised sampling of decision diffusers.
  void set_clip_bounds(const Vec& lo, const Vec& hi);
  bool has_clip() const { return clip_lo_.size() > 0; }
  const Vec& clip_lo() const { return clip_lo_; }
  const Vec& clip_hi() const { return clip_hi_; }

  const PredictorConfig& config() const { return cfg_; }
  const Network& trunk() const { return trunk_; }
  Network& trunk() { return trunk_; }
  const Network& cond_net() const { return cond_net_; }
  Network& cond_net() { return cond_net_; }

  Vec k_embedding(int k) const;
  Vec pos_embedding(int p) const;
  // Trunk input column for one position of one sample.
  Vec assemble_position_input(const Vec& x_flat, int p, const Vec& k_emb,
                              const Vec& cond_emb, bool dropped) const;

  Vec predict(const Vec& x_flat, int k, std::optional<double> y) const;
  // Predictions for many trajectories at the same step k (one column
  // each); the workhorse behind generate_batch.
  Mat predict_columns(const Mat& x_cols, int k, std::optional<double> y) const;

  struct Backprop {
    Gradients trunk;
    Gradients cond;
    bool cond_used = false;
  };
  // Gradients of <upstream, prediction> w.r.t. both networks' parameters.
  Backprop backprop(const Vec& x_flat, int k, std::optional<double> y,
                    const Vec& upstream) const;

 private:
  PredictorConfig cfg_;
  Network cond_net_;  // scalar y -> cond_embed_dim
  Network trunk_;     // shared per-position network
  Vec passthrough_;   // per-k scale; empty = residual only
  Vec clip_lo_, clip_hi_;  // per-feature, empty = no clipping
};

// Classifier-free guidance: eps_u + omega (eps_c - eps_u). omega = 1
// and omega = 0 short-circuit to the single matching branch.
Vec guided_epsilon(const NoisePredictor& predictor, const Vec& x_flat, int k,
                   double y, double omega);

// One reverse step: mu + sigma_k z, with z forced to zero at k = 1.
Vec denoise_step(const Vec& x_flat, int k, const Vec& eps_hat, const NoiseSchedule& schedule,
                 const Vec& z);

// Full completion: noise-padded query, K denoise steps, prefix re-pinned
// after every step. Observed states are in normalized space.
Mat generate(const NoisePredictor& predictor, const NoiseSchedule& schedule,
             const Mat& observed, double y, double omega, Rng& rng);

// Bulk variant: n completions of the same query in one pass. Noise is
// drawn sample-major, so the stream advances deterministically.
std::vector<Mat> generate_batch(const NoisePredictor& predictor, const NoiseSchedule& schedule,
                                const Mat& observed, double y, double omega, Rng& rng, int n);

enum class MaskMode : std::uint32_t { completion = 0, vanilla = 1 };

// Per-sample randomness for the completion loss, pre-drawable so two
// loss implementations can be compared on identical draws.
struct CompletionDraw {
  int k = 1;
  int t = 0;
  Vec eps;
  bool drop = false;
};

CompletionDraw draw_completion(Rng& rng, const TrajLayout& layout, int K, double p_drop);

// Mean squared error over positions >= mask_start, with its gradient
// w.r.t. the prediction (exactly zero at positions < mask_start).
std::pair<double, Vec> masked_mse(const Vec& pred, const Vec& eps, int mask_start,
                                  const TrajLayout& layout);

struct CompletionBatchItem {
  Vec x0;  // flattened normalized states
  double y = 0.0;
};

struct CompletionLossResult {
  double loss = 0.0;
  NoisePredictor::Backprop grads;
};

CompletionLossResult completion_loss(const NoisePredictor& predictor,
                                     const std::vector<CompletionBatchItem>& batch,
                                     const NoiseSchedule& schedule, MaskMode mode,
                                     const std::vector<CompletionDraw>& draws);
CompletionLossResult completion_loss(const NoisePredictor& predictor,
                                     const std::vector<CompletionBatchItem>& batch,
                                     const NoiseSchedule& schedule, MaskMode mode, Rng& rng);

struct TrainConfig {
  int epochs = 60;
  int batch_size = 64;
  double lr = 1e-3;
  double lr_final_scale = 0.1;  // linear warmdown to lr * scale
  int grad_accum = 1;           // micro-batches accumulated per optimizer step
  std::uint64_t seed = 1;

  double lr_at(int epoch) const {
    if (epochs <= 1) return lr;
    const double f = static_cast<double>(epoch) / (epochs - 1);
    return lr * (1.0 + f * (lr_final_scale - 1.0));
  }
};

struct CompleterTrainConfig {
  TrainConfig train;
  MaskMode mask_mode = MaskMode::completion;
  PredictorConfig predictor;
  int K = 100;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
  SigmaMode sigma_mode = SigmaMode::variance;
};

struct TrainedCompleter {
  NoisePredictor predictor;
  NoiseSchedule schedule;
  MaskMode mask_mode = MaskMode::completion;
  std::vector<double> loss_curve;  // per-epoch mean loss
};

// Epoch loop over shuffled batches with Adam; throws NumericError with
// diagnostics if the loss diverges.
TrainedCompleter train_completer(const Dataset& dataset, const CompleterTrainConfig& cfg);

// Checkpoint: completer header (schedule + dims) followed by two
// embedded network blocks.
void save_completer(const std::string& path, const TrainedCompleter& model);
TrainedCompleter load_completer(const std::string& path);

}  // namespace cbd
