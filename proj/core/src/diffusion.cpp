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

#include "cbd/diffusion.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <mutex>
#include <thread>

#include "cbd/error.hpp"
#include "cbd/io_util.hpp"
#include "cbd/threading.hpp"

namespace cbd {

int default_thread_count() {
  if (const char* env = std::getenv("CBD_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_chunks(std::size_t n_items, std::size_t n_chunks,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn,
                     int threads) {
  if (n_items == 0) return;
  n_chunks = std::min(n_chunks, n_items);
  auto bounds = [&](std::size_t c) {
    return std::pair{c * n_items / n_chunks, (c + 1) * n_items / n_chunks};
  };
  int workers = threads > 0 ? threads : default_thread_count();
  workers = std::min<int>(workers, static_cast<int>(n_chunks));
  if (workers <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) {
      auto [b, e] = bounds(c);
      fn(c, b, e);
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t c = next.fetch_add(1);
        if (c >= n_chunks) return;
        auto [b, e] = bounds(c);
        try {
          fn(c, b, e);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

Vec flatten_states(const Mat& states) {
  Vec flat(states.size());
  for (Eigen::Index r = 0; r < states.rows(); ++r)
    for (Eigen::Index c = 0; c < states.cols(); ++c) flat[r * states.cols() + c] = states(r, c);
  return flat;
}

Mat unflatten_states(const Vec& flat, const TrajLayout& layout) {
  if (flat.size() != layout.size()) throw ShapeError("unflatten_states: size mismatch");
  Mat states(layout.positions(), layout.D);
  for (int r = 0; r < layout.positions(); ++r)
    for (int c = 0; c < layout.D; ++c) states(r, c) = flat[layout.flat(r, c)];
  return states;
}

double NoiseSchedule::a(int k) const {
  if (k < 1 || k > K) throw ValidationError("NoiseSchedule: k out of range");
  return alpha[k - 1];
}
double NoiseSchedule::abar(int k) const {
  if (k < 1 || k > K) throw ValidationError("NoiseSchedule: k out of range");
  return alpha_bar[k - 1];
}
double NoiseSchedule::sig(int k) const {
  if (k < 1 || k > K) throw ValidationError("NoiseSchedule: k out of range");
  return sigma[k - 1];
}

void NoiseSchedule::validate() const {
  if (K < 1 || alpha.size() != K || alpha_bar.size() != K || sigma.size() != K)
    throw ValidationError("NoiseSchedule: inconsistent sizes");
  double prod = 1.0;
  for (int i = 0; i < K; ++i) {
    if (!(alpha[i] > 0.0 && alpha[i] < 1.0))
      throw ValidationError("NoiseSchedule: alpha out of (0,1)");
    prod *= alpha[i];
    if (std::abs(alpha_bar[i] - prod) > 1e-12)
      throw ValidationError("NoiseSchedule: alpha_bar is not the running product");
    if (i > 0 && !(alpha_bar[i] < alpha_bar[i - 1]))
      throw ValidationError("NoiseSchedule: alpha_bar not strictly decreasing");
  }
}

NoiseSchedule build_schedule(int K, double beta_start, double beta_end, SigmaMode mode) {
  if (K < 1) throw ValidationError("build_schedule: K must be positive");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw ValidationError("build_schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.K = K;
  s.mode = mode;
  s.alpha = Vec(K);
  s.alpha_bar = Vec(K);
  s.sigma = Vec(K);
  double prod = 1.0;
  for (int i = 0; i < K; ++i) {
    const double beta =
        K == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (K - 1.0);
    s.alpha[i] = 1.0 - beta;
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
    s.sigma[i] = mode == SigmaMode::variance ? std::sqrt(1.0 - s.alpha[i]) : 1.0 - s.alpha[i];
  }
  s.validate();
  return s;
}

Vec forward_noise(const Vec& x0, int k, const Vec& eps, const NoiseSchedule& schedule) {
  if (eps.size() != x0.size()) throw ShapeError("forward_noise: eps/x0 size mismatch");
  const double abar = schedule.abar(k);
  return std::sqrt(abar) * x0 + std::sqrt(1.0 - abar) * eps;
}

namespace {

// Positions 0..t replaced by the clean flat prefix.
Vec splice_prefix(const Vec& x_noisy, const Vec& clean_flat, int t, const TrajLayout& layout) {
  Vec out = x_noisy;
  out.head(static_cast<Eigen::Index>(t + 1) * layout.D) =
      clean_flat.head(static_cast<Eigen::Index>(t + 1) * layout.D);
  return out;
}

Vec sincos_embedding(double value, int dim) {
  const int half = dim / 2;
  Vec emb(dim);
  for (int i = 0; i < half; ++i) {
    const double freq =
        half == 1 ? 1.0 : std::exp(-std::log(10000.0) * static_cast<double>(i) / (half - 1));
    emb[2 * i] = std::sin(value * freq);
    emb[2 * i + 1] = std::cos(value * freq);
  }
  return emb;
}

}  // namespace

Vec build_query_input(const Vec& x_noisy, const Mat& observed, int t, const TrajLayout& layout) {
  if (t < 0 || t > layout.T - 1) throw ValidationError("build_query_input: t out of range");
  if (x_noisy.size() != layout.size()) throw ShapeError("build_query_input: noisy size mismatch");
  if (observed.rows() != t + 1 || observed.cols() != layout.D)
    throw ShapeError("build_query_input: observed must be (t+1) x D");
  Vec out = x_noisy;
  for (int r = 0; r <= t; ++r)
    for (int c = 0; c < layout.D; ++c) out[layout.flat(r, c)] = observed(r, c);
  return out;
}

void PredictorConfig::validate() const {
  if (T < 1 || D < 1) throw ValidationError("PredictorConfig: bad trajectory dims");
  if (window < 0) throw ValidationError("PredictorConfig: window must be >= 0");
  if (k_embed_dim < 2 || k_embed_dim % 2 != 0)
    throw ValidationError("PredictorConfig: k_embed_dim must be even and >= 2");
  if (pos_embed_dim < 2 || pos_embed_dim % 2 != 0)
    throw ValidationError("PredictorConfig: pos_embed_dim must be even and >= 2");
  if (cond_embed_dim < 1) throw ValidationError("PredictorConfig: cond_embed_dim must be >= 1");
  if (!(p_drop >= 0.0 && p_drop < 1.0))
    throw ValidationError("PredictorConfig: p_drop must be in [0, 1)");
}

NoisePredictor::NoisePredictor(const PredictorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  cond_net_ = Network::mlp(1, cfg_.cond_hidden, cfg_.cond_embed_dim, cfg_.act,
                           Rng::derive_seed(seed, 1));
  trunk_ = Network::mlp(cfg_.trunk_input_dim(), cfg_.hidden, cfg_.D, cfg_.act,
                        Rng::derive_seed(seed, 2));
  // Zero final layer: the untrained residual is exactly zero.
  trunk_.zero_output_layer();
}

NoisePredictor::NoisePredictor(const PredictorConfig& cfg, std::uint64_t seed,
                               const NoiseSchedule& schedule)
    : NoisePredictor(cfg, seed) {
  passthrough_ = (1.0 - schedule.alpha_bar.array()).sqrt();
}

NoisePredictor::NoisePredictor(PredictorConfig cfg, Network cond_net, Network trunk,
                               Vec passthrough)
    : cfg_(std::move(cfg)),
      cond_net_(std::move(cond_net)),
      trunk_(std::move(trunk)),
      passthrough_(std::move(passthrough)) {
  cfg_.validate();
  if (trunk_.input_dim() != cfg_.trunk_input_dim() || trunk_.output_dim() != cfg_.D)
    throw ShapeError("NoisePredictor: trunk dims do not match config");
  if (cond_net_.input_dim() != 1 || cond_net_.output_dim() != cfg_.cond_embed_dim)
    throw ShapeError("NoisePredictor: condition net dims do not match config");
}

void NoisePredictor::set_clip_bounds(const Vec& lo, const Vec& hi) {
  if (lo.size() != cfg_.D || hi.size() != cfg_.D)
    throw ShapeError("set_clip_bounds: bounds must be per-feature");
  for (Eigen::Index d = 0; d < lo.size(); ++d)
    if (!(lo[d] <= hi[d])) throw ValidationError("set_clip_bounds: lo > hi");
  clip_lo_ = lo;
  clip_hi_ = hi;
}

double NoisePredictor::passthrough_scale(int k) const {
  if (passthrough_.size() == 0) return 0.0;
  if (k < 1 || k > passthrough_.size())
    throw ValidationError("NoisePredictor: k outside the schedule");
  return passthrough_[k - 1];
}

Vec NoisePredictor::k_embedding(int k) const {
  if (k < 1) throw ValidationError("k_embedding: k must be >= 1");
  return sincos_embedding(static_cast<double>(k), cfg_.k_embed_dim);
}

Vec NoisePredictor::pos_embedding(int p) const {
  if (p < 0 || p > cfg_.T) throw ValidationError("pos_embedding: position out of range");
  return sincos_embedding(static_cast<double>(p), cfg_.pos_embed_dim);
}

Vec NoisePredictor::assemble_position_input(const Vec& x_flat, int p, const Vec& k_emb,
                                            const Vec& cond_emb, bool dropped) const {
  const TrajLayout layout = cfg_.layout();
  if (x_flat.size() != layout.size())
    throw ShapeError("NoisePredictor: trajectory size mismatch");
  Vec col = Vec::Zero(cfg_.trunk_input_dim());
  const int w = cfg_.window;
  for (int o = -w; o <= w; ++o) {
    const int src = std::clamp(p + o, 0, cfg_.T);  // edge positions repeat
    col.segment(static_cast<Eigen::Index>(o + w) * cfg_.D, cfg_.D) =
        x_flat.segment(static_cast<Eigen::Index>(src) * cfg_.D, cfg_.D);
  }
  Eigen::Index off = static_cast<Eigen::Index>(cfg_.window_positions()) * cfg_.D;
  col.segment(off, cfg_.k_embed_dim) = k_emb;
  off += cfg_.k_embed_dim;
  col.segment(off, cfg_.pos_embed_dim) = pos_embedding(p);
  off += cfg_.pos_embed_dim;
  if (!dropped) col.segment(off, cfg_.cond_embed_dim) = cond_emb;
  col[cfg_.trunk_input_dim() - 1] = dropped ? 1.0 : 0.0;
  return col;
}

Mat NoisePredictor::predict_columns(const Mat& x_cols, int k, std::optional<double> y) const {
  const TrajLayout layout = cfg_.layout();
  if (x_cols.rows() != layout.size())
    throw ShapeError("NoisePredictor: trajectory size mismatch");
  const Eigen::Index n = x_cols.cols();
  const int P = layout.positions();
  const Vec k_emb = k_embedding(k);
  const Vec cond_emb =
      y.has_value() ? cond_net_.forward(Vec::Constant(1, *y)) : Vec::Zero(cfg_.cond_embed_dim);

  Mat cols(cfg_.trunk_input_dim(), n * P);
  for (Eigen::Index s = 0; s < n; ++s) {
    const Vec x = x_cols.col(s);
    for (int p = 0; p < P; ++p)
      cols.col(s * P + p) = assemble_position_input(x, p, k_emb, cond_emb, !y.has_value());
  }
  const Mat out = forward_batch(trunk_, cols);  // D x (n*P)
  Mat eps(layout.size(), n);
  for (Eigen::Index s = 0; s < n; ++s)
    for (int p = 0; p < P; ++p)
      eps.col(s).segment(static_cast<Eigen::Index>(p) * cfg_.D, cfg_.D) = out.col(s * P + p);
  if (passthrough_.size() > 0) eps += passthrough_scale(k) * x_cols;
  return eps;
}

Vec NoisePredictor::predict(const Vec& x_flat, int k, std::optional<double> y) const {
  return predict_columns(x_flat, k, y).col(0);
}

NoisePredictor::Backprop NoisePredictor::backprop(const Vec& x_flat, int k,
                                                  std::optional<double> y,
                                                  const Vec& upstream) const {
  const TrajLayout layout = cfg_.layout();
  if (upstream.size() != layout.size()) throw ShapeError("backprop: upstream size mismatch");
  const int P = layout.positions();
  const Vec k_emb = k_embedding(k);
  const Vec cond_emb =
      y.has_value() ? cond_net_.forward(Vec::Constant(1, *y)) : Vec::Zero(cfg_.cond_embed_dim);

  Mat cols(cfg_.trunk_input_dim(), P);
  for (int p = 0; p < P; ++p)
    cols.col(p) = assemble_position_input(x_flat, p, k_emb, cond_emb, !y.has_value());

  Backprop bp;
  const BatchBackward bb = backward_batch(trunk_, cols, [&](const Mat& outputs) {
    Mat up(outputs.rows(), outputs.cols());
    for (int p = 0; p < P; ++p)
      up.col(p) = upstream.segment(static_cast<Eigen::Index>(p) * cfg_.D, cfg_.D);
    return up;
  });
  bp.trunk = bb.grads;

  // Gradient w.r.t. the flat trajectory: window slices plus passthrough.
  bp.trunk.input = Vec::Zero(layout.size());
  const int w = cfg_.window;
  for (int p = 0; p < P; ++p)
    for (int o = -w; o <= w; ++o) {
      const int src = std::clamp(p + o, 0, cfg_.T);
      bp.trunk.input.segment(static_cast<Eigen::Index>(src) * cfg_.D, cfg_.D) +=
          bb.input_grads.col(p).segment(static_cast<Eigen::Index>(o + w) * cfg_.D, cfg_.D);
    }
  if (passthrough_.size() > 0) bp.trunk.input += passthrough_scale(k) * upstream;

  if (y.has_value()) {
    const Eigen::Index cond_off = static_cast<Eigen::Index>(cfg_.window_positions()) * cfg_.D +
                                  cfg_.k_embed_dim + cfg_.pos_embed_dim;
    Vec cond_upstream = Vec::Zero(cfg_.cond_embed_dim);
    for (int p = 0; p < P; ++p)
      cond_upstream += bb.input_grads.col(p).segment(cond_off, cfg_.cond_embed_dim);
    bp.cond = backward(cond_net_, Vec::Constant(1, *y), cond_upstream);
    bp.cond_used = true;
  } else {
    bp.cond = Gradients::zeros_like(cond_net_);
  }
  return bp;
}

Vec guided_epsilon(const NoisePredictor& predictor, const Vec& x_flat, int k, double y,
                   double omega) {
  if (omega == 1.0) return predictor.predict(x_flat, k, y);
  if (omega == 0.0) return predictor.predict(x_flat, k, std::nullopt);
  const Vec eps_u = predictor.predict(x_flat, k, std::nullopt);
  const Vec eps_c = predictor.predict(x_flat, k, y);
  return eps_u + omega * (eps_c - eps_u);
}

Vec denoise_step(const Vec& x_flat, int k, const Vec& eps_hat, const NoiseSchedule& schedule,
                 const Vec& z) {
  if (k < 1) throw ValidationError("denoise_step: k must be >= 1");
  if (eps_hat.size() != x_flat.size()) throw ShapeError("denoise_step: eps size mismatch");
  const double alpha = schedule.a(k);
  const double abar = schedule.abar(k);
  const Vec mu = (x_flat - ((1.0 - alpha) / std::sqrt(1.0 - abar)) * eps_hat) / std::sqrt(alpha);
  if (k == 1) return mu;  // z forced to zero on the final step
  if (z.size() != x_flat.size()) throw ShapeError("denoise_step: z size mismatch");
  return mu + schedule.sig(k) * z;
}

std::vector<Mat> generate_batch(const NoisePredictor& predictor, const NoiseSchedule& schedule,
                                const Mat& observed, double y, double omega, Rng& rng, int n) {
  if (n < 1) throw ValidationError("generate_batch: n must be >= 1");
  const PredictorConfig& cfg = predictor.config();
  const TrajLayout layout = cfg.layout();
  const int t = static_cast<int>(observed.rows()) - 1;
  if (t < 0 || t > layout.T - 1)
    throw ValidationError("generate_batch: observed prefix out of range");
  if (observed.cols() != layout.D) throw ShapeError("generate_batch: feature dim mismatch");
  const Vec observed_flat = flatten_states(observed);
  const Eigen::Index prefix = static_cast<Eigen::Index>(t + 1) * layout.D;

  Mat x(layout.size(), n);
  for (int c = 0; c < n; ++c)
    for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, c) = rng.normal();
  for (int c = 0; c < n; ++c) x.col(c).head(prefix) = observed_flat.head(prefix);

  for (int k = schedule.K; k >= 1; --k) {
    Mat eps_hat;
    if (omega == 1.0) {
      eps_hat = predictor.predict_columns(x, k, y);
    } else if (omega == 0.0) {
      eps_hat = predictor.predict_columns(x, k, std::nullopt);
    } else {
      const Mat eps_c = predictor.predict_columns(x, k, y);
      const Mat eps_u = predictor.predict_columns(x, k, std::nullopt);
      eps_hat = eps_u + omega * (eps_c - eps_u);
    }
    const double alpha = schedule.a(k);
    const double abar = schedule.abar(k);
    const double coeff = (1.0 - alpha) / std::sqrt(1.0 - abar);
    x = (x - coeff * eps_hat) / std::sqrt(alpha);
    if (k > 1) {
      const double sig = schedule.sig(k);
      for (int c = 0; c < n; ++c)
        for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, c) += sig * rng.normal();
    }
    if (predictor.has_clip()) {
      const Vec& lo = predictor.clip_lo();
      const Vec& hi = predictor.clip_hi();
      for (int c = 0; c < n; ++c)
        for (int p = 0; p < layout.positions(); ++p)
          for (int d = 0; d < layout.D; ++d) {
            double& v = x(layout.flat(p, d), c);
            v = std::clamp(v, lo[d], hi[d]);
          }
    }
    for (int c = 0; c < n; ++c) x.col(c).head(prefix) = observed_flat.head(prefix);
    if (!x.allFinite())
      throw NumericError("generate: non-finite values at denoise step k=" + std::to_string(k));
  }
  std::vector<Mat> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int c = 0; c < n; ++c) out.push_back(unflatten_states(x.col(c), layout));
  return out;
}

Mat generate(const NoisePredictor& predictor, const NoiseSchedule& schedule, const Mat& observed,
             double y, double omega, Rng& rng) {
  return generate_batch(predictor, schedule, observed, y, omega, rng, 1)[0];
}

CompletionDraw draw_completion(Rng& rng, const TrajLayout& layout, int K, double p_drop) {
  CompletionDraw d;
  d.k = static_cast<int>(rng.uniform_int(1, K));
  d.t = static_cast<int>(rng.uniform_int(0, layout.T - 1));
  d.eps = Vec(layout.size());
  for (Eigen::Index i = 0; i < d.eps.size(); ++i) d.eps[i] = rng.normal();
  d.drop = rng.bernoulli(p_drop);
  return d;
}

std::pair<double, Vec> masked_mse(const Vec& pred, const Vec& eps, int mask_start,
                                  const TrajLayout& layout) {
  if (pred.size() != layout.size() || eps.size() != layout.size())
    throw ShapeError("masked_mse: size mismatch");
  if (mask_start < 0 || mask_start > layout.T)
    throw ValidationError("masked_mse: mask_start out of range");
  const Eigen::Index begin = static_cast<Eigen::Index>(mask_start) * layout.D;
  const Eigen::Index count = layout.size() - begin;
  double loss = 0.0;
  Vec grad = Vec::Zero(layout.size());
  for (Eigen::Index i = begin; i < layout.size(); ++i) {
    const double diff = pred[i] - eps[i];
    loss += diff * diff;
    grad[i] = 2.0 * diff / static_cast<double>(count);
  }
  return {loss / static_cast<double>(count), grad};
}

namespace {

void accumulate_backprop(NoisePredictor::Backprop& into, const NoisePredictor::Backprop& from) {
  into.trunk.accumulate(from.trunk);
  into.cond.accumulate(from.cond);
  into.cond_used = into.cond_used || from.cond_used;
}

NoisePredictor::Backprop zero_backprop(const NoisePredictor& p) {
  NoisePredictor::Backprop bp;
  bp.trunk = Gradients::zeros_like(p.trunk());
  bp.cond = Gradients::zeros_like(p.cond_net());
  return bp;
}

}  // namespace

CompletionLossResult completion_loss(const NoisePredictor& predictor,
                                     const std::vector<CompletionBatchItem>& batch,
                                     const NoiseSchedule& schedule, MaskMode mode,
                                     const std::vector<CompletionDraw>& draws) {
  if (batch.empty()) throw ValidationError("completion_loss: empty batch");
  if (draws.size() != batch.size())
    throw ShapeError("completion_loss: draw count != batch size");
  const PredictorConfig& cfg = predictor.config();
  const TrajLayout layout = cfg.layout();
  const int P = layout.positions();

  constexpr std::size_t kChunks = 8;
  const std::size_t n_chunks = std::min<std::size_t>(kChunks, batch.size());
  std::vector<double> chunk_loss(n_chunks, 0.0);
  std::vector<NoisePredictor::Backprop> chunk_grads(n_chunks);
  parallel_chunks(batch.size(), n_chunks, [&](std::size_t c, std::size_t b, std::size_t e) {
    const Eigen::Index m = static_cast<Eigen::Index>(e - b);
    std::vector<Vec> x_ins(static_cast<std::size_t>(m));
    std::vector<int> mask_start(static_cast<std::size_t>(m), 0);
    std::vector<Eigen::Index> cond_samples;

    // Condition embeddings for the non-dropped samples, batched.
    for (Eigen::Index s = 0; s < m; ++s)
      if (!draws[b + static_cast<std::size_t>(s)].drop) cond_samples.push_back(s);
    Mat cond_inputs(1, static_cast<Eigen::Index>(cond_samples.size()));
    for (std::size_t i = 0; i < cond_samples.size(); ++i)
      cond_inputs(0, static_cast<Eigen::Index>(i)) =
          batch[b + static_cast<std::size_t>(cond_samples[i])].y;
    Mat cond_out;
    if (!cond_samples.empty()) cond_out = forward_batch(predictor.cond_net(), cond_inputs);
    std::vector<Vec> cond_embs(static_cast<std::size_t>(m),
                               Vec::Zero(cfg.cond_embed_dim));
    for (std::size_t i = 0; i < cond_samples.size(); ++i)
      cond_embs[static_cast<std::size_t>(cond_samples[i])] =
          cond_out.col(static_cast<Eigen::Index>(i));

    Mat cols(cfg.trunk_input_dim(), m * P);
    for (Eigen::Index s = 0; s < m; ++s) {
      const CompletionBatchItem& item = batch[b + static_cast<std::size_t>(s)];
      const CompletionDraw& d = draws[b + static_cast<std::size_t>(s)];
      if (item.x0.size() != layout.size())
        throw ShapeError("completion_loss: trajectory size mismatch");
      const Vec x_k = forward_noise(item.x0, d.k, d.eps, schedule);
      const bool spliced = mode == MaskMode::completion;
      x_ins[static_cast<std::size_t>(s)] =
          spliced ? splice_prefix(x_k, item.x0, d.t, layout) : x_k;
      mask_start[static_cast<std::size_t>(s)] = spliced ? d.t + 1 : 0;
      const Vec k_emb = predictor.k_embedding(d.k);
      for (int p = 0; p < P; ++p)
        cols.col(s * P + p) = predictor.assemble_position_input(
            x_ins[static_cast<std::size_t>(s)], p, k_emb,
            cond_embs[static_cast<std::size_t>(s)], d.drop);
    }

    double loss_sum = 0.0;
    Mat upstream_cols;  // kept for the condition-net pass
    const BatchBackward bb =
        backward_batch(predictor.trunk(), cols, [&](const Mat& outputs) {
          Mat up(outputs.rows(), outputs.cols());
          for (Eigen::Index s = 0; s < m; ++s) {
            const CompletionDraw& d = draws[b + static_cast<std::size_t>(s)];
            Vec pred(layout.size());
            for (int p = 0; p < P; ++p)
              pred.segment(static_cast<Eigen::Index>(p) * cfg.D, cfg.D) =
                  outputs.col(s * P + p);
            if (predictor.has_passthrough())
              pred += predictor.passthrough_scale(d.k) * x_ins[static_cast<std::size_t>(s)];
            auto [loss, dpred] =
                masked_mse(pred, d.eps, mask_start[static_cast<std::size_t>(s)], layout);
            loss_sum += loss;
            for (int p = 0; p < P; ++p)
              up.col(s * P + p) = dpred.segment(static_cast<Eigen::Index>(p) * cfg.D, cfg.D);
          }
          return up;
        });

    NoisePredictor::Backprop acc;
    acc.trunk = bb.grads;
    if (!cond_samples.empty()) {
      const Eigen::Index cond_off = static_cast<Eigen::Index>(cfg.window_positions()) * cfg.D +
                                    cfg.k_embed_dim + cfg.pos_embed_dim;
      Mat cond_up =
          Mat::Zero(cfg.cond_embed_dim, static_cast<Eigen::Index>(cond_samples.size()));
      for (std::size_t i = 0; i < cond_samples.size(); ++i) {
        const Eigen::Index s = cond_samples[i];
        for (int p = 0; p < P; ++p)
          cond_up.col(static_cast<Eigen::Index>(i)) +=
              bb.input_grads.col(s * P + p).segment(cond_off, cfg.cond_embed_dim);
      }
      acc.cond = backward_batch(predictor.cond_net(), cond_inputs,
                                [&](const Mat&) { return cond_up; })
                     .grads;
      acc.cond_used = true;
    } else {
      acc.cond = Gradients::zeros_like(predictor.cond_net());
    }
    chunk_loss[c] = loss_sum;
    chunk_grads[c] = std::move(acc);
  });

  CompletionLossResult out;
  out.grads = zero_backprop(predictor);
  for (std::size_t c = 0; c < n_chunks; ++c) {
    out.loss += chunk_loss[c];
    accumulate_backprop(out.grads, chunk_grads[c]);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  out.grads.trunk.scale(inv);
  out.grads.cond.scale(inv);
  return out;
}

CompletionLossResult completion_loss(const NoisePredictor& predictor,
                                     const std::vector<CompletionBatchItem>& batch,
                                     const NoiseSchedule& schedule, MaskMode mode, Rng& rng) {
  std::vector<CompletionDraw> draws;
  draws.reserve(batch.size());
  const TrajLayout layout = predictor.config().layout();
  for (std::size_t i = 0; i < batch.size(); ++i)
    draws.push_back(draw_completion(rng, layout, schedule.K, predictor.config().p_drop));
  return completion_loss(predictor, batch, schedule, mode, draws);
}

TrainedCompleter train_completer(const Dataset& dataset, const CompleterTrainConfig& cfg) {
  if (dataset.empty()) throw ValidationError("train_completer: empty dataset");
  if (!dataset.normalized)
    throw ValidationError("train_completer: dataset must be normalized first");
  PredictorConfig pcfg = cfg.predictor;
  pcfg.T = dataset.T;
  pcfg.D = dataset.D;
  pcfg.validate();

  TrainedCompleter model;
  model.schedule = build_schedule(cfg.K, cfg.beta_start, cfg.beta_end, cfg.sigma_mode);
  model.predictor =
      NoisePredictor(pcfg, Rng::derive_seed(cfg.train.seed, 101), model.schedule);
  model.mask_mode = cfg.mask_mode;
  {
    Vec lo = Vec::Constant(dataset.D, std::numeric_limits<double>::infinity());
    Vec hi = Vec::Constant(dataset.D, -std::numeric_limits<double>::infinity());
    for (const Trajectory& t : dataset.trajectories)
      for (Eigen::Index r = 0; r < t.states.rows(); ++r)
        for (int d = 0; d < dataset.D; ++d) {
          lo[d] = std::min(lo[d], t.states(r, d));
          hi[d] = std::max(hi[d], t.states(r, d));
        }
    model.predictor.set_clip_bounds(lo, hi);
  }

  std::vector<CompletionBatchItem> items;
  items.reserve(dataset.size());
  for (const Trajectory& t : dataset.trajectories)
    items.push_back({flatten_states(t.states), t.y});

  Rng rng(Rng::derive_seed(cfg.train.seed, 202));
  AdamConfig adam;
  adam.lr = cfg.train.lr;
  OptimizerState trunk_state = OptimizerState::init(model.predictor.trunk(), adam);
  OptimizerState cond_state = OptimizerState::init(model.predictor.cond_net(), adam);

  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const int bs = std::max(1, cfg.train.batch_size);
  const int accum = std::max(1, cfg.train.grad_accum);

  NoisePredictor::Backprop pending = zero_backprop(model.predictor);
  int pending_count = 0;
  auto flush = [&]() {
    if (pending_count == 0) return;
    pending.trunk.scale(1.0 / pending_count);
    pending.cond.scale(1.0 / pending_count);
    adam_step(model.predictor.trunk(), pending.trunk, trunk_state);
    adam_step(model.predictor.cond_net(), pending.cond, cond_state);
    pending = zero_backprop(model.predictor);
    pending_count = 0;
  };

  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    trunk_state.cfg.lr = cfg.train.lr_at(epoch);
    cond_state.cfg.lr = cfg.train.lr_at(epoch);
    // Fisher-Yates with the training stream.
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b < items.size(); b += static_cast<std::size_t>(bs)) {
      const std::size_t e = std::min(items.size(), b + static_cast<std::size_t>(bs));
      std::vector<CompletionBatchItem> batch;
      batch.reserve(e - b);
      for (std::size_t i = b; i < e; ++i) batch.push_back(items[order[i]]);
      const CompletionLossResult res =
          completion_loss(model.predictor, batch, model.schedule, cfg.mask_mode, rng);
      if (!std::isfinite(res.loss))
        throw NumericError("train_completer: loss diverged at epoch " + std::to_string(epoch) +
                           " batch " + std::to_string(batches));
      epoch_loss += res.loss;
      ++batches;
      accumulate_backprop(pending, res.grads);
      ++pending_count;
      if (pending_count == accum) flush();
    }
    flush();
    model.loss_curve.push_back(epoch_loss / std::max(1, batches));
  }
  return model;
}

namespace {
constexpr char kCompleterMagic[4] = {'C', 'B', 'D', 'C'};
constexpr std::uint32_t kCompleterVersion = 1;
}  // namespace

void save_completer(const std::string& path, const TrainedCompleter& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write checkpoint: " + path);
  out.write(kCompleterMagic, 4);
  write_u32(out, kCompleterVersion);
  write_u32(out, static_cast<std::uint32_t>(model.mask_mode));
  const PredictorConfig& p = model.predictor.config();
  write_u32(out, static_cast<std::uint32_t>(p.T));
  write_u32(out, static_cast<std::uint32_t>(p.D));
  write_u32(out, static_cast<std::uint32_t>(p.window));
  write_u32(out, static_cast<std::uint32_t>(p.k_embed_dim));
  write_u32(out, static_cast<std::uint32_t>(p.pos_embed_dim));
  write_u32(out, static_cast<std::uint32_t>(p.cond_embed_dim));
  write_u32(out, static_cast<std::uint32_t>(p.act));
  write_f64(out, p.p_drop);
  write_u32(out, model.predictor.has_passthrough() ? 1u : 0u);
  write_u32(out, model.predictor.has_clip() ? 1u : 0u);
  if (model.predictor.has_clip()) {
    write_f64_array(out, model.predictor.clip_lo().data(),
                    static_cast<std::size_t>(model.predictor.clip_lo().size()));
    write_f64_array(out, model.predictor.clip_hi().data(),
                    static_cast<std::size_t>(model.predictor.clip_hi().size()));
  }
  write_u32(out, static_cast<std::uint32_t>(model.schedule.K));
  write_u32(out, static_cast<std::uint32_t>(model.schedule.mode));
  write_f64_array(out, model.schedule.alpha.data(),
                  static_cast<std::size_t>(model.schedule.alpha.size()));
  save_network(out, model.predictor.cond_net());
  save_network(out, model.predictor.trunk());
}

TrainedCompleter load_completer(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kCompleterMagic, 4) != 0)
    throw FormatError(FormatError::Code::bad_magic, "not a completer checkpoint");
  if (read_u32(in) != kCompleterVersion)
    throw FormatError(FormatError::Code::version_mismatch, "unsupported completer version");
  TrainedCompleter model;
  model.mask_mode = static_cast<MaskMode>(read_u32(in));
  PredictorConfig p;
  p.T = static_cast<int>(read_u32(in));
  p.D = static_cast<int>(read_u32(in));
  p.window = static_cast<int>(read_u32(in));
  p.k_embed_dim = static_cast<int>(read_u32(in));
  p.pos_embed_dim = static_cast<int>(read_u32(in));
  p.cond_embed_dim = static_cast<int>(read_u32(in));
  p.act = static_cast<Activation>(read_u32(in));
  p.p_drop = read_f64(in);
  const bool passthrough = read_u32(in) != 0;
  const bool has_clip = read_u32(in) != 0;
  Vec clip_lo, clip_hi;
  if (has_clip) {
    const std::vector<double> lo = read_f64_array(in);
    const std::vector<double> hi = read_f64_array(in);
    clip_lo = Eigen::Map<const Vec>(lo.data(), static_cast<Eigen::Index>(lo.size()));
    clip_hi = Eigen::Map<const Vec>(hi.data(), static_cast<Eigen::Index>(hi.size()));
  }
  const int K = static_cast<int>(read_u32(in));
  const SigmaMode mode = static_cast<SigmaMode>(read_u32(in));
  const std::vector<double> alpha = read_f64_array(in);
  if (static_cast<int>(alpha.size()) != K)
    throw FormatError(FormatError::Code::malformed, "completer: schedule length mismatch");
  NoiseSchedule& s = model.schedule;
  s.K = K;
  s.mode = mode;
  s.alpha = Eigen::Map<const Vec>(alpha.data(), K);
  s.alpha_bar = Vec(K);
  s.sigma = Vec(K);
  double prod = 1.0;
  for (int i = 0; i < K; ++i) {
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
    s.sigma[i] = mode == SigmaMode::variance ? std::sqrt(1.0 - s.alpha[i]) : 1.0 - s.alpha[i];
  }
  s.validate();
  Network cond = load_network(in);
  Network trunk = load_network(in);
  Vec pass;
  if (passthrough) pass = (1.0 - s.alpha_bar.array()).sqrt();
  model.predictor = NoisePredictor(p, std::move(cond), std::move(trunk), std::move(pass));
  if (has_clip) model.predictor.set_clip_bounds(clip_lo, clip_hi);
  return model;
}

}  // namespace cbd
