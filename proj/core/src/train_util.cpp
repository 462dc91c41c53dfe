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

#include "train_util.hpp"

#include <algorithm>
#include <cmath>

#include "cbd/error.hpp"
#include "cbd/rng.hpp"
#include "cbd/threading.hpp"

namespace cbd::internal {

RegressionLoss regression_loss(const Network& net, const std::vector<RegressionSample>& batch) {
  if (batch.empty()) throw ValidationError("regression_loss: empty batch");

  constexpr std::size_t kChunks = 8;
  const std::size_t n_chunks = std::min<std::size_t>(kChunks, batch.size());
  std::vector<double> chunk_loss(n_chunks, 0.0);
  std::vector<Gradients> chunk_grads(n_chunks);
  parallel_chunks(batch.size(), n_chunks, [&](std::size_t c, std::size_t b, std::size_t e) {
    const Eigen::Index m = static_cast<Eigen::Index>(e - b);
    Mat inputs(net.input_dim(), m);
    Mat targets(net.output_dim(), m);
    for (Eigen::Index col = 0; col < m; ++col) {
      const RegressionSample& s = batch[b + static_cast<std::size_t>(col)];
      if (s.input.size() != net.input_dim() || s.target.size() != net.output_dim())
        throw ShapeError("regression_loss: sample dim mismatch");
      inputs.col(col) = s.input;
      targets.col(col) = s.target;
    }
    double loss_sum = 0.0;
    const BatchBackward bb = backward_batch(net, inputs, [&](const Mat& outputs) {
      const Mat diff = outputs - targets;
      for (Eigen::Index col = 0; col < m; ++col) loss_sum += diff.col(col).squaredNorm();
      return Mat(2.0 * diff);
    });
    chunk_loss[c] = loss_sum;
    chunk_grads[c] = bb.grads;
  });

  RegressionLoss out;
  out.grads = Gradients::zeros_like(net);
  for (std::size_t c = 0; c < n_chunks; ++c) {
    out.loss += chunk_loss[c];
    out.grads.accumulate(chunk_grads[c]);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  out.grads.scale(inv);
  return out;
}

std::vector<double> train_regression(Network& net, const std::vector<RegressionSample>& data,
                                     const TrainConfig& cfg, const std::string& what) {
  if (data.empty()) throw ValidationError(what + ": empty training data");
  Rng rng(Rng::derive_seed(cfg.seed, 303));
  AdamConfig adam;
  adam.lr = cfg.lr;
  OptimizerState state = OptimizerState::init(net, adam);

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const int bs = std::max(1, cfg.batch_size);
  const int accum = std::max(1, cfg.grad_accum);

  Gradients pending = Gradients::zeros_like(net);
  int pending_count = 0;
  auto flush = [&]() {
    if (pending_count == 0) return;
    pending.scale(1.0 / pending_count);
    adam_step(net, pending, state);
    pending = Gradients::zeros_like(net);
    pending_count = 0;
  };

  std::vector<double> curve;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    state.cfg.lr = cfg.lr_at(epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b < data.size(); b += static_cast<std::size_t>(bs)) {
      const std::size_t e = std::min(data.size(), b + static_cast<std::size_t>(bs));
      std::vector<RegressionSample> batch(data.begin() + static_cast<std::ptrdiff_t>(b),
                                          data.begin() + static_cast<std::ptrdiff_t>(e));
      for (std::size_t i = b; i < e; ++i) batch[i - b] = data[order[i]];
      const RegressionLoss res = regression_loss(net, batch);
      if (!std::isfinite(res.loss))
        throw NumericError(what + ": loss diverged at epoch " + std::to_string(epoch));
      epoch_loss += res.loss;
      ++batches;
      pending.accumulate(res.grads);
      ++pending_count;
      if (pending_count == accum) flush();
    }
    flush();
    curve.push_back(epoch_loss / std::max(1, batches));
  }
  return curve;
}

}  // namespace cbd::internal
