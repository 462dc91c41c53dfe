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

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace cbd {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class Activation : std::uint32_t { identity = 0, relu = 1, tanh = 2, silu = 3 };

double activate(Activation act, double z);
double activate_grad(Activation act, double z);

// One affine layer followed by an elementwise activation.
struct Layer {
  Mat weight;  // out x in
  Vec bias;    // out
  Activation act = Activation::identity;
};

/// Feed-forward network. Immutable during inference; training mutates
/// parameters under a single-writer contract.
class Network {
 public:
  Network() = default;
  explicit Network(std::vector<Layer> layers);

  // Kaiming-style fan-in uniform init (W ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
  // zero bias), deterministic per seed.
  static Network mlp(int input_dim, const std::vector<int>& hidden, int output_dim,
                     Activation hidden_act, std::uint64_t seed,
                     Activation output_act = Activation::identity);

  int input_dim() const { return input_dim_; }
  int output_dim() const { return output_dim_; }
  bool empty() const { return layers_.empty(); }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  Vec forward(const Vec& input) const;

  std::size_t param_count() const;
  void check_finite() const;  // throws NumericError on NaN/Inf parameters

  // Zeroes the final affine layer; used by the noise predictor so the
  // initial prediction is exactly zero.
  void zero_output_layer();

 private:
  std::vector<Layer> layers_;
  int input_dim_ = 0;
  int output_dim_ = 0;
};

// Per-parameter gradients plus the gradient w.r.t. the network input.
struct Gradients {
  std::vector<Mat> weight;
  std::vector<Vec> bias;
  Vec input;

  static Gradients zeros_like(const Network& net);
  void accumulate(const Gradients& other);
  void scale(double s);
  double squared_norm() const;
};

Gradients backward(const Network& net, const Vec& input, const Vec& upstream);

// Batched fast path: one column per sample. Parameter gradients come
// out summed over the batch; `input_grads` is per-column.
Mat forward_batch(const Network& net, const Mat& inputs);

struct BatchBackward {
  Gradients grads;  // summed over columns
  Mat input_grads;
};

// Single forward pass with cached activations; `upstream_of` maps the
// output matrix to the upstream gradient matrix (same shape).
BatchBackward backward_batch(const Network& net, const Mat& inputs,
                             const std::function<Mat(const Mat&)>& upstream_of);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment accumulators shaped like the network parameters.
struct OptimizerState {
  std::vector<Mat> m_weight, v_weight;
  std::vector<Vec> m_bias, v_bias;
  std::int64_t step = 0;
  AdamConfig cfg;

  static OptimizerState init(const Network& net, const AdamConfig& cfg);
};

// Standard bias-corrected Adam. Throws NumericError (and leaves net and
// state untouched) if any gradient entry is non-finite.
void adam_step(Network& net, const Gradients& grads, OptimizerState& state);

// Scalar loss defined on the network output, with its output-gradient.
struct OutputLoss {
  std::function<double(const Vec&)> value;
  std::function<Vec(const Vec&)> grad;
};

// Central finite differences over every parameter; returns
// max_p |analytic - numeric| / (|numeric| + 1e-8).
double finite_diff_check(const Network& net, const Vec& input, const OutputLoss& loss,
                         double epsilon);

// Parameter checkpoint: magic "CBDW", version u32, layer count u32, then
// per-layer dims and little-endian 64-bit float arrays.
void save_network(std::ostream& out, const Network& net);
Network load_network(std::istream& in);
void save_network_file(const std::string& path, const Network& net);
Network load_network_file(const std::string& path);

}  // namespace cbd
