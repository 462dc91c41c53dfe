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

#include "cbd/net.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "cbd/error.hpp"
#include "cbd/io_util.hpp"
#include "cbd/rng.hpp"

namespace cbd {

namespace {
constexpr char kMagic[4] = {'C', 'B', 'D', 'W'};
constexpr std::uint32_t kVersion = 1;

void require_finite(const Vec& v, const char* what) {
  if (!v.allFinite()) throw ValidationError(std::string(what) + ": non-finite values");
}
}  // namespace

double activate(Activation act, double z) {
  switch (act) {
    case Activation::identity:
      return z;
    case Activation::relu:
      return z > 0.0 ? z : 0.0;
    case Activation::tanh:
      return std::tanh(z);
    case Activation::silu: {
      const double s = 1.0 / (1.0 + std::exp(-z));
      return z * s;
    }
  }
  throw ValidationError("unknown activation");
}

double activate_grad(Activation act, double z) {
  switch (act) {
    case Activation::identity:
      return 1.0;
    case Activation::relu:
      return z > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::silu: {
      const double s = 1.0 / (1.0 + std::exp(-z));
      return s * (1.0 + z * (1.0 - s));
    }
  }
  throw ValidationError("unknown activation");
}

Network::Network(std::vector<Layer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw ValidationError("Network: needs at least one layer");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    if (l.weight.rows() != l.bias.size())
      throw ShapeError("Network: layer " + std::to_string(i) + " weight/bias rows mismatch");
    if (i > 0 && layers_[i - 1].weight.rows() != l.weight.cols())
      throw ShapeError("Network: layer " + std::to_string(i) + " does not chain");
  }
  input_dim_ = static_cast<int>(layers_.front().weight.cols());
  output_dim_ = static_cast<int>(layers_.back().weight.rows());
}

Network Network::mlp(int input_dim, const std::vector<int>& hidden, int output_dim,
                     Activation hidden_act, std::uint64_t seed, Activation output_act) {
  if (input_dim <= 0 || output_dim <= 0)
    throw ValidationError("Network::mlp: dimensions must be positive");
  for (int h : hidden)
    if (h <= 0) throw ValidationError("Network::mlp: hidden sizes must be positive");
  Rng rng(seed);
  std::vector<Layer> layers;
  std::vector<int> dims;
  dims.push_back(input_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(output_dim);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    Layer l;
    const int fan_in = dims[i];
    const int fan_out = dims[i + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    l.weight = Mat(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r)
      for (int c = 0; c < fan_in; ++c) l.weight(r, c) = rng.uniform(-bound, bound);
    l.bias = Vec::Zero(fan_out);
    l.act = (i + 2 == dims.size()) ? output_act : hidden_act;
    layers.push_back(std::move(l));
  }
  return Network(std::move(layers));
}

Vec Network::forward(const Vec& input) const {
  if (layers_.empty()) throw StateError("Network::forward: empty network");
  if (input.size() != input_dim_)
    throw ShapeError("Network::forward: input dim " + std::to_string(input.size()) +
                     " != " + std::to_string(input_dim_));
  require_finite(input, "Network::forward input");
  Vec a = input;
  for (const Layer& l : layers_) {
    Vec z = l.weight * a + l.bias;
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = activate(l.act, z[i]);
    a = std::move(z);
  }
  return a;
}

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

void Network::check_finite() const {
  for (const Layer& l : layers_)
    if (!l.weight.allFinite() || !l.bias.allFinite())
      throw NumericError("Network: non-finite parameters");
}

void Network::zero_output_layer() {
  if (layers_.empty()) return;
  layers_.back().weight.setZero();
  layers_.back().bias.setZero();
}

Gradients Gradients::zeros_like(const Network& net) {
  Gradients g;
  for (const Layer& l : net.layers()) {
    g.weight.emplace_back(Mat::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.emplace_back(Vec::Zero(l.bias.size()));
  }
  g.input = Vec::Zero(net.input_dim());
  return g;
}

void Gradients::accumulate(const Gradients& other) {
  if (weight.size() != other.weight.size())
    throw ShapeError("Gradients::accumulate: layer count mismatch");
  for (std::size_t i = 0; i < weight.size(); ++i) {
    weight[i] += other.weight[i];
    bias[i] += other.bias[i];
  }
  if (input.size() == other.input.size()) input += other.input;
}

void Gradients::scale(double s) {
  for (auto& w : weight) w *= s;
  for (auto& b : bias) b *= s;
  input *= s;
}

double Gradients::squared_norm() const {
  double n = 0.0;
  for (const auto& w : weight) n += w.squaredNorm();
  for (const auto& b : bias) n += b.squaredNorm();
  return n;
}

Gradients backward(const Network& net, const Vec& input, const Vec& upstream) {
  const auto& layers = net.layers();
  if (layers.empty()) throw StateError("backward: empty network");
  if (input.size() != net.input_dim()) throw ShapeError("backward: input dim mismatch");
  if (upstream.size() != net.output_dim()) throw ShapeError("backward: upstream dim mismatch");

  // Forward pass, keeping pre-activations and layer inputs.
  std::vector<Vec> pre(layers.size());
  std::vector<Vec> act_in(layers.size());
  Vec a = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    act_in[i] = a;
    pre[i] = layers[i].weight * a + layers[i].bias;
    Vec out(pre[i].size());
    for (Eigen::Index j = 0; j < out.size(); ++j) out[j] = activate(layers[i].act, pre[i][j]);
    a = std::move(out);
  }

  Gradients g;
  g.weight.resize(layers.size());
  g.bias.resize(layers.size());
  Vec delta = upstream;
  for (std::size_t idx = layers.size(); idx-- > 0;) {
    const Layer& l = layers[idx];
    Vec dz(delta.size());
    for (Eigen::Index j = 0; j < dz.size(); ++j)
      dz[j] = delta[j] * activate_grad(l.act, pre[idx][j]);
    g.weight[idx] = dz * act_in[idx].transpose();
    g.bias[idx] = dz;
    delta = l.weight.transpose() * dz;
  }
  g.input = std::move(delta);
  return g;
}

Mat forward_batch(const Network& net, const Mat& inputs) {
  if (inputs.rows() != net.input_dim()) throw ShapeError("forward_batch: input dim mismatch");
  Mat a = inputs;
  for (const Layer& l : net.layers()) {
    Mat z = (l.weight * a).colwise() + l.bias;
    for (Eigen::Index c = 0; c < z.cols(); ++c)
      for (Eigen::Index r = 0; r < z.rows(); ++r) z(r, c) = activate(l.act, z(r, c));
    a = std::move(z);
  }
  return a;
}

BatchBackward backward_batch(const Network& net, const Mat& inputs,
                             const std::function<Mat(const Mat&)>& upstream_of) {
  const auto& layers = net.layers();
  if (layers.empty()) throw StateError("backward_batch: empty network");
  if (inputs.rows() != net.input_dim()) throw ShapeError("backward_batch: input dim mismatch");

  std::vector<Mat> pre(layers.size());
  std::vector<Mat> act_in(layers.size());
  Mat a = inputs;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    act_in[i] = a;
    pre[i] = (layers[i].weight * a).colwise() + layers[i].bias;
    Mat out = pre[i];
    for (Eigen::Index c = 0; c < out.cols(); ++c)
      for (Eigen::Index r = 0; r < out.rows(); ++r) out(r, c) = activate(layers[i].act, out(r, c));
    a = std::move(out);
  }

  Mat delta = upstream_of(a);
  if (delta.rows() != net.output_dim() || delta.cols() != inputs.cols())
    throw ShapeError("backward_batch: upstream shape mismatch");

  BatchBackward out;
  out.grads.weight.resize(layers.size());
  out.grads.bias.resize(layers.size());
  for (std::size_t idx = layers.size(); idx-- > 0;) {
    const Layer& l = layers[idx];
    Mat dz = delta;
    for (Eigen::Index c = 0; c < dz.cols(); ++c)
      for (Eigen::Index r = 0; r < dz.rows(); ++r)
        dz(r, c) *= activate_grad(l.act, pre[idx](r, c));
    out.grads.weight[idx].noalias() = dz * act_in[idx].transpose();
    out.grads.bias[idx] = dz.rowwise().sum();
    delta.noalias() = l.weight.transpose() * dz;
  }
  out.input_grads = std::move(delta);
  out.grads.input = Vec::Zero(net.input_dim());
  return out;
}

OptimizerState OptimizerState::init(const Network& net, const AdamConfig& cfg) {
  OptimizerState st;
  st.cfg = cfg;
  for (const Layer& l : net.layers()) {
    st.m_weight.emplace_back(Mat::Zero(l.weight.rows(), l.weight.cols()));
    st.v_weight.emplace_back(Mat::Zero(l.weight.rows(), l.weight.cols()));
    st.m_bias.emplace_back(Vec::Zero(l.bias.size()));
    st.v_bias.emplace_back(Vec::Zero(l.bias.size()));
  }
  return st;
}

void adam_step(Network& net, const Gradients& grads, OptimizerState& state) {
  auto& layers = net.layers();
  if (grads.weight.size() != layers.size() || state.m_weight.size() != layers.size())
    throw ShapeError("adam_step: layer count mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (grads.weight[i].rows() != layers[i].weight.rows() ||
        grads.weight[i].cols() != layers[i].weight.cols() ||
        grads.bias[i].size() != layers[i].bias.size())
      throw ShapeError("adam_step: gradient shape mismatch at layer " + std::to_string(i));
    if (!grads.weight[i].allFinite() || !grads.bias[i].allFinite())
      throw NumericError("adam_step: non-finite gradient, update rejected");
  }

  const AdamConfig& c = state.cfg;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
      m = c.beta1 * m + (1.0 - c.beta1) * g;
      v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
      const auto m_hat = m / bc1;
      const auto v_hat = v / bc2;
      param -= c.lr * (m_hat.array() / (v_hat.array().sqrt() + c.eps)).matrix();
    };
    update(layers[i].weight, state.m_weight[i], state.v_weight[i], grads.weight[i]);
    update(layers[i].bias, state.m_bias[i], state.v_bias[i], grads.bias[i]);
  }
  net.check_finite();
}

double finite_diff_check(const Network& net, const Vec& input, const OutputLoss& loss,
                         double epsilon) {
  if (!(epsilon > 0.0) || epsilon > 1e-2)
    throw ValidationError("finite_diff_check: epsilon must be in (0, 1e-2]");

  const Gradients analytic = backward(net, input, loss.grad(net.forward(input)));

  Network probe = net;
  double max_rel = 0.0;
  auto probe_param = [&](double& p, double analytic_g) {
    const double saved = p;
    p = saved + epsilon;
    const double up = loss.value(probe.forward(input));
    p = saved - epsilon;
    const double down = loss.value(probe.forward(input));
    p = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double rel = std::abs(analytic_g - numeric) / (std::abs(numeric) + 1e-8);
    if (rel > max_rel) max_rel = rel;
  };
  auto& layers = probe.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (Eigen::Index r = 0; r < layers[i].weight.rows(); ++r)
      for (Eigen::Index cidx = 0; cidx < layers[i].weight.cols(); ++cidx)
        probe_param(layers[i].weight(r, cidx), analytic.weight[i](r, cidx));
    for (Eigen::Index r = 0; r < layers[i].bias.size(); ++r)
      probe_param(layers[i].bias[r], analytic.bias[i][r]);
  }
  return max_rel;
}

void save_network(std::ostream& out, const Network& net) {
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(net.layers().size()));
  for (const Layer& l : net.layers()) {
    write_u32(out, static_cast<std::uint32_t>(l.weight.rows()));
    write_u32(out, static_cast<std::uint32_t>(l.weight.cols()));
    write_u32(out, static_cast<std::uint32_t>(l.act));
    // Row-major so the layout matches the (out x in) header dims.
    std::vector<double> w(static_cast<std::size_t>(l.weight.size()));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
        w[static_cast<std::size_t>(r * l.weight.cols() + c)] = l.weight(r, c);
    write_f64_array(out, w.data(), w.size());
    write_f64_array(out, l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
}

Network load_network(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError(FormatError::Code::bad_magic, "not a network checkpoint");
  const std::uint32_t version = read_u32(in);
  if (version != kVersion)
    throw FormatError(FormatError::Code::version_mismatch,
                      "unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = read_u32(in);
  std::vector<Layer> layers;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t rows = read_u32(in);
    const std::uint32_t cols = read_u32(in);
    const std::uint32_t act = read_u32(in);
    if (act > static_cast<std::uint32_t>(Activation::silu))
      throw FormatError(FormatError::Code::malformed, "unknown activation tag");
    const std::vector<double> w = read_f64_array(in);
    const std::vector<double> b = read_f64_array(in);
    if (w.size() != static_cast<std::size_t>(rows) * cols || b.size() != rows)
      throw FormatError(FormatError::Code::malformed, "layer size mismatch");
    Layer l;
    l.weight = Mat(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) l.weight(r, c) = w[r * cols + c];
    l.bias = Eigen::Map<const Vec>(b.data(), rows);
    l.act = static_cast<Activation>(act);
    layers.push_back(std::move(l));
  }
  return Network(std::move(layers));
}

void save_network_file(const std::string& path, const Network& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write checkpoint: " + path);
  save_network(out, net);
}

Network load_network_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path);
  return load_network(in);
}

}  // namespace cbd
