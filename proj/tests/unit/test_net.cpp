#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <sstream>

#include "cbd/error.hpp"
#include "cbd/net.hpp"
#include "cbd/rng.hpp"

using namespace cbd;

namespace {

Network linear_net(const Mat& w, const Vec& b) {
  Layer l;
  l.weight = w;
  l.bias = b;
  l.act = Activation::identity;
  return Network({l});
}

}  // namespace

TEST_CASE("forward: identity-initialized single layer") {
  Network net = linear_net(Mat::Identity(2, 2), Vec::Zero(2));
  Vec in(2);
  in << 1.0, 2.0;
  const Vec out = net.forward(in);
  CHECK(out[0] == 1.0);
  CHECK(out[1] == 2.0);
}

TEST_CASE("forward: zero-weight net returns the bias") {
  Vec b(2);
  b << 0.5, -0.5;
  Network net = linear_net(Mat::Zero(2, 3), b);
  Vec in(3);
  in << 9.0, -4.0, 2.0;
  const Vec out = net.forward(in);
  CHECK(out[0] == 0.5);
  CHECK(out[1] == -0.5);
}

TEST_CASE("forward: 2-layer chain matches the hand-computed matrix chain") {
  Mat w1(2, 2);
  w1 << 1.0, 2.0, 3.0, 4.0;
  Vec b1(2);
  b1 << 0.5, -0.5;
  Mat w2(1, 2);
  w2 << 1.0, -1.0;
  Vec b2(1);
  b2 << 0.25;
  Layer l1{w1, b1, Activation::tanh};
  Layer l2{w2, b2, Activation::identity};
  Network net({l1, l2});

  Vec in(2);
  in << 0.1, 0.2;
  // Explicit chain: z1 = W1 x + b1 = [1.0, 0.6]; out = tanh(z1[0]) - tanh(z1[1]) + 0.25.
  const double expected = std::tanh(1.0) - std::tanh(0.6) + 0.25;
  CHECK(net.forward(in)[0] == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("forward: shape and finiteness preconditions") {
  Network net = linear_net(Mat::Identity(2, 2), Vec::Zero(2));
  CHECK_THROWS_AS(net.forward(Vec::Zero(3)), ShapeError);
  Vec bad(2);
  bad << 1.0, std::nan("");
  CHECK_THROWS_AS(net.forward(bad), ValidationError);
}

TEST_CASE("backward: single linear layer chain rule dW = g x^T") {
  Mat w(2, 2);
  w << 1.0, 2.0, 3.0, 4.0;
  Network net = linear_net(w, Vec::Zero(2));
  Vec x(2);
  x << 5.0, 7.0;
  Vec g(2);
  g << 1.0, -1.0;
  const Gradients grads = backward(net, x, g);
  CHECK(grads.weight[0](0, 0) == 5.0);
  CHECK(grads.weight[0](0, 1) == 7.0);
  CHECK(grads.weight[0](1, 0) == -5.0);
  CHECK(grads.weight[0](1, 1) == -7.0);
  CHECK(grads.bias[0][0] == 1.0);
  CHECK(grads.bias[0][1] == -1.0);
  // input grad = W^T g
  CHECK(grads.input[0] == 1.0 * 1.0 + 3.0 * -1.0);
  CHECK(grads.input[1] == 2.0 * 1.0 + 4.0 * -1.0);
}

TEST_CASE("backward: zero upstream gradient zeroes all parameter gradients") {
  Network net = Network::mlp(3, {5}, 2, Activation::silu, 7);
  const Gradients grads = backward(net, Vec::Ones(3), Vec::Zero(2));
  for (const auto& w : grads.weight) CHECK(w.cwiseAbs().maxCoeff() == 0.0);
  for (const auto& b : grads.bias) CHECK(b.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("finite_diff_check: gradients match central differences") {
  const OutputLoss quad{
      [](const Vec& y) { return y.squaredNorm(); },
      [](const Vec& y) { return Vec(2.0 * y); },
  };

  SUBCASE("quadratic loss on a linear net is exact") {
    Mat w(2, 3);
    w << 0.3, -0.2, 0.5, 0.1, 0.7, -0.4;
    Network net = linear_net(w, Vec::Zero(2));
    Vec in(3);
    in << 0.2, -0.1, 0.4;
    CHECK(finite_diff_check(net, in, quad, 1e-5) < 1e-6);
  }

  SUBCASE("3-layer net with smooth activations stays under 1e-4") {
    Network net = Network::mlp(4, {8, 8}, 3, Activation::silu, 11);
    Rng rng(5);
    Vec in(4);
    for (int i = 0; i < 4; ++i) in[i] = rng.normal();
    CHECK(finite_diff_check(net, in, quad, 1e-5) < 1e-4);
  }

  SUBCASE("epsilon = 0 violates the precondition") {
    Network net = Network::mlp(2, {4}, 1, Activation::tanh, 3);
    CHECK_THROWS_AS(finite_diff_check(net, Vec::Ones(2), quad, 0.0), ValidationError);
  }
}

TEST_CASE("adam_step: zero gradient leaves parameters, increments step") {
  Network net = Network::mlp(2, {3}, 1, Activation::silu, 1);
  const Network before = net;
  OptimizerState st = OptimizerState::init(net, {});
  adam_step(net, Gradients::zeros_like(net), st);
  CHECK(st.step == 1);
  for (std::size_t i = 0; i < net.layers().size(); ++i)
    CHECK((net.layers()[i].weight - before.layers()[i].weight).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adam_step: constant gradient moves against its sign") {
  Network net = linear_net(Mat::Zero(1, 1), Vec::Zero(1));
  AdamConfig cfg;
  cfg.lr = 0.01;
  OptimizerState st = OptimizerState::init(net, cfg);
  Gradients g = Gradients::zeros_like(net);
  g.weight[0](0, 0) = 2.0;
  for (int i = 0; i < 10; ++i) adam_step(net, g, st);
  CHECK(net.layers()[0].weight(0, 0) < 0.0);
}

TEST_CASE("adam_step: first update matches the hand-computed value") {
  Network net = linear_net(Mat::Constant(1, 1, 0.5), Vec::Zero(1));
  AdamConfig cfg;
  cfg.lr = 0.1;
  OptimizerState st = OptimizerState::init(net, cfg);
  Gradients g = Gradients::zeros_like(net);
  g.weight[0](0, 0) = 0.3;
  adam_step(net, g, st);
  // One step of Adam by hand: m = 0.1*0.3 / (1-0.9) = 0.3 after bias
  // correction; v_hat = 0.3^2; theta = 0.5 - 0.1 * 0.3 / (0.3 + 1e-8).
  const double m_hat = (0.1 * 0.3) / (1.0 - 0.9);
  const double v_hat = (0.001 * 0.09) / (1.0 - 0.999);
  const double expected = 0.5 - 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8);
  CHECK(net.layers()[0].weight(0, 0) == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("adam_step: non-finite gradients are rejected, state untouched") {
  Network net = Network::mlp(2, {3}, 1, Activation::silu, 1);
  const Network before = net;
  OptimizerState st = OptimizerState::init(net, {});
  Gradients g = Gradients::zeros_like(net);
  g.weight[0](0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(adam_step(net, g, st), NumericError);
  CHECK(st.step == 0);
  CHECK((net.layers()[0].weight - before.layers()[0].weight).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("training a 1-layer net solves a linear regression toy") {
  // y = 2x - 1, MSE below 1e-3 within 2000 Adam steps.
  Network net = Network::mlp(1, {}, 1, Activation::identity, 9);
  AdamConfig cfg;
  cfg.lr = 1e-2;
  OptimizerState st = OptimizerState::init(net, cfg);
  Rng rng(4);
  std::vector<double> xs(32), ys(32);
  for (int i = 0; i < 32; ++i) {
    xs[i] = rng.uniform(-1.0, 1.0);
    ys[i] = 2.0 * xs[i] - 1.0;
  }
  double mse = 1.0;
  for (int step = 0; step < 2000 && mse > 1e-3; ++step) {
    Gradients acc = Gradients::zeros_like(net);
    mse = 0.0;
    for (int i = 0; i < 32; ++i) {
      const Vec out = net.forward(Vec::Constant(1, xs[i]));
      const double diff = out[0] - ys[i];
      mse += diff * diff / 32.0;
      Gradients g = backward(net, Vec::Constant(1, xs[i]), Vec::Constant(1, 2.0 * diff / 32.0));
      acc.accumulate(g);
    }
    adam_step(net, acc, st);
  }
  CHECK(mse < 1e-3);
}

TEST_CASE("batched forward/backward agree with the per-sample path") {
  Network net = Network::mlp(5, {7, 6}, 4, Activation::silu, 21);
  Rng rng(8);
  Mat inputs(5, 9);
  for (Eigen::Index i = 0; i < inputs.size(); ++i) inputs.data()[i] = rng.normal();
  const Mat batch_out = forward_batch(net, inputs);
  Mat upstream(4, 9);
  for (Eigen::Index i = 0; i < upstream.size(); ++i) upstream.data()[i] = rng.normal();

  Gradients expected = Gradients::zeros_like(net);
  for (int c = 0; c < 9; ++c) {
    const Vec out = net.forward(inputs.col(c));
    CHECK((out - batch_out.col(c)).cwiseAbs().maxCoeff() < 1e-12);
    expected.accumulate(backward(net, inputs.col(c), upstream.col(c)));
  }
  const BatchBackward bb = backward_batch(net, inputs, [&](const Mat&) { return upstream; });
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    CHECK((bb.grads.weight[l] - expected.weight[l]).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((bb.grads.bias[l] - expected.bias[l]).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("checkpoint: save/load round-trips bit-exactly, bad files rejected") {
  Network net = Network::mlp(3, {5, 4}, 2, Activation::tanh, 77);
  std::ostringstream out;
  save_network(out, net);
  const std::string blob = out.str();

  std::istringstream in(blob);
  const Network back = load_network(in);
  REQUIRE(back.layers().size() == net.layers().size());
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    CHECK((back.layers()[l].weight - net.layers()[l].weight).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.layers()[l].bias - net.layers()[l].bias).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back.layers()[l].act == net.layers()[l].act);
  }

  SUBCASE("bad magic") {
    std::string bad = blob;
    bad[0] = 'X';
    std::istringstream s(bad);
    try {
      load_network(s);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.code() == FormatError::Code::bad_magic);
    }
  }
  SUBCASE("version mismatch") {
    std::string bad = blob;
    bad[4] = 99;
    std::istringstream s(bad);
    try {
      load_network(s);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.code() == FormatError::Code::version_mismatch);
    }
  }
  SUBCASE("truncation") {
    std::istringstream s(blob.substr(0, blob.size() / 2));
    try {
      load_network(s);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.code() == FormatError::Code::truncated);
    }
  }
}

TEST_CASE("mlp init is deterministic per seed and layers chain") {
  const Network a = Network::mlp(4, {6, 5}, 2, Activation::silu, 123);
  const Network b = Network::mlp(4, {6, 5}, 2, Activation::silu, 123);
  const Network c = Network::mlp(4, {6, 5}, 2, Activation::silu, 124);
  for (std::size_t l = 0; l < a.layers().size(); ++l) {
    CHECK((a.layers()[l].weight - b.layers()[l].weight).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK((a.layers()[0].weight - c.layers()[0].weight).cwiseAbs().maxCoeff() > 0.0);
  // mismatched chain rejected
  Layer l1{Mat::Zero(3, 2), Vec::Zero(3), Activation::identity};
  Layer l2{Mat::Zero(2, 4), Vec::Zero(2), Activation::identity};
  CHECK_THROWS_AS(Network({l1, l2}), ShapeError);
}
