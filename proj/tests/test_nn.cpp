#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "vtlab/checkpoint.hpp"
#include "vtlab/gradcheck.hpp"
#include "vtlab/mlp.hpp"
#include "vtlab/optimizer.hpp"
#include "vtlab/rng.hpp"

using namespace vtlab;

namespace {

std::vector<double> random_vec(Rng& rng, int n, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

// scalar probe loss: fixed random weighting of the outputs
double weighted_output(const Mlp& net, std::span<const double> input,
                       std::span<const double> weights) {
  const std::vector<double> out = net.forward(input);
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += weights[i] * out[i];
  return s;
}

}  // namespace

TEST_CASE("forward: zero weights pass biases through the output activation") {
  Mlp net({3, 2}, Hidden::kTanh, Output::kSigmoid);
  net.biases(0) = {0.3, -0.7};
  const std::vector<double> out = net.forward(std::vector<double>{5.0, -2.0, 1.0});
  CHECK(out[0] == Catch::Approx(1.0 / (1.0 + std::exp(-0.3))).epsilon(1e-12));
  CHECK(out[1] == Catch::Approx(1.0 / (1.0 + std::exp(0.7))).epsilon(1e-12));
}

TEST_CASE("forward: identity net reproduces its input") {
  Mlp net({4, 4}, Hidden::kTanh, Output::kIdentity);
  for (int i = 0; i < 4; ++i) net.weights(0)[i * 4 + i] = 1.0;
  const std::vector<double> x{0.25, -1.5, 3.0, 0.0};
  CHECK(net.forward(x) == x);
}

TEST_CASE("forward: sigmoid of a zero logit is one half") {
  Mlp net({2, 1}, Hidden::kTanh, Output::kSigmoid);
  const std::vector<double> out = net.forward(std::vector<double>{1.0, -1.0});
  CHECK(out[0] == 0.5);
}

TEST_CASE("forward: softmax blocks are distributions") {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    Mlp net = Mlp::glorot({5, 16, 13 + 4}, Hidden::kTanh, Output::kSoftmaxBlocks, rng, {8, 3, 2});
    const std::vector<double> out = net.forward(random_vec(rng, 5));
    int at = 0;
    for (int b : {8, 3, 2}) {
      double sum = 0.0;
      for (int i = 0; i < b; ++i) {
        CHECK(out[at + i] > 0.0);
        CHECK(out[at + i] < 1.0);
        sum += out[at + i];
      }
      CHECK(std::abs(sum - 1.0) < 1e-6);
      at += b;
    }
  }
}

TEST_CASE("forward: deterministic and rejects bad shapes") {
  Rng rng(3);
  Mlp net = Mlp::glorot({6, 8, 3}, Hidden::kRelu, Output::kIdentity, rng);
  const std::vector<double> x = random_vec(rng, 6);
  CHECK(net.forward(x) == net.forward(x));
  CHECK_THROWS_AS(net.forward(random_vec(rng, 5)), std::invalid_argument);
}

TEST_CASE("backward: zero cotangent gives zero gradients") {
  Rng rng(5);
  Mlp net = Mlp::glorot({4, 8, 2}, Hidden::kTanh, Output::kSigmoid, rng);
  Mlp::Trace trace;
  std::vector<double> out;
  net.forward(random_vec(rng, 4), out, trace);
  std::vector<double> grad(net.param_count(), 0.0);
  net.backward(trace, std::vector<double>{0.0, 0.0}, grad);
  for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("backward: linear net weight gradient is input times upstream") {
  Mlp net({3, 1}, Hidden::kTanh, Output::kIdentity);
  net.weights(0) = {0.5, -0.25, 2.0};
  const std::vector<double> x{1.5, -2.0, 0.5};
  Mlp::Trace trace;
  std::vector<double> out;
  net.forward(x, out, trace);
  std::vector<double> grad(net.param_count(), 0.0);
  const double upstream = 3.0;
  net.backward(trace, std::vector<double>{upstream}, grad);
  for (int j = 0; j < 3; ++j) CHECK(grad[j] == Catch::Approx(x[j] * upstream).epsilon(1e-12));
  CHECK(grad[3] == Catch::Approx(upstream).epsilon(1e-12));  // bias
}

TEST_CASE("backward: matches central finite differences on small random nets") {
  Rng rng(7);
  for (int trial = 0; trial < 8; ++trial) {
    const Output out_kind = trial % 2 ? Output::kSigmoid : Output::kIdentity;
    Mlp net = Mlp::glorot({5, 9, 4}, trial % 3 ? Hidden::kTanh : Hidden::kRelu, out_kind, rng);
    const std::vector<double> x = random_vec(rng, 5);
    const std::vector<double> w = random_vec(rng, 4);

    Mlp::Trace trace;
    std::vector<double> out;
    net.forward(x, out, trace);
    std::vector<double> analytic(net.param_count(), 0.0);
    net.backward(trace, w, analytic);

    std::vector<double> params(net.param_count());
    net.params_to(params);
    Mlp probe = net;
    const std::vector<double> fd = finite_difference_gradient(
        [&](std::span<const double> p) {
          probe.params_from(p);
          return weighted_output(probe, x, w);
        },
        params, 1e-5);
    CHECK(max_relative_error(analytic, fd) < 1e-4);
  }
}

TEST_CASE("backward: softmax-block output gradcheck") {
  Rng rng(17);
  Mlp net = Mlp::glorot({4, 10, 9}, Hidden::kTanh, Output::kSoftmaxBlocks, rng, {3, 2});
  const std::vector<double> x = random_vec(rng, 4);
  const std::vector<double> w = random_vec(rng, 9);
  Mlp::Trace trace;
  std::vector<double> out;
  net.forward(x, out, trace);
  std::vector<double> analytic(net.param_count(), 0.0);
  net.backward(trace, w, analytic);
  std::vector<double> params(net.param_count());
  net.params_to(params);
  Mlp probe = net;
  const std::vector<double> fd = finite_difference_gradient(
      [&](std::span<const double> p) {
        probe.params_from(p);
        return weighted_output(probe, x, w);
      },
      params, 1e-5);
  CHECK(max_relative_error(analytic, fd) < 1e-4);
}

TEST_CASE("backward: input gradient matches finite differences") {
  Rng rng(23);
  Mlp net = Mlp::glorot({6, 12, 3}, Hidden::kTanh, Output::kSigmoid, rng);
  const std::vector<double> x = random_vec(rng, 6);
  const std::vector<double> w = random_vec(rng, 3);
  Mlp::Trace trace;
  std::vector<double> out;
  net.forward(x, out, trace);
  std::vector<double> grad(net.param_count(), 0.0);
  std::vector<double> input_grad;
  net.backward(trace, w, grad, &input_grad);
  const std::vector<double> fd = finite_difference_gradient(
      [&](std::span<const double> xs) { return weighted_output(net, xs, w); }, x, 1e-5);
  CHECK(max_relative_error(input_grad, fd) < 1e-4);
}

TEST_CASE("backward: non-finite intermediates raise a numeric fault with a layer index") {
  Rng rng(29);
  Mlp net = Mlp::glorot({3, 4, 2}, Hidden::kTanh, Output::kIdentity, rng);
  net.weights(0)[0] = std::numeric_limits<double>::quiet_NaN();
  Mlp::Trace trace;
  std::vector<double> out;
  net.forward(std::vector<double>{1.0, 0.5, -0.5}, out, trace);
  std::vector<double> grad(net.param_count(), 0.0);
  try {
    net.backward(trace, std::vector<double>{1.0, 1.0}, grad);
    FAIL("expected NumericFault");
  } catch (const NumericFault& fault) {
    CHECK(fault.layer == 0);
  }

  // a diverged loss shows up as a non-finite cotangent and faults at the top
  Mlp clean = Mlp::glorot({3, 4, 2}, Hidden::kTanh, Output::kIdentity, rng);
  clean.forward(std::vector<double>{1.0, 0.5, -0.5}, out, trace);
  std::vector<double> g2(clean.param_count(), 0.0);
  const double inf = std::numeric_limits<double>::infinity();
  try {
    clean.backward(trace, std::vector<double>{inf, 1.0}, g2);
    FAIL("expected NumericFault");
  } catch (const NumericFault& fault) {
    CHECK(fault.layer == 1);
  }
}

TEST_CASE("jvp: matches directional finite differences") {
  Rng rng(31);
  Mlp net = Mlp::glorot({5, 8, 6}, Hidden::kTanh, Output::kSoftmaxBlocks, rng, {4});
  const std::vector<double> x = random_vec(rng, 5);
  std::vector<double> params(net.param_count());
  net.params_to(params);
  const std::vector<double> v = random_vec(rng, static_cast<int>(params.size()));

  Mlp::Trace trace;
  std::vector<double> out, tangent;
  net.forward(x, out, trace);
  net.jvp(trace, v, tangent);

  const double h = 1e-6;
  Mlp up = net, down = net;
  std::vector<double> pu = params, pd = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    pu[i] += h * v[i];
    pd[i] -= h * v[i];
  }
  up.params_from(pu);
  down.params_from(pd);
  const std::vector<double> fu = up.forward(x), fdn = down.forward(x);
  for (std::size_t i = 0; i < tangent.size(); ++i) {
    const double fd = (fu[i] - fdn[i]) / (2.0 * h);
    CHECK(std::abs(tangent[i] - fd) < 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("optimizer: sgd is the exact update rule") {
  Optimizer opt = Optimizer::sgd(1, 0.1);
  std::vector<double> p{1.0}, g{1.0};
  opt.step(p, g);
  CHECK(p[0] == Catch::Approx(0.9).epsilon(1e-15));
  CHECK(opt.step_count() == 1);
}

TEST_CASE("optimizer: adam leaves parameters alone on a zero gradient") {
  Optimizer opt = Optimizer::adam(3, 0.05);
  std::vector<double> p{1.0, -2.0, 0.0};
  const std::vector<double> before = p;
  opt.step(p, std::vector<double>{0.0, 0.0, 0.0});
  CHECK(p == before);
}

TEST_CASE("optimizer: first adam step moves by about the learning rate") {
  // bias-corrected update at t=1: lr * g / (|g| + eps)
  const double lr = 0.1;
  for (double g : {0.5, -3.0, 1e-3, 42.0}) {
    Optimizer opt = Optimizer::adam(1, lr);
    std::vector<double> p{2.0};
    opt.step(p, std::vector<double>{g});
    const double expected = 2.0 - lr * g / (std::sqrt(g * g) + 1e-8);
    CHECK(p[0] == Catch::Approx(expected).epsilon(1e-12));
    CHECK(std::abs(std::abs(2.0 - p[0]) - lr) < 1e-6);
  }
}

TEST_CASE("optimizer: rejects bad input") {
  Optimizer opt = Optimizer::adam(2, 0.1);
  std::vector<double> p{1.0, 1.0};
  CHECK_THROWS_AS(opt.step(p, std::vector<double>{1.0}), std::invalid_argument);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(opt.step(p, std::vector<double>{nan, 0.0}), NumericFault);
}

TEST_CASE("checkpoint: byte-exact golden encoding") {
  ModelCheckpoint ckpt;
  ckpt.emplace("t", Tensor({2}, {1.0, 2.0}));
  std::ostringstream os(std::ios::binary);
  save_checkpoint(os, ckpt);
  const std::string bytes = os.str();

  std::string expected;
  expected += "VTLAB1";
  const auto push_u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) expected += static_cast<char>((v >> (8 * i)) & 0xff);
  };
  push_u32(1);            // tensor count
  push_u32(1);            // name length
  expected += "t";
  push_u32(1);            // rank
  push_u32(2);            // dim
  const unsigned char one[8] = {0, 0, 0, 0, 0, 0, 0xf0, 0x3f};
  const unsigned char two[8] = {0, 0, 0, 0, 0, 0, 0, 0x40};
  expected.append(reinterpret_cast<const char*>(one), 8);
  expected.append(reinterpret_cast<const char*>(two), 8);
  CHECK(bytes == expected);
}

TEST_CASE("checkpoint: round trip and bad magic") {
  Rng rng(41);
  ModelCheckpoint ckpt;
  ckpt.emplace("alpha", Tensor({2, 3}, random_vec(rng, 6)));
  ckpt.emplace("beta/w", Tensor({4}, random_vec(rng, 4)));
  std::ostringstream os(std::ios::binary);
  save_checkpoint(os, ckpt);
  std::istringstream is(os.str(), std::ios::binary);
  const ModelCheckpoint loaded = load_checkpoint(is);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded.at("alpha").shape == ckpt.at("alpha").shape);
  CHECK(loaded.at("alpha").data == ckpt.at("alpha").data);
  CHECK(loaded.at("beta/w").data == ckpt.at("beta/w").data);

  std::istringstream bad("VTLAB9junk", std::ios::binary);
  CHECK_THROWS(load_checkpoint(bad));
}

TEST_CASE("checkpoint: mlp reconstruction is bitwise") {
  Rng rng(43);
  Mlp net = Mlp::glorot({7, 16, 13}, Hidden::kTanh, Output::kSoftmaxBlocks, rng, {8, 3, 2});
  ModelCheckpoint ckpt;
  mlp_to_checkpoint(net, "gen", ckpt);
  std::ostringstream os(std::ios::binary);
  save_checkpoint(os, ckpt);
  std::istringstream is(os.str(), std::ios::binary);
  const Mlp restored = mlp_from_checkpoint(load_checkpoint(is), "gen");
  const std::vector<double> x = random_vec(rng, 7);
  CHECK(restored.forward(x) == net.forward(x));
}
