#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "bapn/nn/gradcheck_suite.hpp"
#include "bapn/nn/optim.hpp"

using namespace bapn;
using namespace bapn::nn;
using Catch::Approx;

namespace {

Tensor<double> randn(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal();
  return Tensor<double>::from(std::move(shape), std::move(v), true);
}

}  // namespace

TEST_CASE("every op passes finite-difference checks across 20 seeds", "[gradients]") {
  for (const auto& gc : gradcheck_suite()) {
    double worst = 0.0;
    for (uint64_t seed = 1; seed <= 20; ++seed)
      worst = std::max(worst, gc.run(seed));
    INFO(gc.name << " worst rel err " << worst);
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("suite covers every differentiable op", "[gradients]") {
  std::vector<std::string> want = {
      "add", "sub", "mul", "scale", "mean_all", "relu", "sigmoid", "reshape",
      "concat", "slice", "pad2d", "crop2d", "conv2d", "conv2d_strided",
      "conv2d_dilated", "conv_transpose2d", "add_bias", "batchnorm_train",
      "batchnorm_eval", "upsample_bilinear", "softmax", "cross_entropy", "mse"};
  std::vector<std::string> have;
  for (const auto& gc : gradcheck_suite()) have.push_back(gc.name);
  for (const auto& name : want) {
    CAPTURE(name);
    CHECK(std::find(have.begin(), have.end(), name) != have.end());
  }
}

TEST_CASE("chained graph matches hand derivative", "[gradients]") {
  // y = sum((2a + b)^2): dy/da = 4(2a+b), dy/db = 2(2a+b)
  auto a = Tensor<double>::from({3}, {1.0, -2.0, 0.5}, true);
  auto b = Tensor<double>::from({3}, {0.5, 1.0, -1.0}, true);
  auto t = add(scale(a, 2.0), b);
  auto y = sum_all(mul(t, t));
  y.backward();
  for (int i = 0; i < 3; ++i) {
    double u = 2.0 * a.data()[i] + b.data()[i];
    CHECK(a.grad()[i] == Approx(4.0 * u).margin(1e-12));
    CHECK(b.grad()[i] == Approx(2.0 * u).margin(1e-12));
  }
}

TEST_CASE("reused tensor accumulates gradient from both paths", "[gradients]") {
  // y = sum(a*a) + sum(3a) => dy/da = 2a + 3
  auto a = Tensor<double>::from({4}, {1.0, 2.0, -1.0, 0.25}, true);
  auto y = add(sum_all(mul(a, a)), sum_all(scale(a, 3.0)));
  y.backward();
  for (int i = 0; i < 4; ++i)
    CHECK(a.grad()[i] == Approx(2.0 * a.data()[i] + 3.0).margin(1e-12));
}

TEST_CASE("graph is pruned below tensors that do not require grad", "[gradients]") {
  Rng rng(11);
  auto a = randn({8}, rng);
  a.node()->requires_grad = false;
  auto y = sum_all(mul(a, a));
  // Nothing upstream requires grad, so the result has no recorded parents.
  CHECK(y.node()->parents.empty());
  y.backward();  // must be a no-op, not a crash
  CHECK(y.item() == Approx(y.item()));
}

TEST_CASE("backward on a non-scalar is rejected", "[gradients]") {
  Rng rng(3);
  auto a = randn({2, 2}, rng);
  auto y = mul(a, a);
  CHECK_THROWS_AS(y.backward(), Error);
}

TEST_CASE("adam first step matches closed form", "[gradients]") {
  // With zero moments, one step moves by lr * g / (|g| + eps) after bias
  // correction collapses: mhat = g, vhat = g^2.
  Parameter<double> p("w", Tensor<double>::from({3}, {1.0, -0.5, 2.0}, true));
  std::vector<double> g = {0.4, -0.02, 1.5};
  p.t.grad() = g;
  AdamConfig cfg;
  cfg.lr = 0.1;
  adam_step(p, cfg);
  for (int i = 0; i < 3; ++i) {
    double want = (i == 0 ? 1.0 : i == 1 ? -0.5 : 2.0) -
                  0.1 * g[i] / (std::fabs(g[i]) + 1e-8);
    CHECK(p.t.data()[i] == Approx(want).margin(1e-9));
  }
  CHECK(p.steps == 1);
  for (double gv : p.t.grad()) CHECK(gv == 0.0);
}

TEST_CASE("adam second step matches hand-tracked moments", "[gradients]") {
  Parameter<double> p("w", Tensor<double>::from({1}, {0.7}, true));
  AdamConfig cfg;
  cfg.lr = 0.05;
  double m = 0.0, v = 0.0, w = 0.7;
  std::vector<double> grads = {0.3, -0.8};
  for (int k = 1; k <= 2; ++k) {
    double g = grads[k - 1];
    p.t.grad()[0] = g;
    adam_step(p, cfg);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    double mhat = m / (1.0 - std::pow(0.9, k));
    double vhat = v / (1.0 - std::pow(0.999, k));
    w -= 0.05 * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(p.t.data()[0] == Approx(w).margin(1e-12));
  }
}

TEST_CASE("zero gradient with zero moments leaves weights bitwise unchanged", "[gradients]") {
  Rng rng(5);
  Parameter<double> p("w", randn({16}, rng));
  std::vector<double> before = p.t.data();
  p.t.grad().assign(16, 0.0);
  AdamConfig cfg;
  for (int k = 0; k < 5; ++k) adam_step(p, cfg);
  CHECK(std::memcmp(before.data(), p.t.data().data(), 16 * sizeof(double)) == 0);
  for (double x : p.m) CHECK(x == 0.0);
  for (double x : p.v) CHECK(x == 0.0);
}

TEST_CASE("adam requires a gradient", "[gradients]") {
  Parameter<double> p("w", Tensor<double>::from({2}, {1.0, 2.0}, true));
  p.t.node()->grad.clear();
  AdamConfig cfg;
  CHECK_THROWS_AS(adam_step(p, cfg), Error);
}

TEST_CASE("adam descends a quadratic", "[gradients]") {
  // minimize (w - 3)^2 from w = 0
  Parameter<double> p("w", Tensor<double>::from({1}, {0.0}, true));
  AdamConfig cfg;
  cfg.lr = 0.1;
  for (int k = 0; k < 400; ++k) {
    p.t.grad()[0] = 2.0 * (p.t.data()[0] - 3.0);
    adam_step(p, cfg);
  }
  CHECK(p.t.data()[0] == Approx(3.0).margin(0.05));
}

TEST_CASE("he init is deterministic with the right spread", "[gradients]") {
  Rng a(42), b(42);
  auto w1 = he_normal<double>({64, 32, 3, 3}, 32 * 9, a);
  auto w2 = he_normal<double>({64, 32, 3, 3}, 32 * 9, b);
  CHECK(std::memcmp(w1.data().data(), w2.data().data(),
                    w1.numel() * sizeof(double)) == 0);
  double mean = 0.0, sq = 0.0;
  for (double x : w1.data()) {
    mean += x;
    sq += x * x;
  }
  mean /= static_cast<double>(w1.numel());
  double stddev = std::sqrt(sq / static_cast<double>(w1.numel()) - mean * mean);
  double want = std::sqrt(2.0 / (32 * 9));
  CHECK(std::fabs(mean) < 0.005);
  CHECK(stddev == Approx(want).epsilon(0.05));
}
