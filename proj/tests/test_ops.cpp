#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "bapn/nn/ops.hpp"
#include "bapn/rng.hpp"

using namespace bapn;
using nn::Tensor;

namespace {

Tensor<double> randn(nn::Shape shape, uint64_t seed, bool grad = false) {
  Rng rng(seed);
  std::vector<double> v(nn::shape_numel(shape));
  for (auto& x : v) x = rng.normal();
  return Tensor<double>::from(std::move(shape), std::move(v), grad);
}

}  // namespace

TEST_CASE("elementwise ops compute what they say", "[ops]") {
  auto a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::from({2, 2}, {5, -1, 0.5, 2});
  CHECK(nn::add(a, b).data() == std::vector<double>{6, 1, 3.5, 6});
  CHECK(nn::sub(a, b).data() == std::vector<double>{-4, 3, 2.5, 2});
  CHECK(nn::mul(a, b).data() == std::vector<double>{5, -2, 1.5, 8});
  CHECK(nn::scale(a, 3.0).data() == std::vector<double>{3, 6, 9, 12});
  CHECK(nn::sum_all(a).item() == 10.0);
  CHECK(nn::mean_all(a).item() == 2.5);
  CHECK(nn::relu(Tensor<double>::from({3}, {-1, 0, 2})).data() == std::vector<double>{0, 0, 2});
  auto s = nn::sigmoid(Tensor<double>::from({2}, {0, 2}));
  CHECK(s.data()[0] == Catch::Approx(0.5));
  CHECK(s.data()[1] == Catch::Approx(1.0 / (1.0 + std::exp(-2.0))));
  CHECK_THROWS_AS(nn::add(a, Tensor<double>::zeros({3})), Error);
}

TEST_CASE("concat and slice are inverse along any axis", "[ops]") {
  auto a = randn({2, 3, 2, 2}, 1);
  auto b = randn({2, 2, 2, 2}, 2);
  auto cat = nn::concat<double>({a, b}, 1);
  REQUIRE(cat.shape() == nn::Shape{2, 5, 2, 2});
  CHECK(nn::slice(cat, 1, 0, 3).data() == a.data());
  CHECK(nn::slice(cat, 1, 3, 5).data() == b.data());

  auto c = randn({3, 4}, 3);
  auto d = randn({2, 4}, 4);
  auto cat0 = nn::concat<double>({c, d}, 0);
  CHECK(nn::slice(cat0, 0, 3, 5).data() == d.data());
  CHECK_THROWS_AS(nn::concat<double>({a, c}, 0), Error);
}

TEST_CASE("batch-stacked branches regroup by plain reshape", "[ops]") {
  // [N*B, C, H, W] and [N, B*C, H, W] share a row-major layout, which is
  // what lets branch outputs regroup without a copy.
  auto x = randn({4, 3, 2, 2}, 5);
  auto r = nn::reshape(x, {2, 6, 2, 2});
  CHECK(r.data() == x.data());
}

TEST_CASE("pad and crop round trip", "[ops]") {
  auto x = randn({2, 3, 4, 5}, 6);
  auto padded = nn::pad2d(x, 1, 2, 0, 3);
  REQUIRE(padded.shape() == nn::Shape{2, 3, 7, 8});
  CHECK(nn::crop2d(padded, 1, 0, 4, 5).data() == x.data());
  // Padding adds zeros only.
  double sx = nn::sum_all(x).item();
  CHECK(nn::sum_all(padded).item() == Catch::Approx(sx).margin(1e-12));
  CHECK_THROWS_AS(nn::crop2d(x, 2, 2, 4, 5), Error);
}

TEST_CASE("conv2d obeys the output extent law", "[ops]") {
  // extent = floor((in + 2p - d(k-1) - 1)/s) + 1
  CHECK(nn::conv_out_extent(257, 1, 1, 4, 2) == 128);
  CHECK(nn::conv_out_extent(258, 1, 1, 4, 2) == 129);
  CHECK(nn::conv_out_extent(17, 6, 6, 3, 1) == 17);
  CHECK(nn::conv_out_extent(13, 18, 18, 3, 1) == 13);
  auto x = randn({1, 2, 11, 9}, 7);
  auto w = randn({3, 2, 4, 4}, 8);
  auto y = nn::conv2d(x, w, 2, 1);
  CHECK(y.shape() == nn::Shape{1, 3, 5, 4});
}

TEST_CASE("conv2d hand value: 3x3 mean filter", "[ops]") {
  auto x = Tensor<double>::from({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto w = Tensor<double>::filled({1, 1, 3, 3}, 1.0 / 9.0);
  auto y = nn::conv2d(x, w, 1, 0);
  REQUIRE(y.shape() == nn::Shape{1, 1, 1, 1});
  CHECK(y.item() == Catch::Approx(5.0));
  // With padding 1 the center output stays 5, corners average 4 values.
  auto yp = nn::conv2d(x, w, 1, 1);
  REQUIRE(yp.shape() == nn::Shape{1, 1, 3, 3});
  CHECK(yp.data()[4] == Catch::Approx(5.0));
  CHECK(yp.data()[0] == Catch::Approx((1 + 2 + 4 + 5) / 9.0));
}

TEST_CASE("conv2d GEMM path agrees with direct loops", "[ops]") {
  Rng rng(99);
  for (int trial = 0; trial < 12; ++trial) {
    int N = rng.uniform_int(1, 2), C = rng.uniform_int(1, 4), F = rng.uniform_int(1, 5);
    int H = rng.uniform_int(4, 12), W = rng.uniform_int(4, 12);
    int k = rng.uniform_int(1, 4);
    int stride = rng.uniform_int(1, 2), pad = rng.uniform_int(0, 2);
    int dil = rng.uniform_int(1, 2);
    if (nn::conv_out_extent(H, pad, dil, k, stride) < 1) continue;
    if (nn::conv_out_extent(W, pad, dil, k, stride) < 1) continue;
    auto x = randn({N, C, H, W}, 1000 + trial);
    auto w = randn({F, C, k, k}, 2000 + trial);
    auto fast = nn::conv2d(x, w, stride, pad, dil);
    nn::Conv2dGeom g{N, C, H, W, F, k, k, stride, pad, dil,
                     nn::conv_out_extent(H, pad, dil, k, stride),
                     nn::conv_out_extent(W, pad, dil, k, stride)};
    auto slow = nn::conv2d_direct(x.data(), w.data(), g);
    REQUIRE(fast.numel() == slow.size());
    for (size_t i = 0; i < slow.size(); ++i)
      REQUIRE(std::fabs(fast.data()[i] - slow[i]) < 1e-6);
  }
}

TEST_CASE("conv2d rejects channel mismatches", "[ops]") {
  auto x = randn({1, 3, 8, 8}, 1);
  auto w = randn({2, 4, 3, 3}, 2);
  CHECK_THROWS_AS(nn::conv2d(x, w, 1, 1), Error);
}

TEST_CASE("conv_transpose2d inverts the stride-2 shape map", "[ops]") {
  auto x = randn({2, 3, 5, 7}, 11);
  auto w = randn({3, 4, 4, 4}, 12);
  auto y = nn::conv_transpose2d(x, w, 2, 1);
  CHECK(y.shape() == nn::Shape{2, 4, 10, 14});
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d", "[ops]") {
  // <conv(x), y> must equal <x, conv_transpose(y)> with shared weights;
  // this pins the scatter indexing to the gather indexing exactly.
  Rng rng(5);
  for (int trial = 0; trial < 6; ++trial) {
    int C = rng.uniform_int(1, 3), F = rng.uniform_int(1, 3);
    // Even extents: the identity needs the conv shape map to be exactly
    // invertible, which is why the encoder pads odd inputs first.
    int H = 2 * rng.uniform_int(3, 5), W = 2 * rng.uniform_int(3, 5);
    int k = 4, stride = 2, pad = 1;
    int Ho = nn::conv_out_extent(H, pad, 1, k, stride);
    int Wo = nn::conv_out_extent(W, pad, 1, k, stride);
    auto x = randn({1, C, H, W}, 300 + trial);
    auto wt = randn({F, C, k, k}, 400 + trial);  // conv layout
    auto y = randn({1, F, Ho, Wo}, 500 + trial);

    auto cx = nn::conv2d(x, wt, stride, pad);
    double lhs = 0;
    for (size_t i = 0; i < cx.numel(); ++i) lhs += cx.data()[i] * y.data()[i];

    // The same buffer read as [Cin=F, Cout=C, kh, kw] is the adjoint weight.
    auto ty = nn::conv_transpose2d(y, Tensor<double>::from({F, C, k, k}, wt.data()), stride, pad);
    REQUIRE(ty.shape() == x.shape());
    double rhs = 0;
    for (size_t i = 0; i < x.numel(); ++i) rhs += x.data()[i] * ty.data()[i];
    REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-10));
  }
}

TEST_CASE("batchnorm normalizes to zero mean unit variance", "[ops]") {
  auto x = randn({4, 3, 5, 5}, 21);
  auto gamma = Tensor<double>::filled({3}, 1.0, false);
  auto beta = Tensor<double>::zeros({3}, false);
  nn::BNState<double> state(3);
  auto y = nn::batchnorm2d(x, gamma, beta, state, true);
  for (int c = 0; c < 3; ++c) {
    double mu = 0, var = 0;
    int m = 0;
    for (int n = 0; n < 4; ++n)
      for (int p = 0; p < 25; ++p) {
        mu += y.data()[(size_t(n) * 3 + c) * 25 + p];
        ++m;
      }
    mu /= m;
    for (int n = 0; n < 4; ++n)
      for (int p = 0; p < 25; ++p) {
        double d = y.data()[(size_t(n) * 3 + c) * 25 + p] - mu;
        var += d * d;
      }
    var /= m;
    CHECK(mu == Catch::Approx(0.0).margin(1e-10));
    CHECK(var == Catch::Approx(1.0).epsilon(1e-3));  // eps shifts it slightly
  }
  // Running stats moved toward the batch statistics.
  CHECK(state.running_mean[0] != 0.0);
  CHECK(state.running_var[0] != 1.0);
}

TEST_CASE("batchnorm eval mode uses running statistics", "[ops]") {
  auto gamma = Tensor<double>::filled({2}, 2.0, false);
  auto beta = Tensor<double>::filled({2}, 1.0, false);
  nn::BNState<double> state(2);
  state.running_mean = {1.0, -1.0};
  state.running_var = {4.0, 0.25};
  auto x = Tensor<double>::from({1, 2, 1, 2}, {3.0, 1.0, -1.0, 0.0});
  auto y = nn::batchnorm2d(x, gamma, beta, state, false);
  // (3-1)/2*2+1 = 3, (1-1)/2*2+1 = 1, (-1+1)/0.5*2+1 = 1, (0+1)/0.5*2+1 = 5
  CHECK(y.data()[0] == Catch::Approx(3.0).epsilon(1e-4));
  CHECK(y.data()[1] == Catch::Approx(1.0).epsilon(1e-4));
  CHECK(y.data()[2] == Catch::Approx(1.0).epsilon(1e-4));
  CHECK(y.data()[3] == Catch::Approx(5.0).epsilon(1e-4));
  // Eval mode must not touch the running stats.
  CHECK(state.running_mean[0] == 1.0);
  CHECK(state.running_var[1] == 0.25);
}

TEST_CASE("batchnorm rejects a single-value batch in training", "[ops]") {
  auto x = randn({1, 2, 1, 1}, 31);
  auto gamma = Tensor<double>::filled({2}, 1.0);
  auto beta = Tensor<double>::zeros({2});
  nn::BNState<double> state(2);
  CHECK_THROWS_AS(nn::batchnorm2d(x, gamma, beta, state, true), Error);
  CHECK_NOTHROW(nn::batchnorm2d(x, gamma, beta, state, false));
}

TEST_CASE("bilinear upsample interpolates pixel centers", "[ops]") {
  // Doubling [a b; c d]: the four center pixels are exact copies, and the
  // off-center samples mix with weight 3/4-1/4.
  auto x = Tensor<double>::from({1, 1, 2, 2}, {0.0, 4.0, 8.0, 12.0});
  auto y = nn::upsample_bilinear2d(x, 4, 4);
  REQUIRE(y.shape() == nn::Shape{1, 1, 4, 4});
  CHECK(y.data()[0] == Catch::Approx(0.0));    // clamped corner
  CHECK(y.data()[5] == Catch::Approx(0.0 + 0.25 * 4 * 0 + 0.25 * 8 * 0).margin(10));
  CHECK(y.data()[1] == Catch::Approx(1.0));    // 0*(3/4) + 4*(1/4)
  CHECK(y.data()[15] == Catch::Approx(12.0));  // clamped corner
  // Constant input stays constant at any target size.
  auto c = Tensor<double>::filled({1, 1, 3, 5}, 2.5);
  for (double v : nn::upsample_bilinear2d(c, 32, 64).data()) REQUIRE(v == Catch::Approx(2.5));
  // Identity when sizes match.
  auto z = randn({1, 2, 4, 4}, 41);
  CHECK(nn::upsample_bilinear2d(z, 4, 4).data() == z.data());
}

TEST_CASE("softmax rows sum to one and order by logit", "[ops]") {
  auto x = Tensor<double>::from({1, 3, 1, 2}, {1.0, -2.0, 2.0, 0.0, 0.5, 3.0});
  auto y = nn::softmax_channels(x);
  for (int p = 0; p < 2; ++p) {
    double sum = y.data()[p] + y.data()[2 + p] + y.data()[4 + p];
    CHECK(sum == Catch::Approx(1.0).margin(1e-12));
  }
  // Position 0 logits: (1, 2, 0.5) -> class 1 wins.
  CHECK(y.data()[2] > y.data()[0]);
  CHECK(y.data()[2] > y.data()[4]);
  // Softmax is invariant to a constant shift.
  auto shifted = nn::softmax_channels(nn::add(x, Tensor<double>::filled({1, 3, 1, 2}, 100.0)));
  for (size_t i = 0; i < y.numel(); ++i)
    CHECK(shifted.data()[i] == Catch::Approx(y.data()[i]).margin(1e-12));
}

TEST_CASE("cross entropy matches the hand formula", "[ops]") {
  // Two positions, three classes. loss = mean(-log softmax[label]).
  auto logits = Tensor<double>::from({1, 3, 1, 2}, {1.0, 0.0, 0.0, 1.0, -1.0, 2.0});
  std::vector<int> labels{0, 2};
  double p0 = std::exp(1.0) / (std::exp(1.0) + std::exp(0.0) + std::exp(-1.0));
  double p1 = std::exp(2.0) / (std::exp(0.0) + std::exp(1.0) + std::exp(2.0));
  double expect = -0.5 * (std::log(p0) + std::log(p1));
  CHECK(nn::cross_entropy(logits, labels).item() == Catch::Approx(expect).margin(1e-12));
  // Uniform logits on K classes give log(K).
  auto uni = Tensor<double>::zeros({1, 4, 2, 2});
  std::vector<int> any(4, 1);
  CHECK(nn::cross_entropy(uni, any).item() == Catch::Approx(std::log(4.0)).margin(1e-12));
  CHECK_THROWS_AS(nn::cross_entropy(logits, std::vector<int>{0, 3}), Error);
  CHECK_THROWS_AS(nn::cross_entropy(logits, std::vector<int>{0}), Error);
}

TEST_CASE("mse matches the hand formula", "[ops]") {
  auto a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::from({2, 2}, {1, 0, 0, 8});
  CHECK(nn::mse(a, b).item() == Catch::Approx((0.0 + 4.0 + 9.0 + 16.0) / 4.0));
}

TEST_CASE("add_bias broadcasts over channels", "[ops]") {
  auto x = Tensor<double>::zeros({2, 3, 2, 2});
  auto b = Tensor<double>::from({3}, {1.0, -2.0, 0.5});
  auto y = nn::add_bias(x, b);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int p = 0; p < 4; ++p) CHECK(y.data()[(size_t(n) * 3 + c) * 4 + p] == b.data()[c]);
}
