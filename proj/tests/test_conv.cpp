#include <cmath>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "stargan/conv.hpp"
#include "stargan/errors.hpp"

using namespace stargan;
using stargan::testing::max_gradient_error;

namespace {

// Direct convolution sum, used as an independent forward oracle.
Tensor naive_conv(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t f = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  Tensor y({n, f, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < f; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = 0.0;
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t a = 0; a < kh; ++a)
              for (std::size_t bb = 0; bb < kw; ++bb) {
                const long iy = static_cast<long>(i * stride + a) - static_cast<long>(pad);
                const long ix = static_cast<long>(j * stride + bb) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
                acc += x.at(((b * c + ch) * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix)) *
                       w.at(((o * c + ch) * kh + a) * kw + bb);
              }
          y.mutable_data()[((b * f + o) * oh + i) * ow + j] = acc;
        }
  return y;
}

}  // namespace

TEST_CASE("conv2d identity and sum kernels") {
  std::mt19937_64 rng(1);
  Tensor x = Tensor::randn({1, 1, 3, 3}, rng);
  Tensor one = Tensor::ones({1, 1, 1, 1});
  Tensor y = conv2d(x, one, std::nullopt, {1, 0});
  CHECK(y.shape() == x.shape());
  for (std::size_t i = 0; i < 9; ++i) CHECK(y.at(i) == x.at(i));

  Tensor s = conv2d(Tensor::ones({1, 1, 2, 2}), Tensor::ones({1, 1, 2, 2}), std::nullopt, {1, 0});
  CHECK(s.shape() == Shape{1, 1, 1, 1});
  CHECK(s.item() == 4.0);
}

TEST_CASE("conv2d output extent and bias") {
  std::mt19937_64 rng(2);
  Tensor x = Tensor::randn({2, 3, 9, 7}, rng);
  Tensor w = Tensor::randn({4, 3, 4, 4}, rng);
  Tensor b({4}, {1, 2, 3, 4});
  Tensor y = conv2d(x, w, b, {2, 1});
  CHECK(y.shape() == Shape{2, 4, 4, 3});
  Tensor ref = naive_conv(x, w, 2, 1);
  for (std::size_t i = 0; i < y.numel(); ++i) {
    const std::size_t channel = (i / 12) % 4;
    CHECK(std::abs(y.at(i) - ref.at(i) - b.at(channel)) < 1e-12);
  }
}

TEST_CASE("conv2d shape errors") {
  CHECK_THROWS_AS(conv2d(Tensor::ones({1, 2, 4, 4}), Tensor::ones({1, 3, 3, 3}), std::nullopt, {1, 0}),
                  DimensionError);
  CHECK_THROWS_AS(conv2d(Tensor::ones({1, 1, 2, 2}), Tensor::ones({1, 1, 5, 5}), std::nullopt, {1, 1}),
                  DimensionError);
  CHECK_THROWS_AS(conv2d(Tensor::ones({1, 1, 4, 4}), Tensor::ones({2, 1, 3, 3}), Tensor::ones({3}), {1, 1}),
                  DimensionError);
  CHECK_THROWS_AS(conv_transpose2d(Tensor::ones({1, 2, 4, 4}), Tensor::ones({3, 1, 4, 4}), std::nullopt, {2, 1}),
                  DimensionError);
}

TEST_CASE("conv2d weight gradient matches finite differences") {
  std::mt19937_64 rng(3);
  Tensor x = Tensor::randn({2, 3, 8, 8}, rng);
  Tensor w = Tensor::randn({4, 3, 3, 3}, rng);
  auto f = [](const std::vector<Tensor>& in) { return sum(conv2d(in[0], in[1], std::nullopt, {1, 1})); };
  CHECK(max_gradient_error(f, {x, w}) < 1e-6);
}

TEST_CASE("conv_transpose2d identity, extent and finite differences") {
  std::mt19937_64 rng(4);
  Tensor x = Tensor::randn({1, 1, 3, 3}, rng);
  Tensor y = conv_transpose2d(x, Tensor::ones({1, 1, 1, 1}), std::nullopt, {1, 0});
  for (std::size_t i = 0; i < 9; ++i) CHECK(y.at(i) == x.at(i));

  Tensor up = conv_transpose2d(Tensor::randn({2, 4, 5, 5}, rng), Tensor::randn({4, 3, 4, 4}, rng),
                               Tensor::randn({3}, rng), {2, 1});
  CHECK(up.shape() == Shape{2, 3, 10, 10});

  Tensor xin = Tensor::randn({2, 3, 4, 4}, rng);
  Tensor w = Tensor::randn({3, 2, 4, 4}, rng);
  Tensor b = Tensor::randn({2}, rng);
  Tensor probe = conv_transpose2d(xin, w, b, {2, 1});
  Tensor cot = Tensor::randn(probe.shape(), rng);
  auto f = [&](const std::vector<Tensor>& in) {
    return sum(mul_const(conv_transpose2d(in[0], in[1], in[2], {2, 1}), cot));
  };
  CHECK(max_gradient_error(f, {xin, w, b}) < 1e-6);
}

TEST_CASE("conv_transpose2d equals the input gradient of conv2d") {
  std::mt19937_64 rng(5);
  Tensor w = Tensor::randn({3, 2, 4, 4}, rng);    // conv2d: 2 -> 3 channels
  Tensor g = Tensor::randn({1, 3, 2, 2}, rng);    // cotangent of the conv2d output
  Tensor x = Tensor::zeros({1, 2, 4, 4}).set_requires_grad(true);
  Tensor y = conv2d(x, w, std::nullopt, {2, 1});
  REQUIRE(y.shape() == g.shape());
  Tensor via_autodiff = grad(sum(mul_const(y, g)), {x})[0];
  Tensor direct = conv_transpose2d(g, w, std::nullopt, {2, 1});
  REQUIRE(direct.shape() == via_autodiff.shape());
  for (std::size_t i = 0; i < direct.numel(); ++i) CHECK(std::abs(direct.at(i) - via_autodiff.at(i)) < 1e-12);
}

TEST_CASE("adjointness inner-product test") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t stride = 1 + static_cast<std::size_t>(trial % 2);
    const std::size_t pad = static_cast<std::size_t>(trial % 3);
    Tensor x = Tensor::randn({2, 3, 7, 6}, rng);
    Tensor w = Tensor::randn({4, 3, 3, 3}, rng);
    Tensor cx = conv2d(x, w, std::nullopt, {stride, pad});
    Tensor y = Tensor::randn(cx.shape(), rng);
    Tensor back = conv2d_input_grad(y, w, 7, 6, {stride, pad});
    CHECK(std::abs(inner_product(cx, y) - inner_product(x, back)) < 1e-10);
  }
}

TEST_CASE("conv gradient checks over random shapes") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> small(1, 3);
  double worst_conv = 0.0, worst_convt = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = small(rng), c = small(rng), f = small(rng), k = small(rng) + 1;
    const std::size_t stride = small(rng) % 2 + 1, pad = small(rng) - 1;
    const std::size_t h = k + small(rng) + 1, w = k + small(rng);
    Tensor x = Tensor::randn({n, c, h, w}, rng);
    Tensor wt = Tensor::randn({f, c, k, k}, rng);
    Tensor b = Tensor::randn({f}, rng);
    Tensor cot = Tensor::randn(conv2d(x, wt, b, {stride, pad}).shape(), rng);
    worst_conv = std::max(worst_conv, max_gradient_error(
                                          [&](const auto& in) {
                                            return sum(mul_const(conv2d(in[0], in[1], in[2], {stride, pad}), cot));
                                          },
                                          {x, wt, b}));

    Tensor xt = Tensor::randn({n, f, h, w}, rng);
    Tensor wtt = Tensor::randn({f, c, k, k}, rng);
    Tensor cot2 = Tensor::randn(conv_transpose2d(xt, wtt, std::nullopt, {stride, 0}).shape(), rng);
    worst_convt = std::max(worst_convt, max_gradient_error(
                                            [&](const auto& in) {
                                              return sum(mul_const(conv_transpose2d(in[0], in[1], std::nullopt, {stride, 0}), cot2));
                                            },
                                            {xt, wtt}));
  }
  CHECK(worst_conv < 1e-6);
  CHECK(worst_convt < 1e-6);
}

TEST_CASE("instance_norm normalizes each slice") {
  std::mt19937_64 rng(8);
  Tensor x = Tensor::randn({2, 3, 5, 4}, rng, 3.0);
  Tensor y = instance_norm(x, Tensor::ones({3}), Tensor::zeros({3}));
  for (std::size_t s = 0; s < 6; ++s) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < 20; ++i) m += y.at(s * 20 + i);
    m /= 20.0;
    for (std::size_t i = 0; i < 20; ++i) v += (y.at(s * 20 + i) - m) * (y.at(s * 20 + i) - m);
    v /= 20.0;
    CHECK(std::abs(m) < 1e-9);
    CHECK(std::abs(v - 1.0) < 1e-4);
  }
  Tensor constant = instance_norm(Tensor::full({1, 2, 3, 3}, 4.2), Tensor::ones({2}), Tensor::zeros({2}));
  for (double v : constant.data()) CHECK(v == 0.0);
}

TEST_CASE("instance_norm gradients match finite differences") {
  std::mt19937_64 rng(9);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = Tensor::randn({1, 2, 3, 3}, rng);
    Tensor gamma = Tensor::randn({2}, rng);
    Tensor beta = Tensor::randn({2}, rng);
    Tensor cot = Tensor::randn({1, 2, 3, 3}, rng);
    worst = std::max(worst, max_gradient_error(
                                [&](const auto& in) { return sum(mul_const(instance_norm(in[0], in[1], in[2]), cot)); },
                                {x, gamma, beta}));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("gradient-norm penalty of a two-layer conv net is differentiable in its parameters") {
  std::mt19937_64 rng(10);
  Tensor x = Tensor::randn({1, 1, 6, 6}, rng);
  Tensor w1 = Tensor::randn({2, 1, 3, 3}, rng, 0.5);
  Tensor b1 = Tensor::randn({2}, rng, 0.1);
  Tensor w2 = Tensor::randn({1, 2, 3, 3}, rng, 0.5);
  auto f = [&](const std::vector<Tensor>& params) {
    GradModeGuard on(true);
    Tensor xin = x.clone().set_requires_grad(true);
    Tensor h = tanh(conv2d(xin, params[0], params[1], {1, 1}));
    Tensor out = sum(conv2d(h, params[2], std::nullopt, {2, 0}));
    Tensor gx = grad(out, {xin}, true)[0];
    return sum(square(gx));
  };
  CHECK(max_gradient_error(f, {w1, b1, w2}) < 1e-4);
}
