#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "stargan/conv.hpp"
#include "stargan/errors.hpp"
#include "stargan/losses.hpp"

using namespace stargan;

namespace {

// Per-sample score sum(u_n * x_n) with ||u_n|| = 1, so the input gradient has unit norm.
Critic unit_linear_critic(const Tensor& u) {
  return [u](const Tensor& x) {
    Shape s(x.rank(), 1);
    s[0] = x.dim(0);
    return sum_to(mul_const(x, u), s);
  };
}

}  // namespace

TEST_CASE("gan_value anchors") {
  Tensor half = Tensor::full({8}, 0.5);
  CHECK(std::abs(gan_value(half, half).item() + 2.0 * std::log(2.0)) < 1e-12);
  CHECK(std::abs(gan_value(half, half).item() + 1.386294) < 1e-6);
  const double near_perfect = gan_value(Tensor::full({4}, 1.0 - 1e-12), Tensor::full({4}, 1e-12)).item();
  CHECK(std::abs(near_perfect) < 1e-10);
  CHECK_THROWS_AS(gan_value(Tensor::full({2}, 1.0), half), DomainError);
  CHECK_THROWS_AS(gan_value(half, Tensor::full({2}, 0.0)), DomainError);
}

TEST_CASE("gan_value matches direct summation") {
  std::mt19937_64 rng(1);
  Tensor real = Tensor::uniform({13}, rng, 0.01, 0.99);
  Tensor fake = Tensor::uniform({7}, rng, 0.01, 0.99);
  double a = 0.0, b = 0.0;
  for (double p : real.data()) a += std::log(p);
  for (double p : fake.data()) b += std::log(1.0 - p);
  CHECK(std::abs(gan_value(real, fake).item() - (a / 13.0 + b / 7.0)) < 1e-12);
}

TEST_CASE("gan_value over constant discriminators peaks at one half when distributions coincide") {
  double best_p = 0.0, best_v = -1e300;
  for (int i = 1; i < 1000; ++i) {
    const double p = i / 1000.0;
    const double v = gan_value(Tensor::full({5}, p), Tensor::full({5}, p)).item();
    if (v > best_v) {
      best_v = v;
      best_p = p;
    }
  }
  CHECK(best_p == doctest::Approx(0.5));
}

TEST_CASE("gradient penalty of a unit-norm linear critic is zero") {
  std::mt19937_64 rng(2);
  Tensor u = Tensor::randn({3, 2, 4, 4}, rng);
  for (std::size_t n = 0; n < 3; ++n) {
    double norm = 0.0;
    for (std::size_t i = 0; i < 32; ++i) norm += u.at(n * 32 + i) * u.at(n * 32 + i);
    for (std::size_t i = 0; i < 32; ++i) u.mutable_data()[n * 32 + i] /= std::sqrt(norm);
  }
  Tensor real = Tensor::randn({3, 2, 4, 4}, rng);
  Tensor fake = Tensor::randn({3, 2, 4, 4}, rng);
  CHECK(std::abs(gradient_penalty(unit_linear_critic(u), real, fake, rng).item()) < 1e-10);
}

TEST_CASE("gradient penalty of 2*sum(x) on one element is one") {
  std::mt19937_64 rng(3);
  Critic twice = [](const Tensor& x) { return scalar_mul(x, 2.0); };
  CHECK(gradient_penalty(twice, Tensor::full({1}, 0.3), Tensor::full({1}, -0.4), rng).item() ==
        doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(gradient_penalty(twice, Tensor::zeros({2}), Tensor::zeros({3}), rng), DimensionError);
}

TEST_CASE("gradient penalty is non-negative") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Discriminator d = build_discriminator(DiscriminatorConfig{8, 2, 3, 2, 3}, static_cast<std::uint64_t>(trial));
    Tensor real = Tensor::randn({2, 3, 8, 8}, rng);
    Tensor fake = Tensor::randn({2, 3, 8, 8}, rng);
    CHECK(gradient_penalty(d, real, fake, rng).item() >= 0.0);
  }
}

TEST_CASE("penalty parameter gradient of a two-conv critic matches finite differences") {
  std::mt19937_64 rng(5);
  Tensor w1 = Tensor::randn({2, 1, 3, 3}, rng, 0.7);
  Tensor b1 = Tensor::randn({2}, rng, 0.1);
  Tensor w2 = Tensor::randn({1, 2, 3, 3}, rng, 0.7);
  Tensor real = Tensor::randn({1, 1, 8, 8}, rng);
  Tensor fake = Tensor::randn({1, 1, 8, 8}, rng);
  const std::vector<double> alphas = draw_interpolation_weights(1, rng);
  auto penalty = [&](const std::vector<Tensor>& p) {
    Critic critic = [&p](const Tensor& x) {
      Tensor h = leaky_relu(conv2d(x, p[0], p[1], {2, 1}), kLeakySlope);
      return conv2d(h, p[2], std::nullopt, {1, 1});
    };
    return gradient_penalty_at(critic, real, fake, alphas);
  };
  CHECK(stargan::testing::max_gradient_error(penalty, {w1, b1, w2}) < 1e-4);
}

TEST_CASE("adv_loss_d of a zero-weight critic") {
  Discriminator d(DiscriminatorConfig{8, 2, 7, 2, 3});
  d.fill(0.0);
  std::mt19937_64 rng(6);
  auto loss = adv_loss_d(d, Tensor::randn({2, 3, 8, 8}, rng), Tensor::randn({2, 3, 8, 8}, rng), LossWeights{}, rng);
  CHECK(*loss.report.d_loss_real == 0.0);
  CHECK(*loss.report.d_loss_fake == 0.0);
  CHECK(*loss.report.d_loss_gp == 1.0);
  CHECK(loss.total.item() == 10.0);
}

TEST_CASE("adv_loss_d equals the hand-composed objective") {
  Discriminator d = build_discriminator(DiscriminatorConfig{8, 2, 7, 2, 3}, 7);
  std::mt19937_64 data_rng(8);
  Tensor real = Tensor::randn({3, 3, 8, 8}, data_rng);
  Tensor fake = Tensor::randn({3, 3, 8, 8}, data_rng);
  LossWeights w{2.5, 1.0, 10.0};

  std::mt19937_64 rng(9);
  std::mt19937_64 replay = rng;
  auto loss = adv_loss_d(d, real, fake, w, rng);

  const auto alphas = draw_interpolation_weights(3, replay);
  double real_mean = 0.0, fake_mean = 0.0;
  Tensor sr = d.forward(real).src, sf = d.forward(fake).src;
  for (double v : sr.data()) real_mean += v;
  for (double v : sf.data()) fake_mean += v;
  real_mean /= static_cast<double>(sr.numel());
  fake_mean /= static_cast<double>(sf.numel());
  const double gp =
      gradient_penalty_at([&d](const Tensor& x) { return d.forward_src(x); }, real, fake, alphas).item();
  CHECK(std::abs(loss.total.item() - (-real_mean + fake_mean + 2.5 * gp)) < 1e-12);
  CHECK(std::abs(*loss.report.d_loss_gp - gp) < 1e-12);
}

TEST_CASE("adversarial objective is invariant under batch permutation with fixed alphas") {
  Discriminator d = build_discriminator(DiscriminatorConfig{8, 2, 7, 2, 3}, 10);
  std::mt19937_64 rng(11);
  Tensor real = Tensor::randn({4, 3, 8, 8}, rng);
  Tensor fake = Tensor::randn({4, 3, 8, 8}, rng);
  std::vector<double> alphas = draw_interpolation_weights(4, rng);
  Critic critic = [&d](const Tensor& x) { return d.forward_src(x); };
  auto objective = [&](const Tensor& r, const Tensor& f, const std::vector<double>& a) {
    return -mean(critic(r)).item() + mean(critic(f)).item() + 10.0 * gradient_penalty_at(critic, r, f, a).item();
  };
  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  auto permute = [&](const Tensor& t) {
    std::vector<Tensor> rows;
    for (std::size_t p : perm) rows.push_back(slice(t, 0, p, 1));
    return concat(rows, 0);
  };
  std::vector<double> permuted_alphas;
  for (std::size_t p : perm) permuted_alphas.push_back(alphas[p]);
  CHECK(std::abs(objective(real, fake, alphas) - objective(permute(real), permute(fake), permuted_alphas)) < 1e-12);
}

TEST_CASE("one backward pass reaches every discriminator parameter") {
  Discriminator d = build_discriminator(DiscriminatorConfig{8, 2, 7, 2, 3}, 12);
  std::mt19937_64 rng(13);
  Tensor real = Tensor::randn({2, 3, 8, 8}, rng);
  auto loss = adv_loss_d(d, real, Tensor::randn({2, 3, 8, 8}, rng), LossWeights{}, rng);
  Tensor total = add(loss.total, cls_loss(loss.real.cls, {1, 4}));
  auto grads = grad(total, d.parameter_tensors());
  for (const Tensor& g : grads) {
    const bool nonzero = std::any_of(g.data().begin(), g.data().end(), [](double v) { return v != 0.0; });
    CHECK(nonzero);
  }
}

TEST_CASE("cls_loss anchors") {
  CHECK(std::abs(cls_loss(Tensor::zeros({3, 7}), {0, 1, 2}).item() - std::log(7.0)) < 1e-12);
  double previous = 1e9;
  for (double margin : {1.0, 5.0, 20.0, 60.0}) {
    Tensor logits({1, 7});
    logits.mutable_data()[3] = margin;
    const double v = cls_loss(logits, {3}).item();
    CHECK(v < previous);
    previous = v;
  }
  CHECK(previous < 1e-20);
}

TEST_CASE("rec_loss anchors and direct oracle") {
  std::mt19937_64 rng(14);
  Tensor x = Tensor::randn({2, 3, 4, 4}, rng);
  CHECK(rec_loss(x, x).item() == 0.0);
  CHECK(rec_loss(Tensor::zeros({6}), Tensor::ones({6})).item() == 1.0);
  Tensor y = Tensor::randn({2, 3, 4, 4}, rng);
  double direct = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) direct += std::abs(x.at(i) - y.at(i));
  CHECK(std::abs(rec_loss(x, y).item() - direct / static_cast<double>(x.numel())) < 1e-12);
  CHECK_THROWS_AS(rec_loss(x, Tensor::zeros({2})), DimensionError);
}
