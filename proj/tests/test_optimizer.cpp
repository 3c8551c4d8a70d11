#include <cmath>

#include "doctest.h"
#include "stargan/errors.hpp"
#include "stargan/optimizer.hpp"

using namespace stargan;

TEST_CASE("zero gradient leaves parameters unchanged and advances t") {
  Tensor p({3}, {1.0, -2.0, 0.5});
  Adam adam({p}, AdamConfig{});
  adam.step({Tensor::zeros({3})});
  CHECK(adam.state().step == 1);
  CHECK(p.at(0) == 1.0);
  CHECK(p.at(1) == -2.0);
  CHECK(p.at(2) == 0.5);
}

TEST_CASE("first step with a constant gradient moves by about the learning rate") {
  Tensor p = Tensor::scalar(0.0);
  Adam adam({p}, AdamConfig{1e-4, 0.5, 0.999, 1e-8});
  adam.step({Tensor::scalar(2.0)});
  // Bias correction gives m_hat = g and sqrt(v_hat) = |g|.
  CHECK(std::abs(p.item() - (-1e-4 * 2.0 / (2.0 + 1e-8))) < 1e-18);
}

TEST_CASE("ten steps on theta^2 strictly decrease the objective") {
  Tensor p = Tensor::scalar(1.0);
  Adam adam({p}, AdamConfig{1e-2, 0.5, 0.999, 1e-8});
  double previous = p.item() * p.item();
  for (int i = 0; i < 10; ++i) {
    adam.step({Tensor::scalar(2.0 * p.item())});
    const double f = p.item() * p.item();
    CHECK(f < previous);
    previous = f;
  }
}

TEST_CASE("update magnitude is independent of gradient scale") {
  for (double g : {1e-3, 1.0, 1e3}) {
    Tensor p = Tensor::scalar(0.0);
    Adam adam({p}, AdamConfig{});
    for (int i = 0; i < 5; ++i) adam.step({Tensor::scalar(g)});
    CHECK(std::abs(p.item() + 5e-4) < 1e-8);
  }
}

TEST_CASE("identical optimizers produce bitwise identical parameters") {
  auto run = [] {
    Tensor p({4}, {0.1, 0.2, 0.3, 0.4});
    Adam adam({p}, AdamConfig{});
    for (int i = 0; i < 20; ++i) {
      Tensor g({4}, {std::sin(i * 1.0), std::cos(i * 2.0), 0.5 * i, -1.0});
      adam.step({g});
    }
    return std::vector<double>(p.data().begin(), p.data().end());
  };
  CHECK(run() == run());
}

TEST_CASE("moment shapes and errors") {
  Tensor a({2, 3});
  Tensor b({4});
  Adam adam({a, b}, AdamConfig{});
  CHECK(adam.state().first_moment[0].shape() == Shape{2, 3});
  CHECK(adam.state().second_moment[1].shape() == Shape{4});
  CHECK_THROWS_AS(adam.step({Tensor::zeros({2, 3})}), DimensionError);
  CHECK_THROWS_AS(adam.step({Tensor::zeros({2, 3}), Tensor::zeros({5})}), DimensionError);
  CHECK_THROWS_AS(Adam({a}, AdamConfig{1e-4, 1.0, 0.999, 1e-8}), ContractError);
}
