#pragma once

#include <cstdint>
#include <vector>

#include "stargan/tensor.hpp"

namespace stargan {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
  bool operator==(const AdamConfig&) const = default;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
};

/// Bias-corrected Adam over a fixed list of parameter tensors, updated in place:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   theta <- theta - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config);

  void step(const std::vector<Tensor>& grads);

  const AdamState& state() const { return state_; }
  AdamState& state() { return state_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamState state_;
};

}  // namespace stargan
