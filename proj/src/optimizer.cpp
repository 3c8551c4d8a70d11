#include "stargan/optimizer.hpp"

#include <cmath>

#include "stargan/errors.hpp"

namespace stargan {

void AdamConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ContractError("adam: learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ContractError("adam: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ContractError("adam: eps must be positive");
}

Adam::Adam(std::vector<Tensor> params, AdamConfig config) : params_(std::move(params)) {
  config.validate();
  state_.config = config;
  for (const Tensor& p : params_) {
    state_.first_moment.emplace_back(p.shape());
    state_.second_moment.emplace_back(p.shape());
  }
}

void Adam::step(const std::vector<Tensor>& grads) {
  if (grads.size() != params_.size()) {
    throw DimensionError("adam: expected " + std::to_string(params_.size()) + " gradients, got " +
                         std::to_string(grads.size()));
  }
  for (std::size_t k = 0; k < params_.size(); ++k) {
    if (grads[k].shape() != params_[k].shape()) {
      throw DimensionError("adam: gradient " + std::to_string(k) + " has shape " + shape_to_string(grads[k].shape()) +
                           ", parameter has " + shape_to_string(params_[k].shape()));
    }
  }

  const AdamConfig& c = state_.config;
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);

  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto theta = params_[k].mutable_data();
    auto m = state_.first_moment[k].mutable_data();
    auto v = state_.second_moment[k].mutable_data();
    auto g = grads[k].data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      theta[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

}  // namespace stargan
