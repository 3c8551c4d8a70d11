#include "stargan/losses.hpp"

#include <cmath>

#include "stargan/errors.hpp"

namespace stargan {

void LossWeights::validate() const {
  if (!(lambda_gp >= 0.0) || !(lambda_cls >= 0.0) || !(lambda_rec >= 0.0)) {
    throw ContractError("loss weights must be non-negative");
  }
}

bool LossReport::all_finite() const {
  for (const auto& f : {d_loss_real, d_loss_fake, d_loss_cls, d_loss_gp, g_loss_fake, g_loss_rec, g_loss_cls}) {
    if (f && !std::isfinite(*f)) return false;
  }
  return true;
}

Tensor gan_value(const Tensor& d_real_probs, const Tensor& d_fake_probs) {
  for (const Tensor* t : {&d_real_probs, &d_fake_probs}) {
    for (double p : t->data()) {
      if (!(p > 0.0 && p < 1.0)) throw DomainError("gan_value: probabilities must lie in (0, 1)");
    }
  }
  return add(mean(log(d_real_probs)), mean(log(add_scalar(neg(d_fake_probs), 1.0))));
}

std::vector<double> draw_interpolation_weights(std::size_t batch, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<double> alphas(batch);
  for (double& a : alphas) a = uniform(rng);
  return alphas;
}

Tensor gradient_penalty_at(const Critic& critic, const Tensor& x_real, const Tensor& x_fake,
                           const std::vector<double>& alphas) {
  if (x_real.shape() != x_fake.shape()) {
    throw DimensionError("gradient_penalty: real " + shape_to_string(x_real.shape()) + " vs fake " +
                         shape_to_string(x_fake.shape()));
  }
  if (x_real.rank() < 1 || alphas.size() != x_real.dim(0)) {
    throw DimensionError("gradient_penalty: one interpolation weight per sample required");
  }
  const bool caller_records = grad_enabled();
  // The inner gradient needs the tape even when the caller evaluates without it.
  GradModeGuard on(true);

  const std::size_t n = x_real.dim(0);
  const std::size_t per_sample = x_real.numel() / std::max<std::size_t>(n, 1);
  Tensor mixed(x_real.shape());
  {
    auto r = x_real.data();
    auto f = x_fake.data();
    auto dst = mixed.mutable_data();
    for (std::size_t b = 0; b < n; ++b) {
      const double a = alphas[b];
      for (std::size_t i = b * per_sample; i < (b + 1) * per_sample; ++i) dst[i] = a * r[i] + (1.0 - a) * f[i];
    }
  }
  mixed.set_requires_grad(true);

  Tensor scores = critic(mixed);
  Tensor input_grad = grad(sum(scores), {mixed}, true)[0];
  Shape per_sample_shape(x_real.rank(), 1);
  per_sample_shape[0] = n;
  Tensor norms = sqrt(sum_to(square(input_grad), per_sample_shape));
  Tensor penalty = mean(square(add_scalar(norms, -1.0)));
  return caller_records ? penalty : penalty.detach();
}

Tensor gradient_penalty(const Critic& critic, const Tensor& x_real, const Tensor& x_fake, std::mt19937_64& rng) {
  if (x_real.rank() < 1) throw DimensionError("gradient_penalty: batch axis required");
  return gradient_penalty_at(critic, x_real, x_fake, draw_interpolation_weights(x_real.dim(0), rng));
}

Tensor gradient_penalty(const Discriminator& d, const Tensor& x_real, const Tensor& x_fake, std::mt19937_64& rng) {
  return gradient_penalty([&d](const Tensor& x) { return d.forward_src(x); }, x_real, x_fake, rng);
}

DiscriminatorLoss adv_loss_d(const Discriminator& d, const Tensor& x_real, const Tensor& x_fake,
                             const LossWeights& weights, std::mt19937_64& rng) {
  if (x_real.shape() != x_fake.shape()) {
    throw DimensionError("adv_loss_d: real and fake batches differ in shape");
  }
  DiscriminatorLoss out;
  out.real = d.forward(x_real);
  Tensor loss_real = neg(mean(out.real.src));
  Tensor loss_fake = mean(d.forward_src(x_fake));
  Tensor penalty = gradient_penalty(d, x_real, x_fake, rng);
  out.total = add(add(loss_real, loss_fake), scalar_mul(penalty, weights.lambda_gp));
  out.report.d_loss_real = loss_real.item();
  out.report.d_loss_fake = loss_fake.item();
  out.report.d_loss_gp = penalty.item();
  return out;
}

Tensor cls_loss(const Tensor& cls_logits, const std::vector<int>& targets) {
  return softmax_cross_entropy(cls_logits, targets);
}

Tensor rec_loss(const Tensor& x, const Tensor& x_cycled) { return l1_distance(x, x_cycled); }

}  // namespace stargan
