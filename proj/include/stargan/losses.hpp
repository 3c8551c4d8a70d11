#pragma once

#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "stargan/architectures.hpp"
#include "stargan/tensor.hpp"

namespace stargan {

struct LossWeights {
  double lambda_gp = 10.0;
  double lambda_cls = 1.0;
  double lambda_rec = 10.0;

  void validate() const;
};

/// One line of the training log. Fields are unweighted; unset fields were
/// not computed by the step that produced the report.
struct LossReport {
  std::optional<double> d_loss_real;
  std::optional<double> d_loss_fake;
  std::optional<double> d_loss_cls;
  std::optional<double> d_loss_gp;
  std::optional<double> g_loss_fake;
  std::optional<double> g_loss_rec;
  std::optional<double> g_loss_cls;

  bool all_finite() const;
};

/// Classical minimax value mean(log D(x)) + mean(log(1 - D(G(z)))).
/// Probabilities must lie strictly inside (0, 1).
Tensor gan_value(const Tensor& d_real_probs, const Tensor& d_fake_probs);

/// Any map from an image batch to critic scores.
using Critic = std::function<Tensor(const Tensor&)>;

/// One interpolation weight per sample, uniform on [0, 1).
std::vector<double> draw_interpolation_weights(std::size_t batch, std::mt19937_64& rng);

/// mean_n (||d critic(x_hat) / d x_hat_n||_2 - 1)^2 with
/// x_hat_n = a_n x_real_n + (1 - a_n) x_fake_n. The result stays
/// differentiable w.r.t. whatever parameters the critic closes over.
Tensor gradient_penalty_at(const Critic& critic, const Tensor& x_real, const Tensor& x_fake,
                           const std::vector<double>& alphas);
Tensor gradient_penalty(const Critic& critic, const Tensor& x_real, const Tensor& x_fake, std::mt19937_64& rng);
Tensor gradient_penalty(const Discriminator& d, const Tensor& x_real, const Tensor& x_fake, std::mt19937_64& rng);

struct DiscriminatorLoss {
  /// d_loss_real + d_loss_fake + lambda_gp * d_loss_gp
  Tensor total;
  LossReport report;
  /// Forward pass on the real batch, reused for the classification term.
  DiscriminatorOutput real;
};

/// Minimized form of the WGAN-GP critic objective.
DiscriminatorLoss adv_loss_d(const Discriminator& d, const Tensor& x_real, const Tensor& x_fake,
                             const LossWeights& weights, std::mt19937_64& rng);

/// Mean softmax cross-entropy of [N, c_dim] logits against domain indices.
Tensor cls_loss(const Tensor& cls_logits, const std::vector<int>& targets);

/// Cycle-reconstruction loss: mean absolute difference.
Tensor rec_loss(const Tensor& x, const Tensor& x_cycled);

}  // namespace stargan
