#pragma once

#include <cstddef>
#include <optional>

#include "stargan/tensor.hpp"

namespace stargan {

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// input [N,C,H,W], weight [F,C,kH,kW], bias [F] -> [N,F,H',W'] with
/// H' = (H + 2p - kH) / s + 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
              Conv2dGeometry geometry);

/// input [N,Cin,H,W], weight [Cin,Cout,kH,kW], bias [Cout] -> [N,Cout,H',W']
/// with H' = (H - 1) s - 2p + kH. The adjoint of conv2d with the same weight.
Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
                        Conv2dGeometry geometry);

/// Gradient of conv2d w.r.t. its input, for an input of spatial size
/// (height, width). Differentiable in both arguments.
Tensor conv2d_input_grad(const Tensor& grad_output, const Tensor& weight, std::size_t height, std::size_t width,
                         Conv2dGeometry geometry);

/// Gradient of conv2d w.r.t. its weight, for kernels of size (kh, kw).
/// Differentiable in both arguments.
Tensor conv2d_weight_grad(const Tensor& input, const Tensor& grad_output, std::size_t kh, std::size_t kw,
                          Conv2dGeometry geometry);

/// Per-(sample, channel) normalization over H*W using the biased variance,
/// followed by the per-channel affine gamma * x_hat + beta.
Tensor instance_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

}  // namespace stargan
