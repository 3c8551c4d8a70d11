#include "stargan/conv.hpp"

#include <Eigen/Core>

#include "stargan/errors.hpp"

namespace stargan {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// Extents of one convolution, in conv2d orientation: input [N,C,H,W],
// weight [F,C,KH,KW], output [N,F,OH,OW].
struct ConvDims {
  std::size_t n, c, h, w, f, kh, kw, oh, ow;
  std::size_t stride, pad;

  std::size_t patch() const { return c * kh * kw; }
  std::size_t out_pixels() const { return oh * ow; }
};

std::size_t out_extent(std::size_t in, std::size_t k, Conv2dGeometry g, const char* op) {
  if (g.stride == 0) throw ContractError(std::string(op) + ": stride must be positive");
  if (k > in + 2 * g.padding) {
    throw DimensionError(std::string(op) + ": kernel larger than padded input");
  }
  return (in + 2 * g.padding - k) / g.stride + 1;
}

void require_rank4(const Tensor& t, const char* op, const char* what) {
  if (t.rank() != 4) {
    throw DimensionError(std::string(op) + ": " + what + " must be rank 4, got " + shape_to_string(t.shape()));
  }
}

// cols[(c*KH + i)*KW + j][oy*OW + ox] = x[c][oy*s - p + i][ox*s - p + j]
void im2col(const double* x, const ConvDims& d, double* cols) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(d.pad);
  for (std::size_t c = 0; c < d.c; ++c) {
    const double* plane = x + c * d.h * d.w;
    for (std::size_t i = 0; i < d.kh; ++i) {
      for (std::size_t j = 0; j < d.kw; ++j) {
        double* row = cols + ((c * d.kh + i) * d.kw + j) * d.out_pixels();
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * d.stride + i) - pad;
          double* dst = row + oy * d.ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) {
            std::fill_n(dst, d.ow, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * d.w;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * d.stride + j) - pad;
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvDims& d, double* x) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(d.pad);
  for (std::size_t c = 0; c < d.c; ++c) {
    double* plane = x + c * d.h * d.w;
    for (std::size_t i = 0; i < d.kh; ++i) {
      for (std::size_t j = 0; j < d.kw; ++j) {
        const double* row = cols + ((c * d.kh + i) * d.kw + j) * d.out_pixels();
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * d.stride + i) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * d.w;
          const double* src = row + oy * d.ow;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * d.stride + j) - pad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(d.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvDims& d) { return d.kh == 1 && d.kw == 1 && d.stride == 1 && d.pad == 0; }

Tensor forward_kernel(const Tensor& input, const Tensor& weight, const ConvDims& d) {
  Tensor out({d.n, d.f, d.oh, d.ow});
  std::vector<double> cols(is_pointwise(d) ? 0 : d.patch() * d.out_pixels());
  ConstMatrixMap wmat(weight.data().data(), d.f, d.patch());
  const double* x = input.data().data();
  double* y = out.mutable_data().data();
  for (std::size_t n = 0; n < d.n; ++n) {
    const double* xn = x + n * d.c * d.h * d.w;
    const double* colptr = xn;
    if (!is_pointwise(d)) {
      im2col(xn, d, cols.data());
      colptr = cols.data();
    }
    MatrixMap yn(y + n * d.f * d.out_pixels(), d.f, d.out_pixels());
    yn.noalias() = wmat * ConstMatrixMap(colptr, d.patch(), d.out_pixels());
  }
  return out;
}

Tensor input_grad_kernel(const Tensor& grad_output, const Tensor& weight, const ConvDims& d) {
  Tensor out({d.n, d.c, d.h, d.w});
  RowMatrix cols(d.patch(), d.out_pixels());
  ConstMatrixMap wmat(weight.data().data(), d.f, d.patch());
  const double* gy = grad_output.data().data();
  double* gx = out.mutable_data().data();
  for (std::size_t n = 0; n < d.n; ++n) {
    ConstMatrixMap gyn(gy + n * d.f * d.out_pixels(), d.f, d.out_pixels());
    double* gxn = gx + n * d.c * d.h * d.w;
    if (is_pointwise(d)) {
      MatrixMap(gxn, d.patch(), d.out_pixels()).noalias() = wmat.transpose() * gyn;
      continue;
    }
    cols.noalias() = wmat.transpose() * gyn;
    col2im(cols.data(), d, gxn);
  }
  return out;
}

Tensor weight_grad_kernel(const Tensor& input, const Tensor& grad_output, const ConvDims& d) {
  Tensor out({d.f, d.c, d.kh, d.kw});
  MatrixMap gw(out.mutable_data().data(), d.f, d.patch());
  std::vector<double> cols(is_pointwise(d) ? 0 : d.patch() * d.out_pixels());
  const double* x = input.data().data();
  const double* gy = grad_output.data().data();
  for (std::size_t n = 0; n < d.n; ++n) {
    const double* xn = x + n * d.c * d.h * d.w;
    const double* colptr = xn;
    if (!is_pointwise(d)) {
      im2col(xn, d, cols.data());
      colptr = cols.data();
    }
    ConstMatrixMap gyn(gy + n * d.f * d.out_pixels(), d.f, d.out_pixels());
    gw.noalias() += gyn * ConstMatrixMap(colptr, d.patch(), d.out_pixels()).transpose();
  }
  return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t channels = x.dim(1);
  if (bias.shape() != Shape{channels}) {
    throw DimensionError("bias must have shape [" + std::to_string(channels) + "], got " +
                         shape_to_string(bias.shape()));
  }
  Tensor out = x.clone();
  const std::size_t plane = x.dim(2) * x.dim(3);
  auto dst = out.mutable_data();
  auto b = bias.data();
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      double* p = dst.data() + (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += b[c];
    }
  }
  return record_op(std::move(out), "add_channel_bias", {x, bias},
                   [channels](const Tensor& g, const std::vector<bool>& needs) {
                     Tensor gb = needs[1] ? reshape(sum_to(g, {1, channels, 1, 1}), {channels}) : Tensor();
                     return std::vector<Tensor>{g, gb};
                   });
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
              Conv2dGeometry geometry) {
  require_rank4(input, "conv2d", "input");
  require_rank4(weight, "conv2d", "weight");
  if (weight.dim(1) != input.dim(1)) {
    throw DimensionError("conv2d: weight expects " + std::to_string(weight.dim(1)) + " input channels, got " +
                         std::to_string(input.dim(1)));
  }
  ConvDims d{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0), weight.dim(2),
             weight.dim(3), 0, 0, geometry.stride, geometry.padding};
  d.oh = out_extent(d.h, d.kh, geometry, "conv2d");
  d.ow = out_extent(d.w, d.kw, geometry, "conv2d");

  Tensor out = forward_kernel(input, weight, d);
  out = record_op(std::move(out), "conv2d", {input, weight},
                  [input, weight, d, geometry](const Tensor& g, const std::vector<bool>& needs) {
                    Tensor gx = needs[0] ? conv2d_input_grad(g, weight, d.h, d.w, geometry) : Tensor();
                    Tensor gw = needs[1] ? conv2d_weight_grad(input, g, d.kh, d.kw, geometry) : Tensor();
                    return std::vector<Tensor>{gx, gw};
                  });
  return bias ? add_channel_bias(out, *bias) : out;
}

Tensor conv2d_input_grad(const Tensor& grad_output, const Tensor& weight, std::size_t height, std::size_t width,
                         Conv2dGeometry geometry) {
  require_rank4(grad_output, "conv2d_input_grad", "grad_output");
  require_rank4(weight, "conv2d_input_grad", "weight");
  if (grad_output.dim(1) != weight.dim(0)) {
    throw DimensionError("conv2d_input_grad: channel mismatch between grad_output and weight");
  }
  ConvDims d{grad_output.dim(0), weight.dim(1), height, width, weight.dim(0), weight.dim(2), weight.dim(3),
             grad_output.dim(2), grad_output.dim(3), geometry.stride, geometry.padding};
  if (out_extent(height, d.kh, geometry, "conv2d_input_grad") != d.oh ||
      out_extent(width, d.kw, geometry, "conv2d_input_grad") != d.ow) {
    throw DimensionError("conv2d_input_grad: output extent inconsistent with requested input size");
  }
  Tensor out = input_grad_kernel(grad_output, weight, d);
  return record_op(std::move(out), "conv2d_input_grad", {grad_output, weight},
                   [grad_output, weight, d, geometry](const Tensor& g, const std::vector<bool>& needs) {
                     Tensor g_gy = needs[0] ? conv2d(g, weight, std::nullopt, geometry) : Tensor();
                     Tensor g_w = needs[1] ? conv2d_weight_grad(g, grad_output, d.kh, d.kw, geometry) : Tensor();
                     return std::vector<Tensor>{g_gy, g_w};
                   });
}

Tensor conv2d_weight_grad(const Tensor& input, const Tensor& grad_output, std::size_t kh, std::size_t kw,
                          Conv2dGeometry geometry) {
  require_rank4(input, "conv2d_weight_grad", "input");
  require_rank4(grad_output, "conv2d_weight_grad", "grad_output");
  if (input.dim(0) != grad_output.dim(0)) throw DimensionError("conv2d_weight_grad: batch mismatch");
  ConvDims d{input.dim(0), input.dim(1), input.dim(2), input.dim(3), grad_output.dim(1), kh, kw,
             grad_output.dim(2), grad_output.dim(3), geometry.stride, geometry.padding};
  if (out_extent(d.h, kh, geometry, "conv2d_weight_grad") != d.oh ||
      out_extent(d.w, kw, geometry, "conv2d_weight_grad") != d.ow) {
    throw DimensionError("conv2d_weight_grad: grad_output extent inconsistent with input");
  }
  Tensor out = weight_grad_kernel(input, grad_output, d);
  return record_op(std::move(out), "conv2d_weight_grad", {input, grad_output},
                   [input, grad_output, d, geometry](const Tensor& g, const std::vector<bool>& needs) {
                     Tensor g_x = needs[0] ? conv2d_input_grad(grad_output, g, d.h, d.w, geometry) : Tensor();
                     Tensor g_gy = needs[1] ? conv2d(input, g, std::nullopt, geometry) : Tensor();
                     return std::vector<Tensor>{g_x, g_gy};
                   });
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
                        Conv2dGeometry geometry) {
  require_rank4(input, "conv_transpose2d", "input");
  require_rank4(weight, "conv_transpose2d", "weight");
  if (weight.dim(0) != input.dim(1)) {
    throw DimensionError("conv_transpose2d: weight expects " + std::to_string(weight.dim(0)) +
                         " input channels, got " + std::to_string(input.dim(1)));
  }
  if (geometry.stride == 0) throw ContractError("conv_transpose2d: stride must be positive");
  const auto extent = [&](std::size_t in, std::size_t k) -> std::size_t {
    const std::ptrdiff_t e = static_cast<std::ptrdiff_t>((in - 1) * geometry.stride + k) -
                             static_cast<std::ptrdiff_t>(2 * geometry.padding);
    if (in == 0 || e <= 0) throw DimensionError("conv_transpose2d: non-positive output extent");
    return static_cast<std::size_t>(e);
  };
  const std::size_t oh = extent(input.dim(2), weight.dim(2));
  const std::size_t ow = extent(input.dim(3), weight.dim(3));
  Tensor out = conv2d_input_grad(input, weight, oh, ow, geometry);
  return bias ? add_channel_bias(out, *bias) : out;
}

Tensor instance_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank4(input, "instance_norm", "input");
  const std::size_t n = input.dim(0);
  const std::size_t c = input.dim(1);
  const std::size_t hw = input.dim(2) * input.dim(3);
  if (hw == 0) throw DimensionError("instance_norm: empty spatial extent");
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw DimensionError("instance_norm: gamma and beta must have shape [" + std::to_string(c) + "]");
  }
  const Shape& shape = input.shape();
  const double inv_hw = 1.0 / static_cast<double>(hw);
  Tensor mu = scalar_mul(sum_to(input, {n, c, 1, 1}), inv_hw);
  Tensor centered = sub(input, broadcast_to(mu, shape));
  Tensor var = scalar_mul(sum_to(square(centered), {n, c, 1, 1}), inv_hw);
  Tensor inv_std = div(Tensor::ones({n, c, 1, 1}), sqrt(add_scalar(var, eps)));
  Tensor normalized = mul(centered, broadcast_to(inv_std, shape));
  Tensor scale = broadcast_to(reshape(gamma, {1, c, 1, 1}), shape);
  Tensor shift = broadcast_to(reshape(beta, {1, c, 1, 1}), shape);
  return add(mul(normalized, scale), shift);
}

}  // namespace stargan
