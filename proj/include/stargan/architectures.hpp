#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "stargan/tensor.hpp"

namespace stargan {

/// Negative-branch slope of the discriminator's LeakyReLU.
inline constexpr double kLeakySlope = 0.01;
inline constexpr double kInstanceNormEps = 1e-5;

struct GeneratorConfig {
  std::size_t conv_dim = 64;
  std::size_t c_dim = 7;
  std::size_t repeat_num = 6;
  std::size_t in_channels = 3;

  void validate() const;
  bool operator==(const GeneratorConfig&) const = default;
};

struct DiscriminatorConfig {
  std::size_t image_size = 64;
  std::size_t conv_dim = 64;
  std::size_t c_dim = 7;
  std::size_t repeat_num = 6;
  std::size_t in_channels = 3;

  void validate() const;
  /// Spatial extent of the last body feature map, image_size / 2^repeat_num.
  std::size_t final_extent() const;
  bool operator==(const DiscriminatorConfig&) const = default;
};

struct NamedParameter {
  std::string name;
  Tensor value;
};

/// An ordered set of named parameter tensors. Parameters are listed in the
/// order the layers are applied in the forward pass; within a layer the
/// weight precedes the bias, and gamma precedes beta.
class Network {
 public:
  const std::vector<NamedParameter>& parameters() const { return params_; }
  std::vector<Tensor> parameter_tensors() const;
  const Tensor& parameter(std::string_view name) const;
  std::size_t count_params() const;

  /// Overwrite every parameter value in place (tests, zero networks).
  void fill(double value);

 protected:
  std::size_t add_parameter(std::string name, Shape shape);
  const Tensor& param(std::size_t index) const { return params_[index].value; }

  std::vector<NamedParameter> params_;
};

std::size_t count_params(const Network& net);

/// One-hot [N, c_dim] encoding of domain indices.
Tensor one_hot(const std::vector<int>& labels, std::size_t c_dim);

class Generator : public Network {
 public:
  explicit Generator(GeneratorConfig config);

  const GeneratorConfig& config() const { return config_; }

  /// x: [N, in_channels, S, S] with S divisible by 4; target: one-hot [N, c_dim].
  /// The label is tiled over the image plane and concatenated to x as extra
  /// input channels. Output has x's shape and lies in [-1, 1].
  Tensor forward(const Tensor& x, const Tensor& target) const;
  Tensor forward(const Tensor& x, const std::vector<int>& target_domains) const;

 private:
  struct NormIndex {
    std::size_t gamma, beta;
  };
  struct ResidualIndex {
    std::size_t conv1;
    NormIndex norm1;
    std::size_t conv2;
    NormIndex norm2;
  };

  Tensor norm(const Tensor& x, NormIndex idx) const;

  GeneratorConfig config_;
  std::size_t stem_;
  NormIndex stem_norm_;
  std::vector<std::size_t> down_;
  std::vector<NormIndex> down_norm_;
  std::vector<ResidualIndex> blocks_;
  std::vector<std::size_t> up_;
  std::vector<NormIndex> up_norm_;
  std::size_t head_;
};

struct DiscriminatorOutput {
  /// Unbounded critic scores, [N, 1, k, k] with k = final_extent().
  Tensor src;
  /// Unnormalized domain logits, [N, c_dim].
  Tensor cls;
};

class Discriminator : public Network {
 public:
  explicit Discriminator(DiscriminatorConfig config);

  const DiscriminatorConfig& config() const { return config_; }

  DiscriminatorOutput forward(const Tensor& x) const;
  /// Critic head only; skips the classification head.
  Tensor forward_src(const Tensor& x) const;

 private:
  Tensor body(const Tensor& x) const;

  DiscriminatorConfig config_;
  std::vector<std::size_t> body_weight_;
  std::vector<std::size_t> body_bias_;
  std::size_t src_;
  std::size_t cls_;
};

/// He-normal convolution weights (std = sqrt(2 / fan_in)), zero biases,
/// unit gamma and zero beta, drawn in parameter order from one seeded stream.
Generator build_generator(const GeneratorConfig& config, std::uint64_t seed);
Discriminator build_discriminator(const DiscriminatorConfig& config, std::uint64_t seed);

}  // namespace stargan
