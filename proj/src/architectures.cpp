#include "stargan/architectures.hpp"

#include <cmath>
#include <random>

#include "stargan/conv.hpp"
#include "stargan/errors.hpp"

namespace stargan {

void GeneratorConfig::validate() const {
  if (conv_dim < 1) throw ContractError("generator conv_dim must be >= 1");
  if (c_dim < 2) throw ContractError("generator c_dim must be >= 2");
  if (repeat_num < 1) throw ContractError("generator repeat_num must be >= 1");
  if (in_channels < 1) throw ContractError("generator in_channels must be >= 1");
}

void DiscriminatorConfig::validate() const {
  if (conv_dim < 1) throw ContractError("discriminator conv_dim must be >= 1");
  if (c_dim < 2) throw ContractError("discriminator c_dim must be >= 2");
  if (repeat_num < 1 || repeat_num > 30) throw ContractError("discriminator repeat_num out of range");
  if (in_channels < 1) throw ContractError("discriminator in_channels must be >= 1");
  const std::size_t factor = std::size_t{1} << repeat_num;
  if (image_size < factor || image_size % factor != 0) {
    throw ContractError("discriminator image_size must be a positive multiple of 2^repeat_num");
  }
}

std::size_t DiscriminatorConfig::final_extent() const { return image_size >> repeat_num; }

// ---- Network ---------------------------------------------------------------

std::vector<Tensor> Network::parameter_tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

const Tensor& Network::parameter(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.value;
  }
  throw ContractError("no parameter named '" + std::string(name) + "'");
}

std::size_t Network::count_params() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.value.numel();
  return total;
}

void Network::fill(double value) {
  for (auto& p : params_) {
    for (double& v : p.value.mutable_data()) v = value;
  }
}

std::size_t Network::add_parameter(std::string name, Shape shape) {
  Tensor t(std::move(shape));
  t.set_requires_grad(true);
  params_.push_back({std::move(name), std::move(t)});
  return params_.size() - 1;
}

std::size_t count_params(const Network& net) { return net.count_params(); }

Tensor one_hot(const std::vector<int>& labels, std::size_t c_dim) {
  Tensor out({labels.size(), c_dim});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c_dim) {
      throw ContractError("domain label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(c_dim) + ")");
    }
    out.mutable_data()[i * c_dim + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return out;
}

// ---- Generator -------------------------------------------------------------

Generator::Generator(GeneratorConfig config) : config_(config) {
  config_.validate();
  const std::size_t d = config_.conv_dim;
  auto add_norm = [this](const std::string& prefix, std::size_t channels) {
    NormIndex idx;
    idx.gamma = add_parameter(prefix + ".gamma", {channels});
    idx.beta = add_parameter(prefix + ".beta", {channels});
    return idx;
  };

  stem_ = add_parameter("stem.conv.weight", {d, config_.in_channels + config_.c_dim, 7, 7});
  stem_norm_ = add_norm("stem.norm", d);

  std::size_t channels = d;
  for (int i = 0; i < 2; ++i) {
    const std::string prefix = "down" + std::to_string(i + 1);
    down_.push_back(add_parameter(prefix + ".conv.weight", {channels * 2, channels, 4, 4}));
    down_norm_.push_back(add_norm(prefix + ".norm", channels * 2));
    channels *= 2;
  }

  for (std::size_t b = 0; b < config_.repeat_num; ++b) {
    const std::string prefix = "res" + std::to_string(b);
    ResidualIndex r;
    r.conv1 = add_parameter(prefix + ".conv1.weight", {channels, channels, 3, 3});
    r.norm1 = add_norm(prefix + ".norm1", channels);
    r.conv2 = add_parameter(prefix + ".conv2.weight", {channels, channels, 3, 3});
    r.norm2 = add_norm(prefix + ".norm2", channels);
    blocks_.push_back(r);
  }

  for (int i = 0; i < 2; ++i) {
    const std::string prefix = "up" + std::to_string(i + 1);
    // Transposed-conv weights are [in, out, kH, kW].
    up_.push_back(add_parameter(prefix + ".conv.weight", {channels, channels / 2, 4, 4}));
    up_norm_.push_back(add_norm(prefix + ".norm", channels / 2));
    channels /= 2;
  }

  head_ = add_parameter("head.conv.weight", {config_.in_channels, channels, 7, 7});
}

Tensor Generator::norm(const Tensor& x, NormIndex idx) const {
  return instance_norm(x, param(idx.gamma), param(idx.beta), kInstanceNormEps);
}

Tensor Generator::forward(const Tensor& x, const Tensor& target) const {
  if (x.rank() != 4 || x.dim(1) != config_.in_channels) {
    throw DimensionError("generator input must be [N," + std::to_string(config_.in_channels) + ",S,S], got " +
                         shape_to_string(x.shape()));
  }
  const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  if (h != w || h % 4 != 0 || h == 0) {
    throw DimensionError("generator input must be square with side divisible by 4");
  }
  if (target.shape() != Shape{n, config_.c_dim}) {
    throw ContractError("generator target must be one-hot [" + std::to_string(n) + "," +
                        std::to_string(config_.c_dim) + "]");
  }
  for (std::size_t i = 0; i < n; ++i) {
    int ones = 0;
    for (std::size_t k = 0; k < config_.c_dim; ++k) {
      const double v = target.at(i * config_.c_dim + k);
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        ones = -1;
        break;
      }
    }
    if (ones != 1) throw ContractError("generator target row " + std::to_string(i) + " is not one-hot");
  }

  Tensor label_planes = broadcast_to(reshape(target, {n, config_.c_dim, 1, 1}), {n, config_.c_dim, h, w});
  Tensor hcur = concat({x, label_planes}, 1);

  hcur = relu(norm(conv2d(hcur, param(stem_), std::nullopt, {1, 3}), stem_norm_));
  for (std::size_t i = 0; i < down_.size(); ++i) {
    hcur = relu(norm(conv2d(hcur, param(down_[i]), std::nullopt, {2, 1}), down_norm_[i]));
  }
  for (const ResidualIndex& r : blocks_) {
    Tensor t = relu(norm(conv2d(hcur, param(r.conv1), std::nullopt, {1, 1}), r.norm1));
    t = norm(conv2d(t, param(r.conv2), std::nullopt, {1, 1}), r.norm2);
    hcur = add(hcur, t);
  }
  for (std::size_t i = 0; i < up_.size(); ++i) {
    hcur = relu(norm(conv_transpose2d(hcur, param(up_[i]), std::nullopt, {2, 1}), up_norm_[i]));
  }
  return tanh(conv2d(hcur, param(head_), std::nullopt, {1, 3}));
}

Tensor Generator::forward(const Tensor& x, const std::vector<int>& target_domains) const {
  return forward(x, one_hot(target_domains, config_.c_dim));
}

// ---- Discriminator ---------------------------------------------------------

Discriminator::Discriminator(DiscriminatorConfig config) : config_(config) {
  config_.validate();
  std::size_t in = config_.in_channels;
  std::size_t out = config_.conv_dim;
  for (std::size_t i = 0; i < config_.repeat_num; ++i) {
    const std::string prefix = "body" + std::to_string(i);
    body_weight_.push_back(add_parameter(prefix + ".weight", {out, in, 4, 4}));
    body_bias_.push_back(add_parameter(prefix + ".bias", {out}));
    in = out;
    out *= 2;
  }
  const std::size_t k = config_.final_extent();
  src_ = add_parameter("src.weight", {1, in, 3, 3});
  cls_ = add_parameter("cls.weight", {config_.c_dim, in, k, k});
}

Tensor Discriminator::body(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != config_.in_channels || x.dim(2) != config_.image_size ||
      x.dim(3) != config_.image_size) {
    throw DimensionError("discriminator expects [N," + std::to_string(config_.in_channels) + "," +
                         std::to_string(config_.image_size) + "," + std::to_string(config_.image_size) + "], got " +
                         shape_to_string(x.shape()));
  }
  Tensor h = x;
  for (std::size_t i = 0; i < body_weight_.size(); ++i) {
    h = leaky_relu(conv2d(h, param(body_weight_[i]), param(body_bias_[i]), {2, 1}), kLeakySlope);
  }
  return h;
}

DiscriminatorOutput Discriminator::forward(const Tensor& x) const {
  Tensor h = body(x);
  DiscriminatorOutput out;
  out.src = conv2d(h, param(src_), std::nullopt, {1, 1});
  out.cls = reshape(conv2d(h, param(cls_), std::nullopt, {1, 0}), {x.dim(0), config_.c_dim});
  return out;
}

Tensor Discriminator::forward_src(const Tensor& x) const { return conv2d(body(x), param(src_), std::nullopt, {1, 1}); }

// ---- builders --------------------------------------------------------------

namespace {

// Fan-in is taken over dims 1..3 for both conv and transposed-conv weights.
void he_init(const std::vector<NamedParameter>& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const auto& p : params) {
    Tensor value = p.value;
    auto data = value.mutable_data();
    const auto ends_with = [&](std::string_view suffix) {
      return p.name.size() >= suffix.size() && p.name.compare(p.name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (ends_with(".gamma")) {
      std::fill(data.begin(), data.end(), 1.0);
    } else if (ends_with(".beta") || ends_with(".bias")) {
      std::fill(data.begin(), data.end(), 0.0);
    } else {
      const Shape& s = value.shape();
      const double fan_in = static_cast<double>(s[1] * s[2] * s[3]);
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      for (double& v : data) v = dist(rng);
    }
  }
}

}  // namespace

Generator build_generator(const GeneratorConfig& config, std::uint64_t seed) {
  Generator g(config);
  he_init(g.parameters(), seed);
  return g;
}

Discriminator build_discriminator(const DiscriminatorConfig& config, std::uint64_t seed) {
  Discriminator d(config);
  he_init(d.parameters(), seed);
  return d;
}

}  // namespace stargan
