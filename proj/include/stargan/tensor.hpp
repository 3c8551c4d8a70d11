#pragma once

// Dense float64 tensors with a reverse-mode differentiation tape.
//
// Every op that sees at least one input with requires_grad() while grad mode
// is enabled records a TapeNode. Nodes carry a monotonically increasing
// sequence number, so the recording order is a topological order of the
// graph: a node's inputs were always recorded before it. Backward rules are
// written in terms of the same differentiable ops, which is what makes
// grad(..., create_graph=true) differentiable a second time.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace stargan {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

class Tensor;
struct TapeNode;

namespace detail {
struct TensorImpl;
}

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor full(Shape shape, double value) { return Tensor(std::move(shape), value); }
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0);
  static Tensor uniform(Shape shape, std::mt19937_64& rng, double lo, double hi);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable view of the storage. Only meant for leaf tensors (parameters,
  /// freshly built inputs); writing into a tensor that is already part of a
  /// recorded graph invalidates that graph.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  const std::shared_ptr<TapeNode>& grad_fn() const;

  /// Shares storage, drops history.
  Tensor detach() const;
  /// Deep copy of the values, no history.
  Tensor clone() const;

  /// Stable identity used as a key by the backward pass.
  const void* id() const noexcept { return impl_.get(); }

 private:
  friend Tensor record_op(Tensor, const char*, std::vector<Tensor>,
                          std::function<std::vector<Tensor>(const Tensor&, const std::vector<bool>&)>);
  std::shared_ptr<detail::TensorImpl> impl_;
};

using BackwardFn =
    std::function<std::vector<Tensor>(const Tensor& grad_output, const std::vector<bool>& needs_input_grad)>;

struct TapeNode {
  std::uint64_t seq = 0;
  const char* op = "";
  std::vector<Tensor> inputs;
  /// Returns one gradient per input; entries may be undefined when the
  /// corresponding needs_input_grad flag is false.
  BackwardFn backward;
};

/// Attach `output` to the tape as the result of `op` applied to `inputs`.
/// No node is recorded when grad mode is off or no input requires grad.
Tensor record_op(Tensor output, const char* op, std::vector<Tensor> inputs, BackwardFn backward);

bool grad_enabled();

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

class NoGradGuard : public GradModeGuard {
 public:
  NoGradGuard() : GradModeGuard(false) {}
};

/// Gradients of a scalar `output` with respect to each tensor in `wrt`.
/// Tensors in `wrt` that do not influence `output` get zeros. With
/// create_graph the returned tensors carry history and can be differentiated
/// again.
std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& wrt, bool create_graph = false);

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// Throws DomainError on a zero divisor.
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scalar_mul(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor exp(const Tensor& a);
/// Throws DomainError unless every element is strictly positive.
Tensor log(const Tensor& a);
/// Throws DomainError on negative input. The derivative at exactly zero is
/// taken as zero, which keeps a zero-gradient norm differentiable.
Tensor sqrt(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double negative_slope);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);

/// Elementwise a * mask where `mask` is treated as a constant.
Tensor mul_const(const Tensor& a, const Tensor& mask);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double s) { return scalar_mul(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scalar_mul(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }

// ---- reductions and shape ops ---------------------------------------------

/// Sum of all elements, shape {}.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Numpy-style broadcast: `a`'s shape, right-aligned, must have extent 1 or
/// the target extent on every axis.
Tensor broadcast_to(const Tensor& a, const Shape& shape);
/// Adjoint of broadcast_to: sums `a` down to `shape`.
Tensor sum_to(const Tensor& a, const Shape& shape);
Tensor reshape(const Tensor& a, const Shape& shape);
/// [N, ...] -> [N, prod(...)]
Tensor flatten(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
/// Zero tensor of `shape` with `a` written at [start, start + a.dim(axis)) on `axis`.
Tensor embed(const Tensor& a, const Shape& shape, std::size_t axis, std::size_t start);

/// Mean absolute difference.
Tensor l1_distance(const Tensor& a, const Tensor& b);
/// Mean over rows of -log softmax(logits)[target]. logits is [N, K].
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets);

/// Sum over all elements of a * b, no history. Test and diagnostics helper.
double inner_product(const Tensor& a, const Tensor& b);

}  // namespace stargan
