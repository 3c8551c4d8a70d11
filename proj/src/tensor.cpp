#include "stargan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "stargan/errors.hpp"

namespace stargan {

namespace detail {

struct TensorImpl {
  Shape shape;
  std::shared_ptr<std::vector<double>> storage;
  bool requires_grad = false;
  std::shared_ptr<TapeNode> grad_fn;
};

}  // namespace detail

namespace {

thread_local bool t_grad_enabled = true;
thread_local std::uint64_t t_tape_seq = 0;

const std::shared_ptr<TapeNode> kNoNode;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

template <class F>
Tensor map_unary(const Tensor& a, F f) {
  Tensor out(a.shape());
  auto src = a.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <class F>
Tensor map_binary(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_same_shape(a, b, op);
  Tensor out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

// coeff * x^p for x > 0 and 0 elsewhere. Closed under differentiation, which
// gives sqrt a well-defined derivative chain of any order.
Tensor guarded_power(const Tensor& a, double coeff, double p) {
  Tensor out = map_unary(a, [=](double x) { return x > 0.0 ? coeff * std::pow(x, p) : 0.0; });
  return record_op(std::move(out), "guarded_power", {a},
                   [a, coeff, p](const Tensor& g, const std::vector<bool>&) -> std::vector<Tensor> {
                     return {mul(g, guarded_power(a, coeff * p, p - 1.0))};
                   });
}

// Maps each flat index of `big` onto the flat index of the broadcastable `small`.
std::vector<std::size_t> broadcast_index(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) {
    throw DimensionError("broadcast: cannot broadcast " + shape_to_string(small) + " to " + shape_to_string(big));
  }
  const std::size_t rank = big.size();
  const std::size_t offset = rank - small.size();
  std::vector<std::size_t> strides(rank, 0);
  std::size_t stride = 1;
  for (std::size_t i = small.size(); i-- > 0;) {
    const std::size_t extent = small[i];
    if (extent != 1 && extent != big[i + offset]) {
      throw DimensionError("broadcast: cannot broadcast " + shape_to_string(small) + " to " +
                           shape_to_string(big));
    }
    strides[i + offset] = extent == 1 ? 0 : stride;
    stride *= extent;
  }
  const std::size_t total = shape_numel(big);
  std::vector<std::size_t> map(total);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    map[flat] = src;
    for (std::size_t axis = rank; axis-- > 0;) {
      if (++counter[axis] < big[axis]) {
        src += strides[axis];
        break;
      }
      src -= strides[axis] * (big[axis] - 1);
      counter[axis] = 0;
    }
  }
  return map;
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<detail::TensorImpl>()) {
  const std::size_t n = shape_numel(shape);
  impl_->shape = std::move(shape);
  impl_->storage = std::make_shared<std::vector<double>>(n, fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<detail::TensorImpl>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("Tensor: shape " + shape_to_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->storage = std::make_shared<std::vector<double>>(std::move(values));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, value); }

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.mutable_data()) v = dist(rng);
  return t;
}

Tensor Tensor::uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.mutable_data()) v = dist(rng);
  return t;
}

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_to_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return {impl_->storage->data(), impl_->storage->size()};
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return {impl_->storage->data(), impl_->storage->size()};
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on a tensor of shape " + shape_to_string(shape()));
  return data()[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  if (!impl_) throw ContractError("use of an undefined tensor");
  if (impl_->grad_fn) throw ContractError("set_requires_grad on a non-leaf tensor");
  impl_->requires_grad = value;
  return *this;
}

const std::shared_ptr<TapeNode>& Tensor::grad_fn() const { return impl_ ? impl_->grad_fn : kNoNode; }

Tensor Tensor::detach() const {
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl>();
  t.impl_->shape = shape();
  t.impl_->storage = impl_->storage;
  return t;
}

Tensor Tensor::clone() const {
  auto d = data();
  return Tensor(shape(), std::vector<double>(d.begin(), d.end()));
}

// ---- tape ------------------------------------------------------------------

bool grad_enabled() { return t_grad_enabled; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(t_grad_enabled) { t_grad_enabled = enabled; }
GradModeGuard::~GradModeGuard() { t_grad_enabled = previous_; }

Tensor record_op(Tensor output, const char* op, std::vector<Tensor> inputs, BackwardFn backward) {
  if (!t_grad_enabled) return output;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return output;
  auto node = std::make_shared<TapeNode>();
  node->seq = ++t_tape_seq;
  node->op = op;
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  output.impl_->requires_grad = true;
  output.impl_->grad_fn = std::move(node);
  return output;
}

namespace {

void accumulate(Tensor& slot, const Tensor& value) { slot = slot.defined() ? add(slot, value) : value; }

}  // namespace

std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& wrt, bool create_graph) {
  if (!output.defined() || output.numel() != 1) {
    throw ContractError("grad: output must be a scalar tensor");
  }

  std::vector<TapeNode*> nodes;
  {
    std::unordered_set<TapeNode*> seen;
    std::vector<TapeNode*> stack;
    if (output.grad_fn()) {
      stack.push_back(output.grad_fn().get());
      seen.insert(stack.back());
    }
    while (!stack.empty()) {
      TapeNode* n = stack.back();
      stack.pop_back();
      nodes.push_back(n);
      for (const Tensor& in : n->inputs) {
        if (in.defined() && in.grad_fn() && seen.insert(in.grad_fn().get()).second) {
          stack.push_back(in.grad_fn().get());
        }
      }
    }
  }
  std::sort(nodes.begin(), nodes.end(), [](const TapeNode* a, const TapeNode* b) { return a->seq < b->seq; });

  std::unordered_set<const void*> wrt_leaves;
  std::unordered_set<const TapeNode*> wrt_nodes;
  for (const Tensor& w : wrt) {
    if (!w.defined()) throw ContractError("grad: undefined tensor in wrt");
    if (w.grad_fn()) {
      wrt_nodes.insert(w.grad_fn().get());
    } else if (w.requires_grad()) {
      wrt_leaves.insert(w.id());
    }
  }

  // A node is needed when some wrt tensor is reachable through its inputs.
  std::unordered_map<const TapeNode*, bool> needed;
  auto input_needed = [&](const Tensor& in) {
    if (!in.defined() || !in.requires_grad()) return false;
    if (in.grad_fn()) return needed[in.grad_fn().get()];
    return wrt_leaves.count(in.id()) > 0;
  };
  for (TapeNode* n : nodes) {
    bool need = wrt_nodes.count(n) > 0;
    for (const Tensor& in : n->inputs) need = need || input_needed(in);
    needed[n] = need;
  }

  std::unordered_map<const TapeNode*, Tensor> node_grads;
  std::unordered_map<const void*, Tensor> leaf_grads;

  GradModeGuard mode(create_graph);
  if (output.grad_fn()) {
    node_grads[output.grad_fn().get()] = Tensor::ones(output.shape());
  } else if (output.requires_grad()) {
    leaf_grads[output.id()] = Tensor::ones(output.shape());
  }

  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    TapeNode* n = *it;
    if (!needed[n]) continue;
    auto slot = node_grads.find(n);
    if (slot == node_grads.end()) continue;
    Tensor g = slot->second;
    if (!wrt_nodes.count(n)) node_grads.erase(slot);

    std::vector<bool> needs(n->inputs.size());
    bool any = false;
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      needs[i] = input_needed(n->inputs[i]);
      any = any || needs[i];
    }
    if (!any) continue;

    std::vector<Tensor> input_grads = n->backward(g, needs);
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      if (!needs[i] || i >= input_grads.size() || !input_grads[i].defined()) continue;
      const Tensor& in = n->inputs[i];
      if (input_grads[i].shape() != in.shape()) {
        throw DimensionError(std::string("grad: backward of '") + n->op + "' produced " +
                             shape_to_string(input_grads[i].shape()) + " for input " +
                             shape_to_string(in.shape()));
      }
      if (in.grad_fn()) {
        accumulate(node_grads[in.grad_fn().get()], input_grads[i]);
      } else {
        accumulate(leaf_grads[in.id()], input_grads[i]);
      }
    }
  }

  std::vector<Tensor> result;
  result.reserve(wrt.size());
  for (const Tensor& w : wrt) {
    Tensor r;
    if (w.grad_fn()) {
      auto f = node_grads.find(w.grad_fn().get());
      if (f != node_grads.end()) r = f->second;
    } else {
      auto f = leaf_grads.find(w.id());
      if (f != leaf_grads.end()) r = f->second;
    }
    result.push_back(r.defined() ? r : Tensor::zeros(w.shape()));
  }
  return result;
}

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = map_binary(a, b, "add", [](double x, double y) { return x + y; });
  return record_op(std::move(out), "add", {a, b}, [](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{g, g};
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tensor out = map_binary(a, b, "sub", [](double x, double y) { return x - y; });
  return record_op(std::move(out), "sub", {a, b}, [](const Tensor& g, const std::vector<bool>& needs) {
    return std::vector<Tensor>{g, needs[1] ? neg(g) : Tensor()};
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tensor out = map_binary(a, b, "mul", [](double x, double y) { return x * y; });
  return record_op(std::move(out), "mul", {a, b}, [a, b](const Tensor& g, const std::vector<bool>& needs) {
    return std::vector<Tensor>{needs[0] ? mul(g, b) : Tensor(), needs[1] ? mul(g, a) : Tensor()};
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.data()) {
    if (v == 0.0) throw DomainError("div: division by zero");
  }
  Tensor out = map_binary(a, b, "div", [](double x, double y) { return x / y; });
  return record_op(std::move(out), "div", {a, b}, [a, b](const Tensor& g, const std::vector<bool>& needs) {
    Tensor ga = needs[0] ? div(g, b) : Tensor();
    Tensor gb = needs[1] ? neg(div(mul(g, a), mul(b, b))) : Tensor();
    return std::vector<Tensor>{ga, gb};
  });
}

Tensor neg(const Tensor& a) {
  Tensor out = map_unary(a, [](double x) { return -x; });
  return record_op(std::move(out), "neg", {a}, [](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{neg(g)};
  });
}

Tensor scalar_mul(const Tensor& a, double s) {
  Tensor out = map_unary(a, [s](double x) { return s * x; });
  return record_op(std::move(out), "scalar_mul", {a}, [s](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{scalar_mul(g, s)};
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  Tensor out = map_unary(a, [s](double x) { return x + s; });
  return record_op(std::move(out), "add_scalar", {a}, [](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{g};
  });
}

Tensor exp(const Tensor& a) {
  Tensor out = map_unary(a, [](double x) { return std::exp(x); });
  return record_op(std::move(out), "exp", {a}, [a](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{mul(g, exp(a))};
  });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input");
  }
  Tensor out = map_unary(a, [](double x) { return std::log(x); });
  return record_op(std::move(out), "log", {a}, [a](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{div(g, a)};
  });
}

Tensor sqrt(const Tensor& a) {
  for (double v : a.data()) {
    if (v < 0.0) throw DomainError("sqrt: negative input");
  }
  Tensor out = map_unary(a, [](double x) { return std::sqrt(x); });
  return record_op(std::move(out), "sqrt", {a}, [a](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{mul(g, guarded_power(a, 0.5, -0.5))};
  });
}

Tensor tanh(const Tensor& a) {
  Tensor out = map_unary(a, [](double x) { return std::tanh(x); });
  return record_op(std::move(out), "tanh", {a}, [a](const Tensor& g, const std::vector<bool>&) {
    // 1 - tanh^2, recomputed from the input so the rule stays differentiable.
    return std::vector<Tensor>{mul(g, add_scalar(neg(square(tanh(a))), 1.0))};
  });
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = map_unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return record_op(std::move(out), "sigmoid", {a}, [a](const Tensor& g, const std::vector<bool>&) {
    Tensor s = sigmoid(a);
    return std::vector<Tensor>{mul(g, mul(s, add_scalar(neg(s), 1.0)))};
  });
}

Tensor relu(const Tensor& a) { return leaky_relu(a, 0.0); }

Tensor leaky_relu(const Tensor& a, double negative_slope) {
  Tensor out = map_unary(a, [negative_slope](double x) { return x >= 0.0 ? x : negative_slope * x; });
  return record_op(std::move(out), negative_slope == 0.0 ? "relu" : "leaky_relu", {a},
                   [a, negative_slope](const Tensor& g, const std::vector<bool>&) {
                     Tensor mask = map_unary(a, [negative_slope](double x) { return x >= 0.0 ? 1.0 : negative_slope; });
                     return std::vector<Tensor>{mul_const(g, mask)};
                   });
}

Tensor abs(const Tensor& a) {
  Tensor out = map_unary(a, [](double x) { return std::abs(x); });
  return record_op(std::move(out), "abs", {a}, [a](const Tensor& g, const std::vector<bool>&) {
    Tensor sign = map_unary(a, [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
    return std::vector<Tensor>{mul_const(g, sign)};
  });
}

Tensor square(const Tensor& a) {
  Tensor out = map_unary(a, [](double x) { return x * x; });
  return record_op(std::move(out), "square", {a}, [a](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{mul(g, scalar_mul(a, 2.0))};
  });
}

Tensor mul_const(const Tensor& a, const Tensor& mask) {
  Tensor out = map_binary(a, mask, "mul_const", [](double x, double m) { return x * m; });
  Tensor fixed = mask.detach();
  return record_op(std::move(out), "mul_const", {a}, [fixed](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{mul_const(g, fixed)};
  });
}

// ---- reductions and shape ops ---------------------------------------------

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  Shape shape = a.shape();
  return record_op(Tensor::scalar(total), "sum", {a}, [shape](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{broadcast_to(g, shape)};
  });
}

Tensor mean(const Tensor& a) {
  const std::size_t n = a.numel();
  if (n == 0) throw DomainError("mean of an empty tensor");
  return scalar_mul(sum(a), 1.0 / static_cast<double>(n));
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
  Tensor out(shape);
  if (a.shape() == shape) {
    std::copy(a.data().begin(), a.data().end(), out.mutable_data().begin());
  } else {
    const auto map = broadcast_index(a.shape(), shape);
    auto src = a.data();
    auto dst = out.mutable_data();
    for (std::size_t i = 0; i < map.size(); ++i) dst[i] = src[map[i]];
  }
  Shape from = a.shape();
  return record_op(std::move(out), "broadcast_to", {a}, [from](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{sum_to(g, from)};
  });
}

Tensor sum_to(const Tensor& a, const Shape& shape) {
  Tensor out(shape);
  if (a.shape() == shape) {
    std::copy(a.data().begin(), a.data().end(), out.mutable_data().begin());
  } else {
    const auto map = broadcast_index(shape, a.shape());
    auto src = a.data();
    auto dst = out.mutable_data();
    for (std::size_t i = 0; i < map.size(); ++i) dst[map[i]] += src[i];
  }
  Shape from = a.shape();
  return record_op(std::move(out), "sum_to", {a}, [from](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{broadcast_to(g, from)};
  });
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_to_string(a.shape()) + " -> " + shape_to_string(shape));
  }
  Tensor reshaped(shape);
  std::copy(a.data().begin(), a.data().end(), reshaped.mutable_data().begin());
  Shape from = a.shape();
  return record_op(std::move(reshaped), "reshape", {a}, [from](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{reshape(g, from)};
  });
}

Tensor flatten(const Tensor& a) {
  if (a.rank() < 1) throw DimensionError("flatten: tensor has no batch axis");
  const std::size_t n = a.dim(0);
  return reshape(a, {n, n == 0 ? 0 : a.numel() / n});
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  Shape shape = parts.front().shape();
  if (axis >= shape.size()) throw DimensionError("concat: axis out of range");
  shape[axis] = 0;
  for (const Tensor& p : parts) {
    Shape s = p.shape();
    if (s.size() != shape.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != parts.front().dim(i)) {
        throw DimensionError("concat: extent mismatch on axis " + std::to_string(i));
      }
    }
    shape[axis] += s[axis];
  }
  Tensor out(shape);
  const AxisSplit whole = split_axis(shape, axis);
  auto dst = out.mutable_data();
  std::size_t offset = 0;
  std::vector<std::size_t> starts;
  for (const Tensor& p : parts) {
    starts.push_back(offset);
    const std::size_t len = p.dim(axis);
    auto src = p.data();
    for (std::size_t o = 0; o < whole.outer; ++o) {
      std::copy_n(src.begin() + o * len * whole.inner, len * whole.inner,
                  dst.begin() + (o * whole.extent + offset) * whole.inner);
    }
    offset += len;
  }
  std::vector<std::size_t> lengths;
  for (const Tensor& p : parts) lengths.push_back(p.dim(axis));
  return record_op(std::move(out), "concat", parts,
                   [axis, starts, lengths](const Tensor& g, const std::vector<bool>& needs) {
                     std::vector<Tensor> grads(starts.size());
                     for (std::size_t i = 0; i < starts.size(); ++i) {
                       if (needs[i]) grads[i] = slice(g, axis, starts[i], lengths[i]);
                     }
                     return grads;
                   });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  Shape shape = a.shape();
  if (axis >= shape.size() || start + length > shape[axis]) {
    throw DimensionError("slice: range out of bounds for " + shape_to_string(shape));
  }
  const AxisSplit whole = split_axis(shape, axis);
  shape[axis] = length;
  Tensor out(shape);
  auto src = a.data();
  auto dst = out.mutable_data();
  for (std::size_t o = 0; o < whole.outer; ++o) {
    std::copy_n(src.begin() + (o * whole.extent + start) * whole.inner, length * whole.inner,
                dst.begin() + o * length * whole.inner);
  }
  Shape from = a.shape();
  return record_op(std::move(out), "slice", {a}, [from, axis, start](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{embed(g, from, axis, start)};
  });
}

Tensor embed(const Tensor& a, const Shape& shape, std::size_t axis, std::size_t start) {
  if (axis >= shape.size() || a.rank() != shape.size() || start + a.dim(axis) > shape[axis]) {
    throw DimensionError("embed: " + shape_to_string(a.shape()) + " does not fit " + shape_to_string(shape));
  }
  const std::size_t length = a.dim(axis);
  const AxisSplit whole = split_axis(shape, axis);
  Tensor out(shape);
  auto src = a.data();
  auto dst = out.mutable_data();
  for (std::size_t o = 0; o < whole.outer; ++o) {
    std::copy_n(src.begin() + o * length * whole.inner, length * whole.inner,
                dst.begin() + (o * whole.extent + start) * whole.inner);
  }
  return record_op(std::move(out), "embed", {a}, [axis, start, length](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{slice(g, axis, start, length)};
  });
}

Tensor l1_distance(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "l1_distance");
  return mean(abs(sub(a, b)));
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  if (logits.rank() != 2) throw DimensionError("softmax_cross_entropy: logits must be [N,K]");
  const std::size_t n = logits.dim(0);
  const std::size_t k = logits.dim(1);
  if (targets.size() != n) throw DimensionError("softmax_cross_entropy: one target per row required");
  if (n == 0) throw DomainError("softmax_cross_entropy: empty batch");

  Tensor row_max({n, 1});
  Tensor onehot({n, k});
  auto z = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= k) {
      throw ContractError("softmax_cross_entropy: target out of range");
    }
    row_max.mutable_data()[i] = *std::max_element(z.begin() + i * k, z.begin() + (i + 1) * k);
    onehot.mutable_data()[i * k + static_cast<std::size_t>(targets[i])] = 1.0;
  }
  // The shift is a constant: d/dm of log-sum-exp(z - m) + m vanishes exactly.
  Tensor shifted = sub(logits, broadcast_to(row_max, {n, k}));
  Tensor lse = add(log(sum_to(exp(shifted), {n, 1})), row_max);
  Tensor picked = sum_to(mul_const(logits, onehot), {n, 1});
  return mean(sub(lse, picked));
}

double inner_product(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "inner_product");
  double total = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) total += x[i] * y[i];
  return total;
}

}  // namespace stargan
