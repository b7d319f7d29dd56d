#pragma once

// Dense row-major tensors with a reverse-mode differentiation graph.
//
// A Tensor is a cheap handle onto shared storage. Operations defined in
// ops.hpp / conv.hpp record a Node on their output whenever gradient mode is
// enabled and at least one input requires a gradient. Backward rules are
// written in terms of the same recorded operations, so running backward with
// `create_graph = true` yields gradients that are themselves differentiable
// (used by the R1 penalty).

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sst/error.hpp"
#include "sst/rng.hpp"

namespace sst {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

template <class T>
class Tensor;

namespace detail {

template <class T>
struct Node {
  using BackwardFn =
      std::function<std::vector<Tensor<T>>(const Tensor<T>& grad, const std::vector<Tensor<T>>& inputs)>;
  std::string name;
  std::vector<Tensor<T>> inputs;
  BackwardFn backward;
};

template <class T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  std::shared_ptr<TensorImpl<T>> grad;
  std::shared_ptr<Node<T>> grad_fn;
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Whether operations currently record graph nodes (per thread).
inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// RAII switch for gradient recording.
class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled) : previous_(detail::grad_mode_flag()) {
    detail::grad_mode_flag() = enabled;
  }
  ~GradModeGuard() { detail::grad_mode_flag() = previous_; }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

struct NoGrad : GradModeGuard {
  NoGrad() : GradModeGuard(false) {}
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : impl_(std::make_shared<detail::TensorImpl<T>>()) {
    validate(shape);
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<detail::TensorImpl<T>>()) {
    validate(shape);
    if (values.size() != shape_numel(shape)) {
      throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.impl_->data) v = static_cast<T>(rng.normal(0.0, stddev));
    return t;
  }

  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (auto& v : t.impl_->data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  std::vector<T>& values() { return impl_->data; }
  const std::vector<T>& values() const { return impl_->data; }

  T& operator[](std::size_t i) { return impl_->data[i]; }
  const T& operator[](std::size_t i) const { return impl_->data[i]; }

  T item() const {
    if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    if (impl_->grad_fn) throw ValueError("set_requires_grad: only leaf tensors can be marked");
    impl_->requires_grad = on;
    return *this;
  }

  bool is_leaf() const { return !impl_->grad_fn; }
  const detail::Node<T>* grad_fn() const { return impl_->grad_fn.get(); }

  /// Accumulated gradient of a leaf; undefined when backward has not reached it.
  Tensor grad() const {
    Tensor g;
    g.impl_ = impl_->grad;
    return g;
  }
  void zero_grad() { impl_->grad.reset(); }

  /// Copy of the values with no graph history.
  Tensor detach() const { return Tensor(shape(), values()); }

  /// Shares storage; used by the autograd engine and optimizer.
  detail::TensorImpl<T>* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl<T>>& impl_ptr() const { return impl_; }

  static Tensor from_impl(std::shared_ptr<detail::TensorImpl<T>> p) {
    Tensor t;
    t.impl_ = std::move(p);
    return t;
  }

  bool same(const Tensor& o) const { return impl_ == o.impl_; }

 private:
  static void validate(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor: empty shape");
    for (auto e : shape)
      if (e == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape));
  }

  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

namespace detail {

template <class T>
bool any_requires_grad(const std::vector<Tensor<T>>& inputs) {
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) { return t.requires_grad(); });
}

/// Attaches a backward node to `out` when recording is active.
template <class T>
Tensor<T> record(Tensor<T> out, std::string name, std::vector<Tensor<T>> inputs,
                 typename Node<T>::BackwardFn backward) {
  if (grad_enabled() && any_requires_grad(inputs)) {
    auto node = std::make_shared<Node<T>>();
    node->name = std::move(name);
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    out.impl()->requires_grad = true;
    out.impl()->grad_fn = std::move(node);
  }
  return out;
}

/// Guard for backward rules implemented with raw kernels: they cannot be
/// differentiated again, so building a higher-order graph through them is an error.
inline void first_order_only(const char* op) {
  if (grad_enabled()) {
    throw ValueError(std::string(op) + ": higher-order gradients are not supported through this operation");
  }
}

template <class T>
std::vector<TensorImpl<T>*> topological_order(const Tensor<T>& root) {
  std::vector<TensorImpl<T>*> order;
  std::unordered_set<TensorImpl<T>*> visited;
  // Iterative post-order DFS; graphs can be deep for long MLP stacks.
  std::vector<std::pair<TensorImpl<T>*, std::size_t>> stack;
  stack.emplace_back(root.impl(), 0);
  visited.insert(root.impl());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (node->grad_fn && next < node->grad_fn->inputs.size()) {
      TensorImpl<T>* child = node->grad_fn->inputs[next++].impl();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }
  return order;  // parents before children
}

template <class T>
Tensor<T> add_raw(const Tensor<T>& a, const Tensor<T>& b);

/// Propagates `seed` from `root` through the recorded graph. Returns the
/// gradient reaching every visited tensor.
template <class T>
std::unordered_map<TensorImpl<T>*, Tensor<T>> propagate(const Tensor<T>& root, const Tensor<T>& seed,
                                                        bool create_graph) {
  GradModeGuard mode(create_graph);
  auto order = topological_order(root);
  std::unordered_map<TensorImpl<T>*, Tensor<T>> grads;
  grads[root.impl()] = seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl<T>* node = *it;
    if (!node->grad_fn) continue;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    const Tensor<T> g = found->second;
    const auto& inputs = node->grad_fn->inputs;
    std::vector<Tensor<T>> in_grads = node->grad_fn->backward(g, inputs);
    if (in_grads.size() != inputs.size()) {
      throw Error("backward of " + node->grad_fn->name + " returned the wrong number of gradients");
    }
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (!in_grads[i].defined() || !inputs[i].requires_grad()) continue;
      if (in_grads[i].shape() != inputs[i].shape()) {
        throw ShapeError("backward of " + node->grad_fn->name + ": gradient shape " +
                         shape_str(in_grads[i].shape()) + " != input shape " + shape_str(inputs[i].shape()));
      }
      auto [slot, inserted] = grads.try_emplace(inputs[i].impl(), in_grads[i]);
      if (!inserted) slot->second = add_raw(slot->second, in_grads[i]);
    }
  }
  return grads;
}

}  // namespace detail

/// Reverse-mode pass from a scalar loss; accumulates into `.grad()` of every
/// reachable leaf that requires a gradient.
template <class T>
void backward(const Tensor<T>& loss, bool create_graph = false) {
  if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;
  auto grads = detail::propagate(loss, Tensor<T>::ones(loss.shape()), create_graph);
  GradModeGuard mode(create_graph);
  for (auto& [impl, g] : grads) {
    if (impl->grad_fn || !impl->requires_grad) continue;
    if (impl->grad) {
      impl->grad = detail::add_raw(Tensor<T>::from_impl(impl->grad), g).impl_ptr();
    } else {
      impl->grad = create_graph ? g.impl_ptr() : g.detach().impl_ptr();
    }
  }
}

/// Gradients of `output` with respect to `inputs` without touching `.grad()`.
/// With `create_graph`, the returned tensors carry their own history.
template <class T>
std::vector<Tensor<T>> grad(const Tensor<T>& output, const std::vector<Tensor<T>>& inputs, bool create_graph = false) {
  if (output.numel() != 1) throw ShapeError("grad: output must be scalar, got shape " + shape_str(output.shape()));
  std::vector<Tensor<T>> result;
  result.reserve(inputs.size());
  if (!output.requires_grad()) {
    for (const auto& in : inputs) result.push_back(Tensor<T>::zeros(in.shape()));
    return result;
  }
  auto grads = detail::propagate(output, Tensor<T>::ones(output.shape()), create_graph);
  for (const auto& in : inputs) {
    auto it = grads.find(in.impl());
    result.push_back(it == grads.end() ? Tensor<T>::zeros(in.shape()) : it->second);
  }
  return result;
}

}  // namespace sst
