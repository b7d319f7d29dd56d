#pragma once

// Differentiable kernels over sst::Tensor. Shapes must conform exactly;
// broadcasting is explicit (expand_*, tile0).

#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "sst/tensor.hpp"

namespace sst {

namespace detail {

template <class T>
[[noreturn]] void shape_mismatch(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class T>
void require_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch(op, a, b);
}

template <class T, class F>
Tensor<T> map_values(const Tensor<T>& x, F f) {
  Tensor<T> out(x.shape());
  auto in = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
  return out;
}

template <class T, class F>
Tensor<T> zip_values(const Tensor<T>& a, const Tensor<T>& b, F f) {
  Tensor<T> out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto o = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = f(x[i], y[i]);
  return out;
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("add", a, b);
  auto out = detail::zip_values(a, b, [](T x, T y) { return x + y; });
  return detail::record<T>(out, "add", {a, b}, [](const Tensor<T>& g, const auto&) {
    return std::vector<Tensor<T>>{g, g};
  });
}

namespace detail {
template <class T>
Tensor<T> add_raw(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, b);
}
}  // namespace detail

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
  auto out = detail::map_values(a, [](T x) { return -x; });
  return detail::record<T>(out, "neg", {a}, [](const Tensor<T>& g, const auto&) {
    return std::vector<Tensor<T>>{neg(g)};
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("sub", a, b);
  auto out = detail::zip_values(a, b, [](T x, T y) { return x - y; });
  return detail::record<T>(out, "sub", {a, b}, [](const Tensor<T>& g, const auto&) {
    return std::vector<Tensor<T>>{g, neg(g)};
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("mul", a, b);
  auto out = detail::zip_values(a, b, [](T x, T y) { return x * y; });
  return detail::record<T>(out, "mul", {a, b}, [](const Tensor<T>& g, const std::vector<Tensor<T>>& in) {
    Tensor<T> ga, gb;
    if (in[0].requires_grad()) ga = mul(g, in[1]);
    if (in[1].requires_grad()) gb = mul(g, in[0]);
    return std::vector<Tensor<T>>{ga, gb};
  });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("div", a, b);
  auto out = detail::zip_values(a, b, [](T x, T y) { return x / y; });
  return detail::record<T>(out, "div", {a, b}, [](const Tensor<T>& g, const std::vector<Tensor<T>>& in) {
    auto ga = div(g, in[1]);
    Tensor<T> gb;
    if (in[1].requires_grad()) gb = neg(div(mul(ga, in[0]), in[1]));
    return std::vector<Tensor<T>>{ga, gb};
  });
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
  auto out = detail::map_values(a, [c](T x) { return x * c; });
  return detail::record<T>(out, "mul_scalar", {a}, [c](const Tensor<T>& g, const auto&) {
    return std::vector<Tensor<T>>{mul_scalar(g, c)};
  });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  auto out = detail::map_values(a, [c](T x) { return x + c; });
  return detail::record<T>(out, "add_scalar", {a}, [](const Tensor<T>& g, const auto&) {
    return std::vector<Tensor<T>>{g};
  });
}

template <class T>
Tensor<T> square(const Tensor<T>& a) {
  auto out = detail::map_values(a, [](T x) { return x * x; });
  return detail::record<T>(out, "square", {a}, [](const Tensor<T>& g, const std::vector<Tensor<T>>& in) {
    return std::vector<Tensor<T>>{mul(g, mul_scalar(in[0], T(2)))};
  });
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
  auto out = detail::map_values(a, [](T x) { return std::exp(x); });
  return detail::record<T>(out, "exp", {a}, [](const Tensor<T>& g, const std::vector<Tensor<T>>& in) {
    return std::vector<Tensor<T>>{mul(g, exp(in[0]))};
  });
}

template <class T>
Tensor<T> log(const Tensor<T>& a) {
  auto out = detail::map_values(a, [](T x) { return std::log(x); });
  return detail::record<T>(out, "log", {a}, [](const Tensor<T>& g, const std::vector<Tensor<T>>& in) {
    return std::vector<Tensor<T>>{div(g, in[0])};
  });
}

template <class T>
T sigmoid_value(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  auto out = detail::map_values(a, [](T x) { return sigmoid_value(x); });
  return detail::record<T>(out, "sigmoid", {a}, [](const Tensor<T>& g, const std::vector<Tensor<T>>& in) {
    auto s = sigmoid(in[0]);
    auto one_minus = add_scalar(neg(s), T(1));
    return std::vector<Tensor<T>>{mul(g, mul(s, one_minus))};
  });
}

/// log(1 + exp(x)), evaluated as x + log1p(exp(-x)) for positive x.
template <class T>
T softplus_value(T x) {
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <class T>
Tensor<T> softplus(const Tensor<T>& a) {
  auto out = detail::map_values(a, [](T x) { return softplus_value(x); });
  return detail::record<T>(out, "softplus", {a}, [](const Tensor<T>& g, const std::vector<Tensor<T>>& in) {
    return std::vector<Tensor<T>>{mul(g, sigmoid(in[0]))};
  });
}

/// Multiplies by a mask that is constant w.r.t. the graph.
template <class T>
Tensor<T> mul_const(const Tensor<T>& a, const Tensor<T>& mask) {
  detail::require_same("mul_const", a, mask);
  auto out = detail::zip_values(a, mask, [](T x, T m) { return x * m; });
  return detail::record<T>(out, "mul_const", {a}, [mask](const Tensor<T>& g, const auto&) {
    return std::vector<Tensor<T>>{mul_const(g, mask)};
  });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope = T(0.2)) {
  auto mask = detail::map_values(a, [slope](T x) { return x > T(0) ? T(1) : slope; });
  auto out = detail::zip_values(a, mask, [](T x, T m) { return x * m; });
  return detail::record<T>(out, "leaky_relu", {a}, [mask](const Tensor<T>& g, const auto&) {
    return std::vector<Tensor<T>>{mul_const(g, mask)};
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  return leaky_relu(a, T(0));
}

/// Clamps to [lo, hi]; the gradient is passed through inside the interval and
/// zero where the value was clamped.
template <class T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  auto mask = detail::map_values(a, [lo, hi](T x) { return x >= lo && x <= hi ? T(1) : T(0); });
  auto out = detail::map_values(a, [lo, hi](T x) { return x < lo ? lo : (x > hi ? hi : x); });
  return detail::record<T>(out, "clamp", {a}, [mask](const Tensor<T>& g, const auto&) {
    return std::vector<Tensor<T>>{mul_const(g, mask)};
  });
}

// ----------------------------------------------------------------- reductions

template <class T>
Tensor<T> expand_scalar(const Tensor<T>& s, const Shape& shape);

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.data()) total += v;
  Tensor<T> out = Tensor<T>::scalar(total);
  return detail::record<T>(out, "sum", {a}, [](const Tensor<T>& g, const std::vector<Tensor<T>>& in) {
    return std::vector<Tensor<T>>{expand_scalar(g, in[0].shape())};
  });
}

/// Broadcasts a one-element tensor to `shape`.
template <class T>
Tensor<T> expand_scalar(const Tensor<T>& s, const Shape& shape) {
  if (s.numel() != 1) throw ShapeError("expand_scalar: input shape " + shape_str(s.shape()) + " is not a scalar");
  Tensor<T> out(shape, s[0]);
  return detail::record<T>(out, "expand_scalar", {s}, [](const Tensor<T>& g, const std::vector<Tensor<T>>& in) {
    return std::vector<Tensor<T>>{reshape(sum(g), in[0].shape())};
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return mul_scalar(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <class T>
Tensor<T> frobenius_sq(const Tensor<T>& a) {
  return sum(square(a));
}

template <class T>
Tensor<T> reduce_axis(const Tensor<T>& a, std::size_t axis);

/// Tiles a 1-D tensor along `axis` of `shape`.
template <class T>
Tensor<T> expand_axis(const Tensor<T>& b, const Shape& shape, std::size_t axis) {
  if (b.rank() != 1 || axis >= shape.size() || b.dim(0) != shape[axis]) {
    throw ShapeError("expand_axis: vector " + shape_str(b.shape()) + " does not match axis " + std::to_string(axis) +
                     " of " + shape_str(shape));
  }
  Tensor<T> out(shape);
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t extent = shape[axis];
  const std::size_t outer = out.numel() / (inner * extent);
  auto o = out.data();
  auto v = b.data();
  for (std::size_t p = 0; p < outer; ++p)
    for (std::size_t e = 0; e < extent; ++e) std::fill_n(o.begin() + (p * extent + e) * inner, inner, v[e]);
  return detail::record<T>(out, "expand_axis", {b}, [axis](const Tensor<T>& g, const auto&) {
    return std::vector<Tensor<T>>{reduce_axis(g, axis)};
  });
}

/// Sums every axis except `axis`, giving a 1-D tensor of that extent.
template <class T>
Tensor<T> reduce_axis(const Tensor<T>& a, std::size_t axis) {
  if (axis >= a.rank()) throw ShapeError("reduce_axis: axis out of range for " + shape_str(a.shape()));
  const auto& shape = a.shape();
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t extent = shape[axis];
  const std::size_t outer = a.numel() / (inner * extent);
  Tensor<T> out(Shape{extent});
  auto x = a.data();
  for (std::size_t p = 0; p < outer; ++p)
    for (std::size_t e = 0; e < extent; ++e) {
      T acc = T(0);
      const T* row = x.data() + (p * extent + e) * inner;
      for (std::size_t i = 0; i < inner; ++i) acc += row[i];
      out[e] += acc;
    }
  return detail::record<T>(out, "reduce_axis", {a}, [axis](const Tensor<T>& g, const std::vector<Tensor<T>>& in) {
    return std::vector<Tensor<T>>{expand_axis(g, in[0].shape(), axis)};
  });
}

/// x + b broadcast along `axis` (bias add).
template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b, std::size_t axis) {
  return add(x, expand_axis(b, x.shape(), axis));
}

template <class T>
Tensor<T> sum0(const Tensor<T>& a);

/// Stacks `count` copies of `a` along a new leading axis.
template <class T>
Tensor<T> tile0(const Tensor<T>& a, std::size_t count) {
  Shape shape{count};
  shape.insert(shape.end(), a.shape().begin(), a.shape().end());
  Tensor<T> out(shape);
  auto o = out.data();
  for (std::size_t i = 0; i < count; ++i) std::copy(a.data().begin(), a.data().end(), o.begin() + i * a.numel());
  return detail::record<T>(out, "tile0", {a}, [](const Tensor<T>& g, const auto&) {
    return std::vector<Tensor<T>>{sum0(g)};
  });
}

/// Sums over the leading axis.
template <class T>
Tensor<T> sum0(const Tensor<T>& a) {
  if (a.rank() < 2) throw ShapeError("sum0: need rank >= 2, got " + shape_str(a.shape()));
  Shape shape(a.shape().begin() + 1, a.shape().end());
  Tensor<T> out(shape);
  const std::size_t n = out.numel();
  auto x = a.data();
  auto o = out.data();
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < n; ++j) o[j] += x[i * n + j];
  return detail::record<T>(out, "sum0", {a}, [](const Tensor<T>& g, const std::vector<Tensor<T>>& in) {
    return std::vector<Tensor<T>>{tile0(g, in[0].dim(0))};
  });
}

// -------------------------------------------------------------------- layout

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor<T> out(shape, a.values());
  return detail::record<T>(out, "reshape", {a}, [](const Tensor<T>& g, const std::vector<Tensor<T>>& in) {
    return std::vector<Tensor<T>>{reshape(g, in[0].shape())};
  });
}

template <class T>
Tensor<T> pad_slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t extent);

/// Contiguous sub-range [start, start+len) along `axis`.
template <class T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t len) {
  if (axis >= a.rank() || len == 0 || start + len > a.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") invalid for axis " + std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  Shape shape = a.shape();
  shape[axis] = len;
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const std::size_t outer = a.numel() / (inner * a.dim(axis));
  Tensor<T> out(shape);
  auto x = a.data();
  auto o = out.data();
  for (std::size_t p = 0; p < outer; ++p)
    std::copy_n(x.begin() + (p * a.dim(axis) + start) * inner, len * inner, o.begin() + p * len * inner);
  const std::size_t full = a.dim(axis);
  return detail::record<T>(out, "slice", {a}, [axis, start, full](const Tensor<T>& g, const auto&) {
    return std::vector<Tensor<T>>{pad_slice(g, axis, start, full)};
  });
}

/// Places `a` at [start, start+a.dim(axis)) inside zeros of extent `extent` along `axis`.
template <class T>
Tensor<T> pad_slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t extent) {
  if (axis >= a.rank() || start + a.dim(axis) > extent) {
    throw ShapeError("pad_slice: cannot place " + shape_str(a.shape()) + " at " + std::to_string(start) +
                     " within extent " + std::to_string(extent));
  }
  Shape shape = a.shape();
  shape[axis] = extent;
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const std::size_t len = a.dim(axis);
  const std::size_t outer = a.numel() / (inner * len);
  Tensor<T> out(shape);
  auto x = a.data();
  auto o = out.data();
  for (std::size_t p = 0; p < outer; ++p)
    std::copy_n(x.begin() + p * len * inner, len * inner, o.begin() + (p * extent + start) * inner);
  return detail::record<T>(out, "pad_slice", {a}, [axis, start, len](const Tensor<T>& g, const auto&) {
    return std::vector<Tensor<T>>{slice(g, axis, start, len)};
  });
}

/// Concatenates along `axis`; all other extents must agree.
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape shape = parts[0].shape();
  if (axis >= shape.size()) throw ShapeError("concat: axis out of range for " + shape_str(shape));
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != shape.size()) detail::shape_mismatch("concat", parts[0], p);
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != shape[i]) detail::shape_mismatch("concat", parts[0], p);
    total += s[axis];
  }
  shape[axis] = total;
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t outer = shape_numel(shape) / (inner * total);
  Tensor<T> out(shape);
  auto o = out.data();
  std::size_t offset = 0;
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (const auto& p : parts) {
    const std::size_t len = p.dim(axis);
    auto x = p.data();
    for (std::size_t q = 0; q < outer; ++q)
      std::copy_n(x.begin() + q * len * inner, len * inner, o.begin() + (q * total + offset) * inner);
    ranges.emplace_back(offset, len);
    offset += len;
  }
  return detail::record<T>(out, "concat", parts, [axis, ranges](const Tensor<T>& g, const auto&) {
    std::vector<Tensor<T>> grads;
    for (auto [start, len] : ranges) grads.push_back(slice(g, axis, start, len));
    return grads;
  });
}

// ------------------------------------------------------------ linear algebra

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose: need rank 2, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor<T> out(Shape{n, m});
  detail::MatMap<T>(out.data().data(), n, m) = detail::ConstMatMap<T>(a.data().data(), m, n).transpose();
  return detail::record<T>(out, "transpose", {a}, [](const Tensor<T>& g, const auto&) {
    return std::vector<Tensor<T>>{transpose(g)};
  });
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) detail::shape_mismatch("matmul", a, b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out(Shape{m, n});
  detail::MatMap<T>(out.data().data(), m, n).noalias() =
      detail::ConstMatMap<T>(a.data().data(), m, k) * detail::ConstMatMap<T>(b.data().data(), k, n);
  return detail::record<T>(out, "matmul", {a, b}, [](const Tensor<T>& g, const std::vector<Tensor<T>>& in) {
    Tensor<T> ga, gb;
    if (in[0].requires_grad()) ga = matmul(g, transpose(in[1]));
    if (in[1].requires_grad()) gb = matmul(transpose(in[0]), g);
    return std::vector<Tensor<T>>{ga, gb};
  });
}

/// Contracts `axis` of `x` with the rows of `m`:
/// out[..., j, ...] = sum_i x[..., i, ...] * m[i, j].
template <class T>
Tensor<T> mode_product(const Tensor<T>& x, const Tensor<T>& m, std::size_t axis) {
  if (m.rank() != 2 || axis >= x.rank() || x.dim(axis) != m.dim(0)) {
    throw ShapeError("mode_product: matrix " + shape_str(m.shape()) + " does not match axis " +
                     std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const std::size_t small = m.dim(0), large = m.dim(1);
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t outer = x.numel() / (inner * small);
  Shape shape = x.shape();
  shape[axis] = large;
  Tensor<T> out(shape);
  auto xs = x.data();
  auto ms = m.data();
  auto o = out.data();
  for (std::size_t p = 0; p < outer; ++p)
    for (std::size_t i = 0; i < small; ++i) {
      const T* src = xs.data() + (p * small + i) * inner;
      for (std::size_t j = 0; j < large; ++j) {
        const T w = ms[i * large + j];
        if (w == T(0)) continue;
        T* dst = o.data() + (p * large + j) * inner;
        for (std::size_t q = 0; q < inner; ++q) dst[q] += w * src[q];
      }
    }
  return detail::record<T>(out, "mode_product", {x, m}, [axis](const Tensor<T>& g, const std::vector<Tensor<T>>& in) {
    Tensor<T> gx, gm;
    if (in[0].requires_grad()) gx = mode_product(g, transpose(in[1]), axis);
    if (in[1].requires_grad()) {
      // gm[i, j] = sum over the other axes of x[.., i, ..] * g[.., j, ..]
      const std::size_t small = in[1].dim(0), large = in[1].dim(1);
      std::size_t inner = 1;
      for (std::size_t i = axis + 1; i < in[0].rank(); ++i) inner *= in[0].dim(i);
      const std::size_t outer = in[0].numel() / (inner * small);
      std::vector<Tensor<T>> xs, gs;
      auto xm = reshape(in[0], Shape{outer, small, inner});
      auto gmv = reshape(g, Shape{outer, large, inner});
      Tensor<T> acc;
      for (std::size_t p = 0; p < outer; ++p) {
        auto xp = reshape(slice(xm, 0, p, 1), Shape{small, inner});
        auto gp = reshape(slice(gmv, 0, p, 1), Shape{large, inner});
        auto term = matmul(xp, transpose(gp));
        acc = acc.defined() ? add(acc, term) : term;
      }
      gm = acc;
    }
    return std::vector<Tensor<T>>{gx, gm};
  });
}

}  // namespace sst
