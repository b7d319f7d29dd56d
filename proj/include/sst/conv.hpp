#pragma once

// 3-D convolution family on [N, C, D, H, W] tensors (rank-4 inputs are
// treated as N = 1). Three mutually adjoint kernels share one geometry:
//
//   conv_forward(x, w)      y = W * im2col(x)
//   conv_adjoint(y, w)      x = col2im(W^T * y)          (transposed conv)
//   conv_filter_grad(x, y)  W = y * im2col(x)^T
//
// Each one's backward rule is expressed with the other two, so the family is
// closed under differentiation to any order.

#include <array>

#include "sst/ops.hpp"

namespace sst {

struct ConvGeometry {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

using Extent3 = std::array<std::size_t, 3>;

namespace detail {

inline std::size_t conv_out_extent(std::size_t in, const ConvGeometry& g, const char* op) {
  if (g.stride == 0) throw ValueError(std::string(op) + ": stride must be >= 1");
  if (in + 2 * g.padding < g.kernel) {
    throw ShapeError(std::string(op) + ": kernel " + std::to_string(g.kernel) + " does not fit padded extent " +
                     std::to_string(in + 2 * g.padding));
  }
  return (in + 2 * g.padding - g.kernel) / g.stride + 1;
}

inline Extent3 conv_out_extents(const Extent3& in, const ConvGeometry& g, const char* op) {
  return {conv_out_extent(in[0], g, op), conv_out_extent(in[1], g, op), conv_out_extent(in[2], g, op)};
}

template <class T>
Tensor<T> as_rank5(const Tensor<T>& x, const char* op) {
  if (x.rank() == 5) return x;
  if (x.rank() == 4) {
    Shape s{1};
    s.insert(s.end(), x.shape().begin(), x.shape().end());
    return reshape(x, s);
  }
  throw ShapeError(std::string(op) + ": expected [C,D,H,W] or [N,C,D,H,W], got " + shape_str(x.shape()));
}

inline Extent3 spatial(const Shape& s) { return {s[2], s[3], s[4]}; }

/// col[(c, kd, kh, kw), (od, oh, ow)] for one batch item.
template <class T>
void im2col(const T* x, std::size_t channels, const Extent3& in, const Extent3& out, const ConvGeometry& g,
            T* col) {
  const std::size_t k = g.kernel;
  const std::size_t out_sites = out[0] * out[1] * out[2];
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t kd = 0; kd < k; ++kd)
      for (std::size_t kh = 0; kh < k; ++kh)
        for (std::size_t kw = 0; kw < k; ++kw) {
          T* row = col + (((c * k + kd) * k + kh) * k + kw) * out_sites;
          std::size_t site = 0;
          for (std::size_t od = 0; od < out[0]; ++od) {
            const long id = static_cast<long>(od * g.stride + kd) - static_cast<long>(g.padding);
            for (std::size_t oh = 0; oh < out[1]; ++oh) {
              const long ih = static_cast<long>(oh * g.stride + kh) - static_cast<long>(g.padding);
              for (std::size_t ow = 0; ow < out[2]; ++ow, ++site) {
                const long iw = static_cast<long>(ow * g.stride + kw) - static_cast<long>(g.padding);
                const bool inside = id >= 0 && ih >= 0 && iw >= 0 && id < static_cast<long>(in[0]) &&
                                    ih < static_cast<long>(in[1]) && iw < static_cast<long>(in[2]);
                row[site] = inside ? x[((c * in[0] + id) * in[1] + ih) * in[2] + iw] : T(0);
              }
            }
          }
        }
}

template <class T>
void col2im(const T* col, std::size_t channels, const Extent3& in, const Extent3& out, const ConvGeometry& g, T* x) {
  const std::size_t k = g.kernel;
  const std::size_t out_sites = out[0] * out[1] * out[2];
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t kd = 0; kd < k; ++kd)
      for (std::size_t kh = 0; kh < k; ++kh)
        for (std::size_t kw = 0; kw < k; ++kw) {
          const T* row = col + (((c * k + kd) * k + kh) * k + kw) * out_sites;
          std::size_t site = 0;
          for (std::size_t od = 0; od < out[0]; ++od) {
            const long id = static_cast<long>(od * g.stride + kd) - static_cast<long>(g.padding);
            for (std::size_t oh = 0; oh < out[1]; ++oh) {
              const long ih = static_cast<long>(oh * g.stride + kh) - static_cast<long>(g.padding);
              for (std::size_t ow = 0; ow < out[2]; ++ow, ++site) {
                const long iw = static_cast<long>(ow * g.stride + kw) - static_cast<long>(g.padding);
                if (id >= 0 && ih >= 0 && iw >= 0 && id < static_cast<long>(in[0]) && ih < static_cast<long>(in[1]) &&
                    iw < static_cast<long>(in[2])) {
                  x[((c * in[0] + id) * in[1] + ih) * in[2] + iw] += row[site];
                }
              }
            }
          }
        }
}

inline void check_weight(const Shape& w, std::size_t out_ch, std::size_t in_ch, const ConvGeometry& g,
                         const char* op) {
  const Shape expect{out_ch, in_ch, g.kernel, g.kernel, g.kernel};
  if (w != expect) {
    throw ShapeError(std::string(op) + ": weight shape " + shape_str(w) + " does not conform, expected " +
                     shape_str(expect));
  }
}

}  // namespace detail

template <class T>
Tensor<T> conv_adjoint(const Tensor<T>& y, const Tensor<T>& w, const ConvGeometry& g, const Extent3& x_extent);
template <class T>
Tensor<T> conv_filter_grad(const Tensor<T>& x, const Tensor<T>& y, const ConvGeometry& g);

/// Cross-correlation. x: [N, Cin, D, H, W], w: [Cout, Cin, k, k, k].
template <class T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& w, const ConvGeometry& g) {
  if (x.rank() != 5 || w.rank() != 5 || w.dim(1) != x.dim(1)) {
    throw ShapeError("conv3d: channel mismatch between input " + shape_str(x.shape()) + " and weight " +
                     shape_str(w.shape()));
  }
  detail::check_weight(w.shape(), w.dim(0), x.dim(1), g, "conv3d");
  const std::size_t n = x.dim(0), cin = x.dim(1), cout = w.dim(0);
  const Extent3 in = detail::spatial(x.shape());
  const Extent3 out = detail::conv_out_extents(in, g, "conv3d");
  const std::size_t in_sites = in[0] * in[1] * in[2];
  const std::size_t out_sites = out[0] * out[1] * out[2];
  const std::size_t patch = cin * g.kernel * g.kernel * g.kernel;
  Tensor<T> result(Shape{n, cout, out[0], out[1], out[2]});
  std::vector<T> col(patch * out_sites);
  detail::ConstMatMap<T> wm(w.data().data(), cout, patch);
  for (std::size_t b = 0; b < n; ++b) {
    detail::im2col(x.data().data() + b * cin * in_sites, cin, in, out, g, col.data());
    detail::MatMap<T>(result.data().data() + b * cout * out_sites, cout, out_sites).noalias() =
        wm * detail::ConstMatMap<T>(col.data(), patch, out_sites);
  }
  return detail::record<T>(result, "conv3d", {x, w}, [g, in](const Tensor<T>& grad, const std::vector<Tensor<T>>& v) {
    Tensor<T> gx, gw;
    if (v[0].requires_grad()) gx = conv_adjoint(grad, v[1], g, in);
    if (v[1].requires_grad()) gw = conv_filter_grad(v[0], grad, g);
    return std::vector<Tensor<T>>{gx, gw};
  });
}

/// Adjoint of conv_forward with the same weight: y: [N, Cout, ...] -> [N, Cin, x_extent].
template <class T>
Tensor<T> conv_adjoint(const Tensor<T>& y, const Tensor<T>& w, const ConvGeometry& g, const Extent3& x_extent) {
  if (y.rank() != 5 || w.rank() != 5 || w.dim(0) != y.dim(1)) {
    throw ShapeError("conv_transpose3d: channel mismatch between input " + shape_str(y.shape()) + " and weight " +
                     shape_str(w.shape()));
  }
  detail::check_weight(w.shape(), y.dim(1), w.dim(1), g, "conv_transpose3d");
  const Extent3 out = detail::conv_out_extents(x_extent, g, "conv_transpose3d");
  if (out != detail::spatial(y.shape())) {
    throw ShapeError("conv_transpose3d: input " + shape_str(y.shape()) + " inconsistent with output extent " +
                     shape_str(Shape(x_extent.begin(), x_extent.end())));
  }
  const std::size_t n = y.dim(0), cout = y.dim(1), cin = w.dim(1);
  const std::size_t in_sites = x_extent[0] * x_extent[1] * x_extent[2];
  const std::size_t out_sites = out[0] * out[1] * out[2];
  const std::size_t patch = cin * g.kernel * g.kernel * g.kernel;
  Tensor<T> result(Shape{n, cin, x_extent[0], x_extent[1], x_extent[2]});
  std::vector<T> col(patch * out_sites);
  detail::ConstMatMap<T> wm(w.data().data(), cout, patch);
  for (std::size_t b = 0; b < n; ++b) {
    detail::MatMap<T>(col.data(), patch, out_sites).noalias() =
        wm.transpose() * detail::ConstMatMap<T>(y.data().data() + b * cout * out_sites, cout, out_sites);
    detail::col2im(col.data(), cin, x_extent, out, g, result.data().data() + b * cin * in_sites);
  }
  return detail::record<T>(result, "conv_transpose3d", {y, w},
                           [g](const Tensor<T>& grad, const std::vector<Tensor<T>>& v) {
                             Tensor<T> gy, gw;
                             if (v[0].requires_grad()) gy = conv_forward(grad, v[1], g);
                             if (v[1].requires_grad()) gw = conv_filter_grad(grad, v[0], g);
                             return std::vector<Tensor<T>>{gy, gw};
                           });
}

/// Weight-space correlation of x [N, Cin, ...] with y [N, Cout, ...], summed over the batch.
template <class T>
Tensor<T> conv_filter_grad(const Tensor<T>& x, const Tensor<T>& y, const ConvGeometry& g) {
  if (x.rank() != 5 || y.rank() != 5 || x.dim(0) != y.dim(0)) detail::shape_mismatch("conv_filter_grad", x, y);
  const Extent3 in = detail::spatial(x.shape());
  const Extent3 out = detail::conv_out_extents(in, g, "conv_filter_grad");
  if (out != detail::spatial(y.shape())) detail::shape_mismatch("conv_filter_grad", x, y);
  const std::size_t n = x.dim(0), cin = x.dim(1), cout = y.dim(1);
  const std::size_t in_sites = in[0] * in[1] * in[2];
  const std::size_t out_sites = out[0] * out[1] * out[2];
  const std::size_t patch = cin * g.kernel * g.kernel * g.kernel;
  Tensor<T> result(Shape{cout, cin, g.kernel, g.kernel, g.kernel});
  detail::MatMap<T> wm(result.data().data(), cout, patch);
  std::vector<T> col(patch * out_sites);
  for (std::size_t b = 0; b < n; ++b) {
    detail::im2col(x.data().data() + b * cin * in_sites, cin, in, out, g, col.data());
    wm.noalias() += detail::ConstMatMap<T>(y.data().data() + b * cout * out_sites, cout, out_sites) *
                    detail::ConstMatMap<T>(col.data(), patch, out_sites).transpose();
  }
  return detail::record<T>(result, "conv_filter_grad", {x, y},
                           [g, in](const Tensor<T>& grad, const std::vector<Tensor<T>>& v) {
                             Tensor<T> gx, gy;
                             if (v[0].requires_grad()) gx = conv_adjoint(v[1], grad, g, in);
                             if (v[1].requires_grad()) gy = conv_forward(v[0], grad, g);
                             return std::vector<Tensor<T>>{gx, gy};
                           });
}

/// conv3d with optional bias. Accepts [C,D,H,W] or [N,C,D,H,W] inputs and
/// returns the same rank.
template <class T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
  if (weight.rank() != 5) throw ShapeError("conv3d: weight must be rank 5, got " + shape_str(weight.shape()));
  const ConvGeometry g{weight.dim(2), stride, padding};
  auto x = detail::as_rank5(input, "conv3d");
  auto y = conv_forward(x, weight, g);
  if (bias.defined()) {
    if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) detail::shape_mismatch("conv3d bias", bias, weight);
    y = add_bias(y, bias, 1);
  }
  if (input.rank() == 4) y = reshape(y, Shape(y.shape().begin() + 1, y.shape().end()));
  return y;
}

/// Transposed conv3d. weight: [Cin, Cout, k, k, k]; output extent (in-1)*stride - 2*pad + k.
template <class T>
Tensor<T> conv_transpose3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                           std::size_t stride, std::size_t padding) {
  if (weight.rank() != 5) throw ShapeError("conv_transpose3d: weight must be rank 5, got " + shape_str(weight.shape()));
  const ConvGeometry g{weight.dim(2), stride, padding};
  auto y = detail::as_rank5(input, "conv_transpose3d");
  Extent3 ext{};
  for (std::size_t a = 0; a < 3; ++a) {
    const long e = static_cast<long>((y.dim(2 + a) - 1) * stride + g.kernel) - 2 * static_cast<long>(padding);
    if (e <= 0) throw ShapeError("conv_transpose3d: non-positive output extent for input " + shape_str(input.shape()));
    ext[a] = static_cast<std::size_t>(e);
  }
  auto x = conv_adjoint(y, weight, g, ext);
  if (bias.defined()) {
    if (bias.rank() != 1 || bias.dim(0) != weight.dim(1)) detail::shape_mismatch("conv_transpose3d bias", bias, weight);
    x = add_bias(x, bias, 1);
  }
  if (input.rank() == 4) x = reshape(x, Shape(x.shape().begin() + 1, x.shape().end()));
  return x;
}

}  // namespace sst
