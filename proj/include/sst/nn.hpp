#pragma once

// Small trainable building blocks. Each layer owns its parameter tensors and
// reports them as (name, tensor) pairs for optimizers and checkpoints.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "sst/conv.hpp"

namespace sst {

template <class T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

template <class T>
void append_params(NamedParams<T>& out, const std::string& prefix, const NamedParams<T>& in) {
  for (const auto& [name, t] : in) out.emplace_back(prefix + name, t);
}

template <class T>
Tensor<T> make_param(Shape shape, Rng& rng, double fan_in) {
  const double bound = 1.0 / std::sqrt(fan_in);
  auto t = Tensor<T>::uniform(std::move(shape), rng, -bound, bound);
  t.set_requires_grad(true);
  return t;
}

template <class T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng)
      : weight(make_param<T>({in, out}, rng, static_cast<double>(in))),
        bias(make_param<T>({out}, rng, static_cast<double>(in))) {}

  /// x: [N, in] -> [N, out]
  Tensor<T> operator()(const Tensor<T>& x) const { return add_bias(matmul(x, weight), bias, 1); }

  NamedParams<T> params() const { return {{"weight", weight}, {"bias", bias}}; }
};

template <class T>
struct Conv3dLayer {
  Tensor<T> weight;  // [out, in, k, k, k]
  Tensor<T> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  Conv3dLayer() = default;
  Conv3dLayer(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_, std::size_t padding_, Rng& rng)
      : weight(make_param<T>({out, in, kernel, kernel, kernel}, rng, static_cast<double>(in * kernel * kernel * kernel))),
        bias(make_param<T>({out}, rng, static_cast<double>(in * kernel * kernel * kernel))),
        stride(stride_),
        padding(padding_) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return conv3d(x, weight, bias, stride, padding); }

  NamedParams<T> params() const { return {{"weight", weight}, {"bias", bias}}; }
};

template <class T>
struct ConvTranspose3dLayer {
  Tensor<T> weight;  // [in, out, k, k, k]
  Tensor<T> bias;    // [out]
  std::size_t stride = 1;
  std::size_t padding = 0;

  ConvTranspose3dLayer() = default;
  ConvTranspose3dLayer(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_, std::size_t padding_,
                       Rng& rng)
      : weight(make_param<T>({in, out, kernel, kernel, kernel}, rng,
                             static_cast<double>(in * kernel * kernel * kernel) /
                                 static_cast<double>(stride_ * stride_ * stride_))),
        bias(make_param<T>({out}, rng, static_cast<double>(in))),
        stride(stride_),
        padding(padding_) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return conv_transpose3d(x, weight, bias, stride, padding); }

  NamedParams<T> params() const { return {{"weight", weight}, {"bias", bias}}; }
};

/// Copies parameter values (not graph state) between two identically shaped lists.
template <class T>
void copy_values(const NamedParams<T>& from, NamedParams<T>& to) {
  if (from.size() != to.size()) throw ShapeError("copy_values: parameter count mismatch");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i].second.shape() != to[i].second.shape()) {
      throw ShapeError("copy_values: " + from[i].first + " shape mismatch");
    }
    std::copy(from[i].second.data().begin(), from[i].second.data().end(), to[i].second.data().begin());
  }
}

}  // namespace sst
