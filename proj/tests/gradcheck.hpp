#pragma once

// Central finite-difference oracle for gradient tests (f64 only).

#include <cmath>
#include <functional>
#include <vector>

#include "sst/ops.hpp"

namespace sst::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
};

/// Relative error between two gradient vectors, normalised by the larger norm.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
  return std::sqrt(diff) / scale;
}

/// Compares autograd gradients of the scalar `f(inputs)` against central
/// differences with step `h` for every input entry.
inline GradCheckResult gradcheck(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                                 std::vector<Tensor<double>> inputs, double h = 1e-5) {
  for (auto& t : inputs) {
    t.zero_grad();
    if (!t.requires_grad()) t.set_requires_grad(true);
  }
  auto out = f(inputs);
  auto analytic = grad(out, inputs);
  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<double> num(inputs[k].numel()), ana(inputs[k].numel());
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      const double saved = inputs[k][i];
      inputs[k][i] = saved + h;
      const double fp = f(inputs).item();
      inputs[k][i] = saved - h;
      const double fm = f(inputs).item();
      inputs[k][i] = saved;
      num[i] = (fp - fm) / (2 * h);
      ana[i] = analytic[k][i];
    }
    const double err = relative_error(ana, num);
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_input = k;
    }
  }
  return result;
}

}  // namespace sst::testing
