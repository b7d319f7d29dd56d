#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "sst/tensor.hpp"

namespace sst {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Per-parameter moment accumulators.
struct OptimizerState {
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
  std::size_t step = 0;
};

/// Adaptive-moment optimizer over a fixed list of named parameters.
template <class T>
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Tensor<T>>> params, AdamConfig config)
      : params_(std::move(params)), config_(config) {
    for (const auto& [name, p] : params_) {
      state_.first.emplace_back(p.numel(), 0.0);
      state_.second.emplace_back(p.numel(), 0.0);
    }
  }

  /// Applies one update from the accumulated `.grad()` of every parameter.
  /// Parameters without a gradient are treated as having zero gradient.
  /// A non-finite gradient aborts the step before anything is modified.
  void step() {
    for (const auto& [name, p] : params_) {
      auto g = p.grad();
      if (!g.defined()) continue;
      for (T v : g.data())
        if (!std::isfinite(static_cast<double>(v))) throw NumericError("optimizer: non-finite gradient in " + name);
    }
    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const double bias1 = 1.0 - std::pow(config_.beta1, t);
    const double bias2 = 1.0 - std::pow(config_.beta2, t);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto p = params_[i].second;
      auto g = p.grad();
      auto& m = state_.first[i];
      auto& v = state_.second[i];
      auto values = p.data();
      for (std::size_t j = 0; j < values.size(); ++j) {
        const double gj = g.defined() ? static_cast<double>(g[j]) : 0.0;
        m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * gj;
        v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * gj * gj;
        const double update = config_.lr * (m[j] / bias1) / (std::sqrt(v[j] / bias2) + config_.eps);
        values[j] = static_cast<T>(static_cast<double>(values[j]) - update);
      }
    }
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  const OptimizerState& state() const { return state_; }
  OptimizerState& state() { return state_; }
  AdamConfig& config() { return config_; }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  AdamConfig config_;
  OptimizerState state_;
};

}  // namespace sst
