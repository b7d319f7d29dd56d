#pragma once

// Parameter (and optimizer state) persistence on top of Container.

#include <string>

#include "sst/container.hpp"
#include "sst/nn.hpp"
#include "sst/optim.hpp"

namespace sst {

template <class T>
void store_params(Container& c, const std::string& prefix, const NamedParams<T>& params) {
  for (const auto& [name, t] : params) c.put_tensor(prefix + name, t);
}

/// Overwrites parameter values in place; shapes must agree exactly.
template <class T>
void restore_params(const Container& c, const std::string& prefix, NamedParams<T>& params) {
  for (auto& [name, t] : params) {
    const auto& e = c.entry(prefix + name);
    if (e.shape != t.shape()) {
      throw ShapeError("checkpoint: '" + prefix + name + "' stored as " + shape_str(e.shape) + ", model expects " +
                       shape_str(t.shape()));
    }
    auto v = c.get<T>(prefix + name);
    std::copy(v.begin(), v.end(), t.data().begin());
  }
}

template <class T>
void store_optimizer(Container& c, const std::string& prefix, const Adam<T>& opt) {
  const auto& s = opt.state();
  for (std::size_t i = 0; i < s.first.size(); ++i) {
    const Shape shape{s.first[i].size()};
    c.put(prefix + "m." + std::to_string(i), shape, s.first[i]);
    c.put(prefix + "v." + std::to_string(i), shape, s.second[i]);
  }
  c.meta[prefix + "step"] = s.step;
}

template <class T>
void restore_optimizer(const Container& c, const std::string& prefix, Adam<T>& opt) {
  auto& s = opt.state();
  for (std::size_t i = 0; i < s.first.size(); ++i) {
    auto m = c.get<double>(prefix + "m." + std::to_string(i));
    auto v = c.get<double>(prefix + "v." + std::to_string(i));
    if (m.size() != s.first[i].size() || v.size() != s.second[i].size()) {
      throw ShapeError("checkpoint: optimizer state size mismatch at slot " + std::to_string(i));
    }
    s.first[i] = std::move(m);
    s.second[i] = std::move(v);
  }
  s.step = c.meta.at(prefix + "step").get<std::size_t>();
}

}  // namespace sst
