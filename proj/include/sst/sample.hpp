#pragma once

// Trilinear interpolation of a feature grid whose nodes sit at cell corners
// spanning [0,1]^3 (node i at i / (g - 1)). Axis order of the grid is
// [C, X, Y, Z]; points are (x, y, z).

#include <array>

#include "sst/ops.hpp"

namespace sst {

namespace detail {

struct Corner {
  std::array<std::size_t, 3> base;  // lower node index per axis
  std::array<double, 3> frac;       // position within the cell per axis
  std::array<bool, 3> clamped;      // coordinate was outside [0,1]
};

inline Corner locate(const double* p, std::size_t g) {
  Corner c{};
  for (int a = 0; a < 3; ++a) {
    double v = p[a];
    c.clamped[a] = !(v >= 0.0 && v <= 1.0);
    if (!(v >= 0.0)) v = 0.0;
    if (v > 1.0) v = 1.0;
    if (g == 1) {
      c.base[a] = 0;
      c.frac[a] = 0.0;
      continue;
    }
    const double u = v * static_cast<double>(g - 1);
    std::size_t i = static_cast<std::size_t>(u);
    if (i > g - 2) i = g - 2;
    c.base[a] = i;
    c.frac[a] = u - static_cast<double>(i);
  }
  return c;
}

struct GridLayout {
  std::size_t batch, channels, g, points;
};

template <class T>
GridLayout sample_layout(const Tensor<T>& grid, const Tensor<T>& points, const char* op) {
  const bool batched = grid.rank() == 5;
  if (!(grid.rank() == 4 || batched)) {
    throw ShapeError(std::string(op) + ": grid must be [C,G,G,G] or [B,C,G,G,G], got " + shape_str(grid.shape()));
  }
  const std::size_t off = batched ? 1 : 0;
  const std::size_t g = grid.dim(off + 1);
  if (grid.dim(off + 2) != g || grid.dim(off + 3) != g) {
    throw ShapeError(std::string(op) + ": grid must be cubic, got " + shape_str(grid.shape()));
  }
  const Shape want_pts = batched ? Shape{grid.dim(0), points.rank() == 3 ? points.dim(1) : 0, 3}
                                 : Shape{points.rank() == 2 ? points.dim(0) : 0, 3};
  if (points.shape() != want_pts) {
    throw ShapeError(std::string(op) + ": points " + shape_str(points.shape()) + " do not match grid " +
                     shape_str(grid.shape()));
  }
  return {batched ? grid.dim(0) : 1, grid.dim(off), g, batched ? points.dim(1) : points.dim(0)};
}

template <class T>
std::array<double, 3> point_at(const Tensor<T>& points, std::size_t idx) {
  return {static_cast<double>(points[idx * 3]), static_cast<double>(points[idx * 3 + 1]),
          static_cast<double>(points[idx * 3 + 2])};
}

}  // namespace detail

template <class T>
Tensor<T> trilinear_splat(const Tensor<T>& values, const Tensor<T>& points, const Shape& grid_shape);

/// Samples `grid` at `points`; output [P, C] (or [B, P, C] for a batched grid).
/// Points outside the unit cube are clamped to the boundary and counted in
/// `clamped_count` when provided. Differentiable w.r.t. the grid (any order)
/// and the points (first order).
template <class T>
Tensor<T> trilinear_sample(const Tensor<T>& grid, const Tensor<T>& points, std::size_t* clamped_count = nullptr) {
  const auto lay = detail::sample_layout(grid, points, "trilinear_sample");
  const std::size_t g = lay.g, C = lay.channels, P = lay.points;
  const std::size_t node_count = g * g * g;
  Shape out_shape = grid.rank() == 5 ? Shape{lay.batch, P, C} : Shape{P, C};
  Tensor<T> out(out_shape);
  std::size_t clamped = 0;
  auto gd = grid.data();
  for (std::size_t b = 0; b < lay.batch; ++b) {
    const T* gb = gd.data() + b * C * node_count;
    for (std::size_t p = 0; p < P; ++p) {
      const auto pt = detail::point_at(points, b * P + p);
      const auto c = detail::locate(pt.data(), g);
      if (c.clamped[0] || c.clamped[1] || c.clamped[2]) ++clamped;
      T* o = out.data().data() + (b * P + p) * C;
      for (int corner = 0; corner < 8; ++corner) {
        const std::size_t dx = corner & 1, dy = (corner >> 1) & 1, dz = (corner >> 2) & 1;
        const double w = (dx ? c.frac[0] : 1.0 - c.frac[0]) * (dy ? c.frac[1] : 1.0 - c.frac[1]) *
                         (dz ? c.frac[2] : 1.0 - c.frac[2]);
        if (w == 0.0) continue;
        const std::size_t ix = std::min(c.base[0] + dx, g - 1), iy = std::min(c.base[1] + dy, g - 1),
                          iz = std::min(c.base[2] + dz, g - 1);
        const std::size_t node = (ix * g + iy) * g + iz;
        for (std::size_t ch = 0; ch < C; ++ch) o[ch] += static_cast<T>(w) * gb[ch * node_count + node];
      }
    }
  }
  if (clamped_count) *clamped_count = clamped;
  return detail::record<T>(out, "trilinear_sample", {grid, points}, [](const Tensor<T>& grad, const auto& in) {
    Tensor<T> g_grid, g_pts;
    if (in[0].requires_grad()) g_grid = trilinear_splat(grad, in[1].detach(), in[0].shape());
    if (in[1].requires_grad()) {
      detail::first_order_only("trilinear_sample (points)");
      const auto lay = detail::sample_layout(in[0], in[1], "trilinear_sample");
      const std::size_t g = lay.g, C = lay.channels, P = lay.points, nodes = g * g * g;
      g_pts = Tensor<T>(in[1].shape());
      const double scale = static_cast<double>(g > 1 ? g - 1 : 0);
      for (std::size_t b = 0; b < lay.batch; ++b) {
        const T* gb = in[0].data().data() + b * C * nodes;
        for (std::size_t p = 0; p < P; ++p) {
          const auto pt = detail::point_at(in[1], b * P + p);
          const auto c = detail::locate(pt.data(), g);
          const T* go = grad.data().data() + (b * P + p) * C;
          for (int corner = 0; corner < 8; ++corner) {
            const std::size_t d[3] = {static_cast<std::size_t>(corner & 1), static_cast<std::size_t>((corner >> 1) & 1),
                                      static_cast<std::size_t>((corner >> 2) & 1)};
            double wa[3], dwa[3];
            for (int a = 0; a < 3; ++a) {
              wa[a] = d[a] ? c.frac[a] : 1.0 - c.frac[a];
              dwa[a] = (d[a] ? 1.0 : -1.0) * scale;
            }
            const std::size_t ix = std::min(c.base[0] + d[0], g - 1), iy = std::min(c.base[1] + d[1], g - 1),
                              iz = std::min(c.base[2] + d[2], g - 1);
            const std::size_t node = (ix * g + iy) * g + iz;
            double dot = 0.0;
            for (std::size_t ch = 0; ch < C; ++ch) dot += static_cast<double>(go[ch]) * gb[ch * nodes + node];
            for (int a = 0; a < 3; ++a) {
              if (c.clamped[a]) continue;
              const double dw = dwa[a] * wa[(a + 1) % 3] * wa[(a + 2) % 3];
              g_pts[(b * P + p) * 3 + a] += static_cast<T>(dw * dot);
            }
          }
        }
      }
    }
    return std::vector<Tensor<T>>{g_grid, g_pts};
  });
}

/// Adjoint of trilinear_sample w.r.t. the grid: scatters per-point values
/// back onto grid nodes with the interpolation weights.
template <class T>
Tensor<T> trilinear_splat(const Tensor<T>& values, const Tensor<T>& points, const Shape& grid_shape) {
  Tensor<T> grid(grid_shape);
  const auto lay = detail::sample_layout(grid, points, "trilinear_splat");
  const std::size_t g = lay.g, C = lay.channels, P = lay.points, nodes = g * g * g;
  const Shape want = grid_shape.size() == 5 ? Shape{lay.batch, P, C} : Shape{P, C};
  if (values.shape() != want) detail::shape_mismatch("trilinear_splat", values, points);
  for (std::size_t b = 0; b < lay.batch; ++b) {
    T* gb = grid.data().data() + b * C * nodes;
    for (std::size_t p = 0; p < P; ++p) {
      const auto pt = detail::point_at(points, b * P + p);
      const auto c = detail::locate(pt.data(), g);
      const T* v = values.data().data() + (b * P + p) * C;
      for (int corner = 0; corner < 8; ++corner) {
        const std::size_t dx = corner & 1, dy = (corner >> 1) & 1, dz = (corner >> 2) & 1;
        const double w = (dx ? c.frac[0] : 1.0 - c.frac[0]) * (dy ? c.frac[1] : 1.0 - c.frac[1]) *
                         (dz ? c.frac[2] : 1.0 - c.frac[2]);
        if (w == 0.0) continue;
        const std::size_t ix = std::min(c.base[0] + dx, g - 1), iy = std::min(c.base[1] + dy, g - 1),
                          iz = std::min(c.base[2] + dz, g - 1);
        const std::size_t node = (ix * g + iy) * g + iz;
        for (std::size_t ch = 0; ch < C; ++ch) gb[ch * nodes + node] += static_cast<T>(w) * v[ch];
      }
    }
  }
  return detail::record<T>(grid, "trilinear_splat", {values}, [points](const Tensor<T>& grad, const auto&) {
    return std::vector<Tensor<T>>{trilinear_sample(grad, points)};
  });
}

}  // namespace sst
