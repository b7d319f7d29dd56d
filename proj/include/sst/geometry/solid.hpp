#pragma once

// Analytic solids built as unions of oriented boxes, cylinders and spheres.
// Each primitive has an exact inside test and an area-weighted surface
// sampler; the union's surface is sampled by rejecting points that fall
// strictly inside another primitive.

#include <cmath>
#include <string>
#include <vector>

#include "sst/geometry/mesh.hpp"

namespace sst {

/// Row-major 3x3 rotation.
using Mat3 = std::array<double, 9>;

inline Mat3 identity3() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

inline Mat3 rotation(int axis, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  switch (axis) {
    case 0: return {1, 0, 0, 0, c, -s, 0, s, c};
    case 1: return {c, 0, s, 0, 1, 0, -s, 0, c};
    default: return {c, -s, 0, s, c, 0, 0, 0, 1};
  }
}

inline Mat3 matmul3(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return r;
}

inline Vec3 rotate(const Mat3& m, const Vec3& v) {
  return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
          m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

inline Vec3 rotate_inverse(const Mat3& m, const Vec3& v) {
  return {m[0] * v[0] + m[3] * v[1] + m[6] * v[2], m[1] * v[0] + m[4] * v[1] + m[7] * v[2],
          m[2] * v[0] + m[5] * v[1] + m[8] * v[2]};
}

enum class PrimitiveKind { Box, Cylinder, Sphere };

/// Local frame: world = center + R * local. Boxes use `half` extents;
/// cylinders run along local y with radius half[0] and half-height half[1];
/// spheres use radius half[0].
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::Box;
  Vec3 center{};
  Vec3 half{};
  Mat3 rot = identity3();
  std::string tag;

  static Primitive box(const Vec3& c, const Vec3& half, const Mat3& r = identity3(), std::string tag = {}) {
    return {PrimitiveKind::Box, c, half, r, std::move(tag)};
  }
  static Primitive cylinder(const Vec3& c, double radius, double half_height, const Mat3& r = identity3(),
                            std::string tag = {}) {
    return {PrimitiveKind::Cylinder, c, {radius, half_height, radius}, r, std::move(tag)};
  }
  static Primitive sphere(const Vec3& c, double radius, std::string tag = {}) {
    return {PrimitiveKind::Sphere, c, {radius, radius, radius}, identity3(), std::move(tag)};
  }

  Vec3 to_local(const Vec3& p) const { return rotate_inverse(rot, p - center); }
  Vec3 to_world(const Vec3& q) const { return center + rotate(rot, q); }

  /// Closed-set membership.
  bool inside(const Vec3& p) const {
    const Vec3 q = to_local(p);
    switch (kind) {
      case PrimitiveKind::Box:
        return std::abs(q[0]) <= half[0] && std::abs(q[1]) <= half[1] && std::abs(q[2]) <= half[2];
      case PrimitiveKind::Cylinder:
        return std::abs(q[1]) <= half[1] && q[0] * q[0] + q[2] * q[2] <= half[0] * half[0];
      case PrimitiveKind::Sphere:
        return dot(q, q) <= half[0] * half[0];
    }
    return false;
  }

  /// Strict interior with a small margin, used to reject union-internal surface samples.
  bool strictly_inside(const Vec3& p, double margin = 1e-9) const {
    const Vec3 q = to_local(p);
    switch (kind) {
      case PrimitiveKind::Box:
        return std::abs(q[0]) < half[0] - margin && std::abs(q[1]) < half[1] - margin &&
               std::abs(q[2]) < half[2] - margin;
      case PrimitiveKind::Cylinder: {
        const double r = half[0] - margin;
        return std::abs(q[1]) < half[1] - margin && q[0] * q[0] + q[2] * q[2] < r * r;
      }
      case PrimitiveKind::Sphere: {
        const double r = half[0] - margin;
        return dot(q, q) < r * r;
      }
    }
    return false;
  }

  double surface_area() const {
    const double pi = std::acos(-1.0);
    switch (kind) {
      case PrimitiveKind::Box:
        return 8 * (half[0] * half[1] + half[1] * half[2] + half[0] * half[2]);
      case PrimitiveKind::Cylinder:
        return 2 * pi * half[0] * half[0] + 2 * pi * half[0] * 2 * half[1];
      case PrimitiveKind::Sphere:
        return 4 * pi * half[0] * half[0];
    }
    return 0;
  }

  double volume() const {
    const double pi = std::acos(-1.0);
    switch (kind) {
      case PrimitiveKind::Box: return 8 * half[0] * half[1] * half[2];
      case PrimitiveKind::Cylinder: return pi * half[0] * half[0] * 2 * half[1];
      case PrimitiveKind::Sphere: return 4.0 / 3.0 * pi * half[0] * half[0] * half[0];
    }
    return 0;
  }

  Vec3 sample_surface(Rng& rng) const {
    const double pi = std::acos(-1.0);
    Vec3 q{};
    switch (kind) {
      case PrimitiveKind::Box: {
        const double axy = half[0] * half[1], ayz = half[1] * half[2], axz = half[0] * half[2];
        const double u = rng.uniform(0.0, axy + ayz + axz);
        const int fixed = u < axy ? 2 : (u < axy + ayz ? 0 : 1);
        for (int a = 0; a < 3; ++a) q[a] = rng.uniform(-half[a], half[a]);
        q[fixed] = rng.bernoulli(0.5) ? half[fixed] : -half[fixed];
        break;
      }
      case PrimitiveKind::Cylinder: {
        const double r = half[0], h = half[1];
        const double cap = pi * r * r, side = 2 * pi * r * 2 * h;
        const double u = rng.uniform(0.0, 2 * cap + side);
        if (u < side) {
          const double ph = rng.uniform(0.0, 2 * pi);
          q = {r * std::cos(ph), rng.uniform(-h, h), r * std::sin(ph)};
        } else {
          const double rr = r * std::sqrt(rng.uniform(0.0, 1.0)), ph = rng.uniform(0.0, 2 * pi);
          q = {rr * std::cos(ph), u < side + cap ? h : -h, rr * std::sin(ph)};
        }
        break;
      }
      case PrimitiveKind::Sphere: {
        Vec3 g{rng.normal(), rng.normal(), rng.normal()};
        const double n = norm(g);
        q = n > 0 ? g * (half[0] / n) : Vec3{half[0], 0, 0};
        break;
      }
    }
    return to_world(q);
  }

  Bounds bounds() const {
    Bounds b;
    if (kind == PrimitiveKind::Sphere) {
      b.add(center - half);
      b.add(center + half);
      return b;
    }
    // Corners of the local box (cylinders use their bounding box, which is
    // tight for axis-aligned orientations and conservative otherwise).
    for (int i = 0; i < 8; ++i)
      b.add(to_world({i & 1 ? half[0] : -half[0], i & 2 ? half[1] : -half[1], i & 4 ? half[2] : -half[2]}));
    return b;
  }

  Primitive transformed(double scale, const Vec3& shift) const {
    Primitive p = *this;
    p.center = center * scale + shift;
    p.half = half * scale;
    return p;
  }
};

/// Union of primitives.
struct Solid {
  std::vector<Primitive> parts;

  bool empty() const { return parts.empty(); }

  bool inside(const Vec3& p) const {
    for (const auto& q : parts)
      if (q.inside(p)) return true;
    return false;
  }

  Bounds bounds() const {
    Bounds b;
    for (const auto& q : parts) b.add(q.bounds());
    return b;
  }

  /// Points on the union's boundary; samples on a primitive's surface that
  /// lie strictly inside another primitive are redrawn.
  std::vector<Vec3> sample_surface(std::size_t count, Rng& rng) const {
    if (parts.empty()) throw GeometryError("solid: cannot sample the surface of an empty solid");
    std::vector<double> cdf;
    double total = 0;
    for (const auto& q : parts) cdf.push_back(total += q.surface_area());
    std::vector<Vec3> out;
    out.reserve(count);
    std::size_t attempts = 0;
    while (out.size() < count) {
      if (++attempts > 200 * count + 1000) {
        throw GeometryError("solid: surface sampling rejected too many points");
      }
      const double u = rng.uniform(0.0, total);
      auto i = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      i = std::min(i, parts.size() - 1);
      const Vec3 p = parts[i].sample_surface(rng);
      bool hidden = false;
      for (std::size_t j = 0; j < parts.size() && !hidden; ++j) hidden = j != i && parts[j].strictly_inside(p);
      if (!hidden) out.push_back(p);
    }
    return out;
  }

  Solid transformed(double scale, const Vec3& shift) const {
    Solid s;
    for (const auto& q : parts) s.parts.push_back(q.transformed(scale, shift));
    return s;
  }

  /// Uniformly rescales so the bounding box's longest edge equals
  /// `target_edge`, centred at (0.5, 0.5, 0.5).
  Solid normalized(double target_edge = 1.0) const {
    if (parts.empty()) throw GeometryError("solid: cannot normalize an empty solid");
    const Bounds b = bounds();
    const double s = target_edge / b.longest_edge();
    return transformed(s, Vec3{0.5, 0.5, 0.5} - b.center() * s);
  }
};

}  // namespace sst
