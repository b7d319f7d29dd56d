#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sst/error.hpp"
#include "sst/rng.hpp"

namespace sst {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline double dist_sq(const Vec3& a, const Vec3& b) {
  const Vec3 d = a - b;
  return dot(d, d);
}

using Triangle = std::array<std::uint32_t, 3>;

struct Bounds {
  Vec3 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
          std::numeric_limits<double>::infinity()};
  Vec3 hi{-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
          -std::numeric_limits<double>::infinity()};

  void add(const Vec3& p) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  }
  void add(const Bounds& b) {
    add(b.lo);
    add(b.hi);
  }
  bool empty() const { return lo[0] > hi[0]; }
  double longest_edge() const { return std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]}); }
  Vec3 center() const { return (lo + hi) * 0.5; }
};

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;

  bool empty() const { return triangles.empty(); }

  void validate() const {
    for (std::size_t t = 0; t < triangles.size(); ++t)
      for (auto i : triangles[t])
        if (i >= vertices.size()) {
          throw GeometryError("mesh: triangle " + std::to_string(t) + " references vertex " + std::to_string(i) +
                              " of " + std::to_string(vertices.size()));
        }
  }

  Vec3 face_cross(std::size_t t) const {
    const auto& f = triangles[t];
    return cross(vertices[f[1]] - vertices[f[0]], vertices[f[2]] - vertices[f[0]]);
  }
  double face_area(std::size_t t) const { return 0.5 * norm(face_cross(t)); }

  /// Unit normal, or zero for a degenerate face.
  Vec3 face_normal(std::size_t t) const {
    const Vec3 c = face_cross(t);
    const double n = norm(c);
    return n > 0 ? c * (1.0 / n) : Vec3{0, 0, 0};
  }

  double surface_area() const {
    double a = 0;
    for (std::size_t t = 0; t < triangles.size(); ++t) a += face_area(t);
    return a;
  }

  Bounds bounds() const {
    Bounds b;
    for (const auto& v : vertices) b.add(v);
    return b;
  }

  /// Signed volume by the divergence theorem; positive for outward-facing triangles.
  double signed_volume() const {
    double v = 0;
    for (const auto& f : triangles) v += dot(vertices[f[0]], cross(vertices[f[1]], vertices[f[2]])) / 6.0;
    return v;
  }

  /// Number of triangles incident on each undirected edge.
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> edge_incidence() const {
    std::map<std::pair<std::uint32_t, std::uint32_t>, int> count;
    for (const auto& f : triangles)
      for (int e = 0; e < 3; ++e) {
        auto a = f[e], b = f[(e + 1) % 3];
        ++count[{std::min(a, b), std::max(a, b)}];
      }
    return count;
  }

  /// Every edge shared by exactly two triangles.
  bool is_closed_manifold() const {
    if (triangles.empty()) return false;
    for (const auto& [edge, n] : edge_incidence())
      if (n != 2) return false;
    return true;
  }

  void append(const Mesh& other) {
    const auto base = static_cast<std::uint32_t>(vertices.size());
    vertices.insert(vertices.end(), other.vertices.begin(), other.vertices.end());
    for (auto f : other.triangles) triangles.push_back({f[0] + base, f[1] + base, f[2] + base});
  }
};

/// Uniform scale + translation so the longest bounding-box edge equals
/// `target_edge` and the box is centred at (0.5, 0.5, 0.5).
inline Mesh normalize_mesh(const Mesh& mesh, double target_edge = 1.0) {
  if (mesh.vertices.empty()) throw GeometryError("normalize_mesh: empty mesh");
  const Bounds b = mesh.bounds();
  const double edge = b.longest_edge();
  if (!(edge > 0)) throw GeometryError("normalize_mesh: mesh has zero extent");
  const double s = target_edge / edge;
  const Vec3 c = b.center();
  Mesh out = mesh;
  for (auto& v : out.vertices) v = (v - c) * s + Vec3{0.5, 0.5, 0.5};
  return out;
}

/// Area-weighted surface samples with the index of the face each came from.
struct SurfaceSamples {
  std::vector<Vec3> points;
  std::vector<std::uint32_t> faces;
};

inline SurfaceSamples sample_surface(const Mesh& mesh, std::size_t count, Rng& rng) {
  if (mesh.triangles.empty()) throw GeometryError("sample_surface: mesh has no triangles");
  std::vector<double> cdf(mesh.triangles.size());
  double total = 0;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) cdf[t] = total += mesh.face_area(t);
  if (!(total > 0)) throw GeometryError("sample_surface: mesh has zero area");
  SurfaceSamples out;
  out.points.reserve(count);
  out.faces.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double u = rng.uniform(0.0, total);
    auto t = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    t = std::min(t, cdf.size() - 1);
    double r1 = std::sqrt(rng.uniform(0.0, 1.0)), r2 = rng.uniform(0.0, 1.0);
    const auto& f = mesh.triangles[t];
    const Vec3 p = mesh.vertices[f[0]] * (1 - r1) + mesh.vertices[f[1]] * (r1 * (1 - r2)) +
                   mesh.vertices[f[2]] * (r1 * r2);
    out.points.push_back(p);
    out.faces.push_back(static_cast<std::uint32_t>(t));
  }
  return out;
}

/// Axis-aligned box [lo, hi] as 12 outward-facing triangles.
inline Mesh box_mesh(const Vec3& lo, const Vec3& hi) {
  Mesh m;
  for (int i = 0; i < 8; ++i) m.vertices.push_back({i & 1 ? hi[0] : lo[0], i & 2 ? hi[1] : lo[1], i & 4 ? hi[2] : lo[2]});
  // corner index = x + 2y + 4z
  const std::uint32_t quads[6][4] = {{0, 4, 6, 2}, {1, 3, 7, 5}, {0, 1, 5, 4}, {2, 6, 7, 3}, {0, 2, 3, 1}, {4, 5, 7, 6}};
  for (const auto& q : quads) {
    m.triangles.push_back({q[0], q[1], q[2]});
    m.triangles.push_back({q[0], q[2], q[3]});
  }
  return m;
}

/// UV sphere, closed and outward-facing.
inline Mesh sphere_mesh(const Vec3& c, double radius, std::size_t rings = 16, std::size_t segments = 32) {
  Mesh m;
  const double pi = std::acos(-1.0);
  m.vertices.push_back(c + Vec3{0, 0, radius});
  for (std::size_t i = 1; i < rings; ++i) {
    const double th = pi * double(i) / double(rings);
    for (std::size_t j = 0; j < segments; ++j) {
      const double ph = 2 * pi * double(j) / double(segments);
      m.vertices.push_back(c + Vec3{std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th)} * radius);
    }
  }
  m.vertices.push_back(c + Vec3{0, 0, -radius});
  const auto S = static_cast<std::uint32_t>(segments);
  const auto south = static_cast<std::uint32_t>(m.vertices.size() - 1);
  auto ring = [&](std::size_t i, std::size_t j) { return static_cast<std::uint32_t>(1 + (i - 1) * segments + j % segments); };
  for (std::uint32_t j = 0; j < S; ++j) m.triangles.push_back({0, ring(1, j), ring(1, j + 1)});
  for (std::size_t i = 1; i + 1 < rings; ++i)
    for (std::size_t j = 0; j < segments; ++j) {
      m.triangles.push_back({ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)});
      m.triangles.push_back({ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)});
    }
  for (std::uint32_t j = 0; j < S; ++j) m.triangles.push_back({south, ring(rings - 1, j + 1), ring(rings - 1, j)});
  return m;
}

}  // namespace sst
