#pragma once

// Voxel grids, sampled occupancy fields, voxelization and occupancy sampling.
//
// Voxel file (little-endian):
//   "SVX1" | u32 extent r | f32 origin | f32 scale | ceil(r^3 / 8) bytes,
//   bit v of byte v/8 (LSB first) is voxel v = (x*r + y)*r + z.
// Voxel (x, y, z) has its centre at origin + (index + 0.5) * scale on each axis.
//
// Occupancy file (little-endian):
//   "SOCC" | u32 res | f32 origin | f32 spacing | res^3 f32 values.
// Node (i, j, k) sits at origin + index * spacing.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "sst/geometry/mesh.hpp"
#include "sst/geometry/solid.hpp"

namespace sst {

struct VoxelGrid {
  std::size_t r = 0;
  std::vector<std::uint8_t> bits;  // one byte per voxel, 0 or 1
  double origin = 0.0;
  double scale = 0.0;

  VoxelGrid() = default;
  explicit VoxelGrid(std::size_t extent)
      : r(extent), bits(extent * extent * extent, 0), origin(0.0), scale(1.0 / double(extent)) {
    if (extent == 0) throw ValueError("voxel grid: extent must be positive");
  }

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return (x * r + y) * r + z; }
  bool at(std::size_t x, std::size_t y, std::size_t z) const { return bits[index(x, y, z)] != 0; }
  Vec3 center(std::size_t x, std::size_t y, std::size_t z) const {
    return {origin + (double(x) + 0.5) * scale, origin + (double(y) + 0.5) * scale, origin + (double(z) + 0.5) * scale};
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }
  double fraction() const { return double(count()) / double(bits.size()); }

  bool operator==(const VoxelGrid&) const = default;
};

struct OccupancyField {
  std::size_t res = 0;
  double origin = 0.0;
  double spacing = 0.0;
  std::vector<float> values;

  OccupancyField() = default;
  /// Lattice over [0,1]^3 with nodes at i / (res - 1).
  explicit OccupancyField(std::size_t n) : res(n), origin(0.0), spacing(n > 1 ? 1.0 / double(n - 1) : 1.0),
                                           values(n * n * n, 0.0f) {
    if (n < 2) throw ValueError("occupancy field: resolution must be at least 2");
  }

  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return (i * res + j) * res + k; }
  float at(std::size_t i, std::size_t j, std::size_t k) const { return values[index(i, j, k)]; }
  Vec3 node(std::size_t i, std::size_t j, std::size_t k) const {
    return {origin + double(i) * spacing, origin + double(j) * spacing, origin + double(k) * spacing};
  }

  void validate() const {
    if (values.size() != res * res * res) throw ShapeError("occupancy field: value count does not match res^3");
    for (float v : values)
      if (!(v >= 0.0f && v <= 1.0f)) throw ValueError("occupancy field: values must lie in [0, 1]");
  }

  /// Binarized at voxel resolution: voxel (x,y,z) is set when node (x,y,z) exceeds iso.
  VoxelGrid threshold(double iso = 0.5) const {
    VoxelGrid g(res);
    g.origin = origin - 0.5 * spacing;
    g.scale = spacing;
    for (std::size_t i = 0; i < values.size(); ++i) g.bits[i] = values[i] > iso ? 1 : 0;
    return g;
  }
};

/// Evaluates f at every node of a res^3 lattice on [0,1]^3.
inline OccupancyField field_from_function(std::size_t res, const std::function<double(const Vec3&)>& f) {
  OccupancyField field(res);
  for (std::size_t i = 0; i < res; ++i)
    for (std::size_t j = 0; j < res; ++j)
      for (std::size_t k = 0; k < res; ++k) field.values[field.index(i, j, k)] = float(f(field.node(i, j, k)));
  return field;
}

/// Node-centred field over the voxel centres with a one-node zero border, so
/// the 0.5 level set of a voxelized shape is always closed.
inline OccupancyField field_from_voxels(const VoxelGrid& g) {
  OccupancyField f;
  f.res = g.r + 2;
  f.spacing = g.scale;
  f.origin = g.origin + 0.5 * g.scale - g.scale;
  f.values.assign(f.res * f.res * f.res, 0.0f);
  for (std::size_t x = 0; x < g.r; ++x)
    for (std::size_t y = 0; y < g.r; ++y)
      for (std::size_t z = 0; z < g.r; ++z)
        if (g.at(x, y, z)) f.values[f.index(x + 1, y + 1, z + 1)] = 1.0f;
  return f;
}

/// Exact membership at voxel centres.
inline VoxelGrid voxelize(const Solid& solid, std::size_t r) {
  VoxelGrid g(r);
  if (solid.empty()) return g;
  for (std::size_t x = 0; x < r; ++x)
    for (std::size_t y = 0; y < r; ++y)
      for (std::size_t z = 0; z < r; ++z) g.bits[g.index(x, y, z)] = solid.inside(g.center(x, y, z)) ? 1 : 0;
  return g;
}

namespace detail {

// Irrational sub-cell offsets keep rays away from mesh edges and vertices.
inline constexpr double kRayJitterU = 1.4142135623730951e-7;
inline constexpr double kRayJitterV = 1.7320508075688772e-7;

// If the ray parallel to `axis` through (u, v) crosses triangle f, returns
// true and the crossing coordinate along the axis.
inline bool ray_hit(const Mesh& m, const Triangle& f, int axis, double u, double v, double& depth) {
  const int a0 = (axis + 1) % 3, a1 = (axis + 2) % 3;
  const Vec3& p = m.vertices[f[0]];
  const Vec3& q = m.vertices[f[1]];
  const Vec3& s = m.vertices[f[2]];
  const double w0 = (q[a0] - p[a0]) * (v - p[a1]) - (q[a1] - p[a1]) * (u - p[a0]);
  const double w1 = (s[a0] - q[a0]) * (v - q[a1]) - (s[a1] - q[a1]) * (u - q[a0]);
  const double w2 = (p[a0] - s[a0]) * (v - s[a1]) - (p[a1] - s[a1]) * (u - s[a0]);
  const bool pos = w0 > 0 && w1 > 0 && w2 > 0, neg = w0 < 0 && w1 < 0 && w2 < 0;
  if (!pos && !neg) return false;
  const double total = w0 + w1 + w2;
  // w0 weights the vertex opposite edge (p, q), i.e. s; likewise for the others.
  depth = (w1 * p[axis] + w2 * q[axis] + w0 * s[axis]) / total;
  return true;
}

}  // namespace detail

/// Ray parity along +x from p.
inline bool point_inside_mesh(const Mesh& mesh, const Vec3& p) {
  const double u = p[1] + detail::kRayJitterU, v = p[2] + detail::kRayJitterV;
  std::size_t crossings = 0;
  for (const auto& f : mesh.triangles) {
    double depth = 0;
    if (detail::ray_hit(mesh, f, 0, u, v, depth) && depth > p[0]) ++crossings;
  }
  return crossings % 2 == 1;
}

/// Parity ray casting along each axis through every voxel-centre column,
/// combined by majority vote. Throws when the three axes disagree on more
/// than 1% of voxels, which indicates a mesh that is not watertight.
inline VoxelGrid voxelize(const Mesh& mesh, std::size_t r, const std::string& name = "mesh",
                          double origin = 0.0, double scale = -1.0) {
  mesh.validate();
  VoxelGrid g(r);
  g.origin = origin;
  if (scale > 0) g.scale = scale;
  std::vector<std::uint8_t> votes(g.bits.size(), 0);
  std::vector<std::vector<double>> columns(r * r);
  const double jit[2] = {detail::kRayJitterU * g.scale, detail::kRayJitterV * g.scale};
  for (int axis = 0; axis < 3; ++axis) {
    const int a0 = (axis + 1) % 3, a1 = (axis + 2) % 3;
    for (auto& c : columns) c.clear();
    for (const auto& f : mesh.triangles) {
      double lo0 = 1e300, hi0 = -1e300, lo1 = 1e300, hi1 = -1e300;
      for (auto i : f) {
        lo0 = std::min(lo0, mesh.vertices[i][a0]);
        hi0 = std::max(hi0, mesh.vertices[i][a0]);
        lo1 = std::min(lo1, mesh.vertices[i][a1]);
        hi1 = std::max(hi1, mesh.vertices[i][a1]);
      }
      auto first = [&](double lo) {
        const double t = std::ceil((lo - g.origin) / g.scale - 0.5 - 1e-9);
        return static_cast<long>(std::max(0.0, t));
      };
      auto last = [&](double hi) {
        const double t = std::floor((hi - g.origin) / g.scale - 0.5 + 1e-9);
        return static_cast<long>(std::min(double(r) - 1, t));
      };
      for (long i = first(lo0); i <= last(hi0); ++i)
        for (long j = first(lo1); j <= last(hi1); ++j) {
          const double u = g.origin + (double(i) + 0.5) * g.scale + jit[0];
          const double v = g.origin + (double(j) + 0.5) * g.scale + jit[1];
          double depth = 0;
          if (detail::ray_hit(mesh, f, axis, u, v, depth)) columns[std::size_t(i) * r + std::size_t(j)].push_back(depth);
        }
    }
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < r; ++j) {
        auto& hits = columns[i * r + j];
        std::sort(hits.begin(), hits.end());
        std::size_t h = 0;
        bool inside = false;
        for (std::size_t k = 0; k < r; ++k) {
          const double w = g.origin + (double(k) + 0.5) * g.scale;
          while (h < hits.size() && hits[h] < w) {
            inside = !inside;
            ++h;
          }
          if (!inside) continue;
          std::array<std::size_t, 3> idx{};
          idx[axis] = k;
          idx[a0] = i;
          idx[a1] = j;
          ++votes[g.index(idx[0], idx[1], idx[2])];
        }
      }
  }
  std::size_t disagree = 0;
  for (std::size_t i = 0; i < votes.size(); ++i) {
    g.bits[i] = votes[i] >= 2 ? 1 : 0;
    if (votes[i] != 0 && votes[i] != 3) ++disagree;
  }
  if (double(disagree) > 0.01 * double(votes.size())) {
    throw GeometryError("voxelize: '" + name + "' is not watertight (" + std::to_string(disagree) +
                        " voxels with inconsistent ray parity)");
  }
  return g;
}

struct OccupancySamples {
  std::vector<Vec3> points;
  std::vector<std::uint8_t> occupancy;
};

/// Uniform points in [0,1]^3 plus surface points jittered by N(0, sigma^2)
/// per axis (clamped back into the cube), labelled by the solid's inside test.
inline OccupancySamples sample_occupancy(const Solid& solid, std::size_t n_uniform, std::size_t n_surface, double sigma,
                                         Rng& rng) {
  OccupancySamples s;
  s.points.reserve(n_uniform + n_surface);
  for (std::size_t i = 0; i < n_uniform; ++i) s.points.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
  if (n_surface > 0) {
    for (auto p : solid.sample_surface(n_surface, rng)) {
      for (auto& c : p) c = std::clamp(c + rng.normal(0.0, sigma), 0.0, 1.0);
      s.points.push_back(p);
    }
  }
  s.occupancy.reserve(s.points.size());
  for (const auto& p : s.points) s.occupancy.push_back(solid.inside(p) ? 1 : 0);
  return s;
}

// ---------------------------------------------------------------------- files

namespace detail {

template <class V>
void put_le(std::vector<std::uint8_t>& out, V v) {
  std::uint8_t b[sizeof(V)];
  std::memcpy(b, &v, sizeof(V));
  out.insert(out.end(), b, b + sizeof(V));
}

template <class V>
V get_le(const std::vector<std::uint8_t>& in, std::size_t at) {
  V v;
  std::memcpy(&v, in.data() + at, sizeof(V));
  return v;
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed for '" + path + "'");
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_voxels(const VoxelGrid& g) {
  std::vector<std::uint8_t> out{'S', 'V', 'X', '1'};
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(g.r));
  detail::put_le<float>(out, static_cast<float>(g.origin));
  detail::put_le<float>(out, static_cast<float>(g.scale));
  std::vector<std::uint8_t> packed((g.bits.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < g.bits.size(); ++i)
    if (g.bits[i]) packed[i / 8] |= std::uint8_t(1u << (i % 8));
  out.insert(out.end(), packed.begin(), packed.end());
  return out;
}

inline VoxelGrid decode_voxels(const std::vector<std::uint8_t>& in, const std::string& origin = "<memory>") {
  if (in.size() < 16 || std::memcmp(in.data(), "SVX1", 4) != 0) throw ParseError(origin + ": not a voxel file");
  const auto r = detail::get_le<std::uint32_t>(in, 4);
  if (r == 0 || r > 4096) throw ParseError(origin + ": implausible voxel extent " + std::to_string(r));
  VoxelGrid g(r);
  g.origin = detail::get_le<float>(in, 8);
  g.scale = detail::get_le<float>(in, 12);
  const std::size_t need = 16 + (g.bits.size() + 7) / 8;
  if (in.size() != need) {
    throw ParseError(origin + ": voxel payload is " + std::to_string(in.size()) + " bytes, expected " +
                     std::to_string(need));
  }
  for (std::size_t i = 0; i < g.bits.size(); ++i) g.bits[i] = (in[16 + i / 8] >> (i % 8)) & 1u;
  return g;
}

inline void save_voxels(const std::string& path, const VoxelGrid& g) { detail::write_file(path, encode_voxels(g)); }
inline VoxelGrid load_voxels(const std::string& path) { return decode_voxels(detail::read_file(path), path); }

inline std::vector<std::uint8_t> encode_field(const OccupancyField& f) {
  std::vector<std::uint8_t> out{'S', 'O', 'C', 'C'};
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(f.res));
  detail::put_le<float>(out, static_cast<float>(f.origin));
  detail::put_le<float>(out, static_cast<float>(f.spacing));
  for (float v : f.values) detail::put_le<float>(out, v);
  return out;
}

inline OccupancyField decode_field(const std::vector<std::uint8_t>& in, const std::string& origin = "<memory>") {
  if (in.size() < 16 || std::memcmp(in.data(), "SOCC", 4) != 0) throw ParseError(origin + ": not an occupancy file");
  OccupancyField f;
  f.res = detail::get_le<std::uint32_t>(in, 4);
  if (f.res < 2 || f.res > 2048) throw ParseError(origin + ": implausible resolution " + std::to_string(f.res));
  f.origin = detail::get_le<float>(in, 8);
  f.spacing = detail::get_le<float>(in, 12);
  const std::size_t n = f.res * f.res * f.res;
  if (in.size() != 16 + 4 * n) throw ParseError(origin + ": occupancy payload size mismatch");
  f.values.resize(n);
  std::memcpy(f.values.data(), in.data() + 16, 4 * n);
  return f;
}

inline void save_field(const std::string& path, const OccupancyField& f) { detail::write_file(path, encode_field(f)); }
inline OccupancyField load_field(const std::string& path) { return decode_field(detail::read_file(path), path); }

}  // namespace sst
