#pragma once

// Reconstruction metrics (IoU, Chamfer-L2, normal consistency) and set-level
// generation metrics (COV, MMD, energy-distance ECD variant) over a pairwise
// shape distance matrix.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "sst/container.hpp"
#include "sst/geometry/mesh.hpp"
#include "sst/geometry/voxel.hpp"
#include "sst/parallel.hpp"

namespace sst {

/// Exact nearest-neighbour queries over a fixed point set. Distances are the
/// same `dist_sq` expression a brute-force scan uses, so results match it
/// bit for bit.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (!points_.empty()) build(0, points_.size(), 0);
  }

  std::size_t size() const { return points_.size(); }
  const std::vector<Vec3>& points() const { return points_; }

  /// Squared distance to the nearest point and its index (lowest index on ties).
  std::pair<double, std::size_t> nearest(const Vec3& q) const {
    if (points_.empty()) throw ValueError("kd-tree: nearest query on an empty set");
    double best = std::numeric_limits<double>::infinity();
    std::size_t idx = 0;
    search(0, points_.size(), 0, q, best, idx);
    return {best, idx};
  }

 private:
  static constexpr std::size_t kLeaf = 8;
  std::vector<Vec3> points_;
  std::vector<std::size_t> order_;

  void build(std::size_t lo, std::size_t hi, int axis) {
    if (hi - lo <= kLeaf) return;
    const std::size_t mid = lo + (hi - lo) / 2;
    std::nth_element(order_.begin() + long(lo), order_.begin() + long(mid), order_.begin() + long(hi),
                     [&](std::size_t a, std::size_t b) { return points_[a][axis] < points_[b][axis]; });
    build(lo, mid, (axis + 1) % 3);
    build(mid + 1, hi, (axis + 1) % 3);
  }

  void consider(std::size_t i, const Vec3& q, double& best, std::size_t& idx) const {
    const double d = dist_sq(points_[i], q);
    if (d < best || (d == best && i < idx)) {
      best = d;
      idx = i;
    }
  }

  void search(std::size_t lo, std::size_t hi, int axis, const Vec3& q, double& best, std::size_t& idx) const {
    if (hi - lo <= kLeaf) {
      for (std::size_t k = lo; k < hi; ++k) consider(order_[k], q, best, idx);
      return;
    }
    const std::size_t mid = lo + (hi - lo) / 2;
    const std::size_t pivot = order_[mid];
    consider(pivot, q, best, idx);
    const double diff = q[axis] - points_[pivot][axis];
    const int next = (axis + 1) % 3;
    if (diff < 0) {
      search(lo, mid, next, q, best, idx);
      if (diff * diff <= best) search(mid + 1, hi, next, q, best, idx);
    } else {
      search(mid + 1, hi, next, q, best, idx);
      if (diff * diff <= best) search(lo, mid, next, q, best, idx);
    }
  }
};

namespace detail {

/// Mean of a multiset of values, summed in sorted order so the result does
/// not depend on the order the values were produced in.
inline double sorted_mean(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double total = 0;
  for (double x : v) total += x;
  return total / double(v.size());
}

inline double mean_nearest(const std::vector<Vec3>& from, const KdTree& to) {
  std::vector<double> d;
  d.reserve(from.size());
  for (const auto& p : from) d.push_back(to.nearest(p).first);
  return sorted_mean(std::move(d));
}

}  // namespace detail

/// Sums over sets are taken in sorted order, which makes every metric exactly
/// invariant to the order of its inputs.

/// Symmetric Chamfer-L2 with prebuilt trees: the average of the two
/// directional mean squared nearest-neighbour distances.
inline double chamfer_l2(const KdTree& p, const KdTree& q) {
  if (p.size() == 0 || q.size() == 0) throw ValueError("chamfer_l2: point sets must be nonempty");
  return 0.5 * (detail::mean_nearest(p.points(), q) + detail::mean_nearest(q.points(), p));
}

inline double chamfer_l2(const std::vector<Vec3>& p, const std::vector<Vec3>& q) {
  if (p.empty() || q.empty()) throw ValueError("chamfer_l2: point sets must be nonempty");
  return chamfer_l2(KdTree(p), KdTree(q));
}

/// Rows index the generated set, columns the reference set.
struct DistanceMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;

  DistanceMatrix() = default;
  DistanceMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

  double& at(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }

  void validate(const char* op) const {
    if (rows == 0 || cols == 0) throw ValueError(std::string(op) + ": distance matrix is empty");
    if (values.size() != rows * cols) throw ShapeError(std::string(op) + ": distance matrix size mismatch");
    for (double v : values) {
      if (!(v >= 0) || !std::isfinite(v)) throw ValueError(std::string(op) + ": distances must be finite and >= 0");
    }
  }
};

/// Fraction of reference shapes that are the nearest reference of at least
/// one generated shape (ties go to the lowest column).
inline double cov(const DistanceMatrix& d) {
  d.validate("cov");
  std::vector<bool> hit(d.cols, false);
  for (std::size_t i = 0; i < d.rows; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < d.cols; ++j)
      if (d.at(i, j) < d.at(i, best)) best = j;
    hit[best] = true;
  }
  return double(std::count(hit.begin(), hit.end(), true)) / double(d.cols);
}

/// Mean over reference shapes of the distance to the closest generated shape.
inline double mmd(const DistanceMatrix& d) {
  d.validate("mmd");
  std::vector<double> best(d.cols);
  for (std::size_t j = 0; j < d.cols; ++j) {
    best[j] = d.at(0, j);
    for (std::size_t i = 1; i < d.rows; ++i) best[j] = std::min(best[j], d.at(i, j));
  }
  return detail::sorted_mean(std::move(best));
}

/// Energy distance 2 E d(G,R) - E d(G,G') - E d(R,R'), every expectation
/// taken over all ordered pairs including self pairs, so identical sets
/// score exactly 0. `cross` is |G|x|R|, `gen` is |G|x|G|, `ref` is |R|x|R|.
inline double ecd_variant(const DistanceMatrix& cross, const DistanceMatrix& gen, const DistanceMatrix& ref) {
  cross.validate("ecd_variant");
  gen.validate("ecd_variant");
  ref.validate("ecd_variant");
  if (cross.rows < 2 || cross.cols < 2) throw ValueError("ecd_variant: both sets need at least two shapes");
  if (gen.rows != cross.rows || gen.cols != cross.rows || ref.rows != cross.cols || ref.cols != cross.cols) {
    throw ShapeError("ecd_variant: within-set matrices do not match the cross matrix");
  }
  return 2 * detail::sorted_mean(cross.values) - detail::sorted_mean(gen.values) - detail::sorted_mean(ref.values);
}

/// |a and b| / |a or b|; two empty grids score 1.
inline double iou(const VoxelGrid& a, const VoxelGrid& b) {
  if (a.r != b.r || a.bits.size() != b.bits.size()) {
    throw ShapeError("iou: extent mismatch " + std::to_string(a.r) + " vs " + std::to_string(b.r));
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    const bool x = a.bits[i] != 0, y = b.bits[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

/// Closest point on triangle abc to p.
inline Vec3 closest_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = dot(ab, ap), d2 = dot(ac, ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Vec3 bp = p - b;
  const double d3 = dot(ab, bp), d4 = dot(ac, bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + ab * (d1 / (d1 - d3));
  const Vec3 cp = p - c;
  const double d5 = dot(ab, cp), d6 = dot(ac, cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + ac * (d2 / (d2 - d6));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

/// Bounding-volume hierarchy answering nearest-triangle queries. Degenerate
/// (zero-area) faces are left out.
class TriangleBvh {
 public:
  explicit TriangleBvh(const Mesh& mesh) : mesh_(&mesh) {
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
      if (mesh.face_area(t) > 1e-300) faces_.push_back(t);
    if (faces_.empty()) throw GeometryError("bvh: mesh has no non-degenerate faces");
    centroids_.resize(mesh.triangles.size());
    for (auto t : faces_) {
      const auto& f = mesh.triangles[t];
      centroids_[t] = (mesh.vertices[f[0]] + mesh.vertices[f[1]] + mesh.vertices[f[2]]) * (1.0 / 3.0);
    }
    nodes_.resize(1);
    build(0, 0, faces_.size());
  }

  /// Index of the face closest to p.
  std::size_t nearest_face(const Vec3& p) const {
    double best = std::numeric_limits<double>::infinity();
    std::size_t face = faces_[0];
    std::vector<std::size_t> stack{0};
    while (!stack.empty()) {
      const Node& n = nodes_[stack.back()];
      stack.pop_back();
      if (box_dist_sq(n.box, p) > best) continue;
      if (n.left == 0) {
        for (std::size_t k = n.begin; k < n.end; ++k) {
          const auto& f = mesh_->triangles[faces_[k]];
          const double d = dist_sq(p, closest_on_triangle(p, mesh_->vertices[f[0]], mesh_->vertices[f[1]],
                                                          mesh_->vertices[f[2]]));
          if (d < best) {
            best = d;
            face = faces_[k];
          }
        }
      } else {
        stack.push_back(n.left);
        stack.push_back(n.left + 1);
      }
    }
    return face;
  }

 private:
  struct Node {
    Bounds box;
    std::size_t begin = 0, end = 0, left = 0;  // left == 0 marks a leaf
  };
  const Mesh* mesh_;
  std::vector<std::size_t> faces_;
  std::vector<Vec3> centroids_;
  std::vector<Node> nodes_;

  static double box_dist_sq(const Bounds& b, const Vec3& p) {
    double d = 0;
    for (int a = 0; a < 3; ++a) {
      const double e = std::max({b.lo[a] - p[a], 0.0, p[a] - b.hi[a]});
      d += e * e;
    }
    return d;
  }

  void build(std::size_t id, std::size_t begin, std::size_t end) {
    Bounds box, cbox;
    for (std::size_t k = begin; k < end; ++k) {
      for (auto v : mesh_->triangles[faces_[k]]) box.add(mesh_->vertices[v]);
      cbox.add(centroids_[faces_[k]]);
    }
    nodes_[id].box = box;
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    if (end - begin <= 4) return;
    int axis = 0;
    for (int a = 1; a < 3; ++a)
      if (cbox.hi[a] - cbox.lo[a] > cbox.hi[axis] - cbox.lo[axis]) axis = a;
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(faces_.begin() + long(begin), faces_.begin() + long(mid), faces_.begin() + long(end),
                     [&](std::size_t x, std::size_t y) { return centroids_[x][axis] < centroids_[y][axis]; });
    // Children are allocated as an adjacent pair.
    const std::size_t left = nodes_.size();
    nodes_.resize(left + 2);
    nodes_[id].left = left;
    build(left, begin, mid);
    build(left + 1, mid, end);
  }
};

/// Mean |cos| between the face normal at area-weighted samples of one mesh
/// and the normal of the nearest face of the other, averaged over both
/// directions.
inline double normal_consistency(const Mesh& a, const Mesh& b, std::size_t samples, Rng& rng) {
  if (a.triangles.empty() || b.triangles.empty()) throw ValueError("normal_consistency: meshes must be nonempty");
  if (samples == 0) throw ValueError("normal_consistency: sample count must be positive");
  auto one_way = [&](const Mesh& from, const Mesh& to) {
    const TriangleBvh bvh(to);
    const auto s = sample_surface(from, samples, rng);
    double total = 0;
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      const auto nf = from.face_normal(s.faces[i]);
      const auto nt = to.face_normal(bvh.nearest_face(s.points[i]));
      total += std::min(1.0, std::abs(dot(nf, nt)));
    }
    return total / double(s.points.size());
  };
  const double ab = one_way(a, b);
  const double ba = one_way(b, a);
  return 0.5 * (ab + ba);
}

/// A mesh together with its cached surface point cloud.
struct ShapeSample {
  Mesh mesh;
  KdTree cloud;
};

/// Samples `count` area-weighted points. An empty mesh (a decoder that
/// produced no surface) is represented by the single point at the cube centre
/// so that distances to it stay finite.
inline ShapeSample make_shape_sample(Mesh mesh, std::size_t count, std::uint64_t seed) {
  if (count == 0) throw ValueError("shape sample: point count must be positive");
  ShapeSample s;
  double area = 0;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) area += mesh.face_area(t);
  if (mesh.triangles.empty() || !(area > 0)) {
    s.cloud = KdTree({Vec3{0.5, 0.5, 0.5}});
  } else {
    Rng rng(seed);
    s.cloud = KdTree(sample_surface(mesh, count, rng).points);
  }
  s.mesh = std::move(mesh);
  return s;
}

/// Pairwise Chamfer-L2 between two sample sets, filled in parallel.
inline DistanceMatrix chamfer_matrix(const std::vector<ShapeSample>& rows, const std::vector<ShapeSample>& cols) {
  DistanceMatrix d(rows.size(), cols.size());
  parallel_for(rows.size() * cols.size(), [&](std::size_t k) {
    d.values[k] = chamfer_l2(rows[k / cols.size()].cloud, cols[k % cols.size()].cloud);
  });
  return d;
}

/// Symmetric within-set matrix; each unordered pair is computed once.
inline DistanceMatrix chamfer_self_matrix(const std::vector<ShapeSample>& set) {
  const std::size_t n = set.size();
  DistanceMatrix d(n, n);
  parallel_for(n * n, [&](std::size_t k) {
    const std::size_t i = k / n, j = k % n;
    if (i < j) d.values[k] = chamfer_l2(set[i].cloud, set[j].cloud);
  });
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) d.at(i, j) = d.at(j, i);
  return d;
}

struct GenerationReport {
  std::string distance = "chamfer_l2";
  std::size_t generated = 0, reference = 0;
  double cov = 0, mmd = 0, ecd_variant = 0;

  std::string ratio() const {
    if (reference > 0 && generated % reference == 0) return std::to_string(generated / reference) + ":1";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f:1", reference ? double(generated) / double(reference) : 0.0);
    return buf;
  }

  json to_json() const {
    return {{"distance", distance}, {"generated", generated}, {"reference", reference}, {"ratio", ratio()},
            {"cov", cov},           {"mmd", mmd},             {"ecd_variant", ecd_variant}};
  }

  /// Aligned console table: one header row, one value row.
  std::string table() const {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "distance: %s (COV/MMD/ECD not comparable to light-field-distance results)\n"
                  "%-10s %-10s %-8s %-10s %-14s %-14s\n%-10zu %-10zu %-8s %-10.2f %-14.6e %-14.6e\n",
                  distance.c_str(), "generated", "reference", "ratio", "COV(%)", "MMD", "ECD-variant", generated,
                  reference, ratio().c_str(), 100.0 * cov, mmd, ecd_variant);
    return buf;
  }
};

/// COV, MMD and the ECD variant of a generated set against a reference set
/// under Chamfer-L2.
inline GenerationReport evaluate_generation(const std::vector<ShapeSample>& gen, const std::vector<ShapeSample>& ref) {
  if (gen.empty() || ref.empty()) throw ValueError("evaluate_generation: sets must be nonempty");
  GenerationReport r;
  r.generated = gen.size();
  r.reference = ref.size();
  const auto cross = chamfer_matrix(gen, ref);
  r.cov = cov(cross);
  r.mmd = mmd(cross);
  if (gen.size() >= 2 && ref.size() >= 2) {
    r.ecd_variant = ecd_variant(cross, chamfer_self_matrix(gen), chamfer_self_matrix(ref));
  } else {
    r.ecd_variant = std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

}  // namespace sst
