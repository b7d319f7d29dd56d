#pragma once

// Reconstruction scoring of a trained VAE against the analytic shapes a shard
// was generated from: the code of each voxel input is decoded on a finer
// lattice and compared by IoU, Chamfer-L2 and normal consistency.

#include <string>
#include <vector>

#include "sst/datasets.hpp"
#include "sst/geometry/marching_cubes.hpp"
#include "sst/metrics.hpp"
#include "sst/vae.hpp"

namespace sst {

struct ReconstructionConfig {
  std::size_t res = 64;          // decode lattice
  std::size_t surface_points = 2048;
  std::size_t limit = 0;         // 0 = every shape in the shard
  std::uint64_t seed = 0;
};

struct ShapeScore {
  std::uint64_t spec_seed = 0;
  double iou = 0, chamfer = 0, normal_consistency = 0;
};

struct ReconstructionReport {
  std::vector<ShapeScore> shapes;
  double mean_iou = 0, mean_chamfer = 0, mean_normal_consistency = 0;

  json to_json() const {
    json per = json::array();
    for (const auto& s : shapes)
      per.push_back({{"spec_seed", s.spec_seed}, {"iou", s.iou}, {"chamfer_l2", s.chamfer},
                     {"normal_consistency", s.normal_consistency}});
    return {{"count", shapes.size()},       {"mean_iou", mean_iou}, {"mean_chamfer_l2", mean_chamfer},
            {"mean_normal_consistency", mean_normal_consistency}, {"shapes", per}};
  }
};

/// Scores one decoded field against a solid. The reference mesh for normal
/// consistency is extracted from the solid's exact lattice occupancy.
inline ShapeScore score_reconstruction(const OccupancyField& field, const Solid& solid, std::size_t surface_points,
                                       std::uint64_t seed) {
  ShapeScore s;
  const auto truth = lattice_occupancy(solid, field.res);
  s.iou = iou(field.threshold(0.5), truth);
  const Mesh mesh = marching_cubes(field, 0.5);
  Rng rng(seed);
  const auto reference = solid.sample_surface(surface_points, rng);
  const auto decoded = make_shape_sample(mesh, surface_points, rng.engine()());
  s.chamfer = chamfer_l2(decoded.cloud, KdTree(reference));
  if (mesh.triangles.empty()) {
    s.normal_consistency = 0;
  } else {
    OccupancyField exact(field.res);
    for (std::size_t i = 0; i < exact.values.size(); ++i) exact.values[i] = truth.bits[i] ? 1.0f : 0.0f;
    s.normal_consistency = normal_consistency(mesh, marching_cubes(exact, 0.5), surface_points, rng);
  }
  return s;
}

/// Nearest-voxel upsampling onto a res^3 lattice of nodes at i/(res-1): the
/// no-learning baseline for super-resolution.
inline VoxelGrid nearest_upsample(const VoxelGrid& v, std::size_t res) {
  if (res < 2) throw ValueError("nearest_upsample: res must be at least 2");
  VoxelGrid out(res);
  std::vector<std::size_t> src(res);
  for (std::size_t i = 0; i < res; ++i)
    src[i] = std::min(v.r - 1, static_cast<std::size_t>(double(i) / double(res - 1) * double(v.r)));
  for (std::size_t x = 0; x < res; ++x)
    for (std::size_t y = 0; y < res; ++y)
      for (std::size_t z = 0; z < res; ++z) out.bits[out.index(x, y, z)] = v.bits[v.index(src[x], src[y], src[z])];
  return out;
}

template <class T>
ReconstructionReport evaluate_reconstruction(const ShapeVae<T>& model, const Shard& shard,
                                             const ReconstructionConfig& cfg) {
  if (shard.size() == 0) throw ValueError("evaluate_reconstruction: shard is empty");
  const std::size_t n = cfg.limit ? std::min(cfg.limit, shard.size()) : shard.size();
  ReconstructionReport report;
  report.shapes.resize(n);
  parallel_for(n, [&](std::size_t i) {
    const auto field = reconstruct(model, shard.voxels[i], cfg.res);
    report.shapes[i] = score_reconstruction(field, make_solid(shard.specs[i]), cfg.surface_points, cfg.seed + i);
    report.shapes[i].spec_seed = shard.specs[i].seed;
  });
  for (const auto& s : report.shapes) {
    report.mean_iou += s.iou;
    report.mean_chamfer += s.chamfer;
    report.mean_normal_consistency += s.normal_consistency;
  }
  report.mean_iou /= double(n);
  report.mean_chamfer /= double(n);
  report.mean_normal_consistency /= double(n);
  return report;
}

}  // namespace sst
