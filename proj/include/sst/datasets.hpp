#pragma once

// Procedural chair / table / plane families with known semantic factors.
//
// Shapes are built in a y-up frame with the floor at y = 0 and the front of
// a chair facing +z, then normalized into the unit cube with their longest
// bounding-box edge scaled to 0.9 (a 0.05 margin on every side).
//
// Shards are containers (kind "dataset-shard") holding, per shape, bit-packed
// voxels, f32 sample points and u8 occupancies; the JSON header carries the
// category, split, resolution and every shape's spec.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "sst/container.hpp"
#include "sst/geometry.hpp"

namespace sst {

inline constexpr double kShapeExtent = 0.9;

struct FactorRange {
  double lo, hi;
  bool discrete;  // integer-valued in [lo, hi]
};

/// Factor names and ranges per category.
inline const std::map<std::string, FactorRange>& factor_ranges(const std::string& category) {
  static const std::map<std::string, std::map<std::string, FactorRange>> table = {
      {"chair",
       {{"seat_height", {0.35, 0.6, false}},
        {"seat_width", {0.4, 0.6, false}},
        {"seat_depth", {0.4, 0.6, false}},
        {"back_height", {0.25, 0.6, false}},
        {"back_tilt", {0.0, 0.3, false}},
        {"leg_style", {0, 2, true}},  // 0 four-post, 1 star, 2 slab
        {"armrests", {0, 1, true}}}},
      {"table",
       {{"top_height", {0.4, 0.75, false}},
        {"top_width", {0.6, 1.0, false}},
        {"top_depth", {0.4, 0.8, false}},
        {"top_thickness", {0.05, 0.1, false}},
        {"leg_style", {0, 2, true}}}},
      {"plane",
       {{"fuselage_length", {0.8, 1.2, false}},
        {"fuselage_radius", {0.06, 0.1, false}},
        {"wing_span", {0.6, 1.0, false}},
        {"wing_sweep", {0.0, 0.5, false}},
        {"wing_position", {0.35, 0.6, false}},
        {"tail_height", {0.12, 0.25, false}}}},
  };
  auto it = table.find(category);
  if (it == table.end()) throw ValueError("unknown category '" + category + "' (expected chair, table or plane)");
  return it->second;
}

inline std::vector<std::string> categories() { return {"chair", "table", "plane"}; }

struct ShapeSpec {
  std::string category;
  std::uint64_t seed = 0;
  std::map<std::string, double> factors;

  double factor(const std::string& name) const {
    auto it = factors.find(name);
    if (it == factors.end()) throw ValueError(category + " spec has no factor '" + name + "'");
    return it->second;
  }

  void validate() const {
    const auto& ranges = factor_ranges(category);
    for (const auto& [name, r] : ranges) {
      auto it = factors.find(name);
      if (it == factors.end()) throw ValueError(category + " spec is missing factor '" + name + "'");
      const double v = it->second;
      if (!(v >= r.lo && v <= r.hi) || (r.discrete && v != std::round(v))) {
        throw ValueError(category + " factor '" + name + "' = " + std::to_string(v) + " outside [" +
                         std::to_string(r.lo) + ", " + std::to_string(r.hi) + "]");
      }
    }
    for (const auto& [name, v] : factors)
      if (!ranges.count(name)) throw ValueError(category + " spec has unknown factor '" + name + "'");
  }

  static ShapeSpec random(const std::string& category, std::uint64_t seed) {
    ShapeSpec s{category, seed, {}};
    Rng rng(seed);
    for (const auto& [name, r] : factor_ranges(category)) {
      s.factors[name] = r.discrete ? r.lo + double(rng.index(std::size_t(r.hi - r.lo) + 1)) : rng.uniform(r.lo, r.hi);
    }
    return s;
  }

  json to_json() const { return {{"category", category}, {"seed", seed}, {"factors", factors}}; }
  static ShapeSpec from_json(const json& j) {
    ShapeSpec s{j.at("category").get<std::string>(), j.at("seed").get<std::uint64_t>(),
                j.at("factors").get<std::map<std::string, double>>()};
    return s;
  }

  bool operator==(const ShapeSpec&) const = default;
};

namespace detail {

inline void add_star_base(Solid& s, double column_top, double foot_length) {
  const double pi = std::acos(-1.0);
  s.parts.push_back(Primitive::cylinder({0, (column_top + 0.06) / 2, 0}, 0.045, (column_top - 0.06) / 2, identity3(),
                                        "column"));
  for (int k = 0; k < 5; ++k) {
    const double th = 2 * pi * k / 5.0;
    s.parts.push_back(Primitive::box({std::cos(th) * foot_length / 2, 0.03, -std::sin(th) * foot_length / 2},
                                     {foot_length / 2, 0.03, 0.04}, rotation(1, th), "foot"));
  }
}

inline Solid build_chair(const ShapeSpec& spec) {
  const double h = spec.factor("seat_height"), w = spec.factor("seat_width"), d = spec.factor("seat_depth");
  const double bh = spec.factor("back_height"), tilt = spec.factor("back_tilt");
  const int legs = int(spec.factor("leg_style"));
  const double t = 0.08, bt = 0.08, leg = 0.04;
  Solid s;
  s.parts.push_back(Primitive::box({0, h - t / 2, 0}, {w / 2, t / 2, d / 2}, identity3(), "seat"));
  const Mat3 R = rotation(0, -tilt);
  const Vec3 pivot{0, h, -d / 2 + bt / 2};
  s.parts.push_back(Primitive::box(pivot + rotate(R, Vec3{0, bh / 2, 0}), {w / 2, bh / 2, bt / 2}, R, "back"));
  const double below = h - t;
  if (legs == 0) {
    for (double sx : {-1.0, 1.0})
      for (double sz : {-1.0, 1.0})
        s.parts.push_back(Primitive::box({sx * (w / 2 - leg), below / 2, sz * (d / 2 - leg)}, {leg, below / 2, leg},
                                         identity3(), "leg"));
  } else if (legs == 1) {
    add_star_base(s, below, std::max(w, d) * 0.9);
  } else {
    for (double sx : {-1.0, 1.0})
      s.parts.push_back(
          Primitive::box({sx * (w / 2 - leg), below / 2, 0}, {leg, below / 2, d / 2 - 0.02}, identity3(), "panel"));
  }
  if (spec.factor("armrests") > 0.5) {
    for (double sx : {-1.0, 1.0})
      s.parts.push_back(Primitive::box({sx * (w / 2 - 0.04), h + 0.1, 0.02}, {0.04, 0.1, d / 2 - 0.06}, identity3(),
                                       "armrest"));
  }
  return s;
}

inline Solid build_table(const ShapeSpec& spec) {
  const double h = spec.factor("top_height"), w = spec.factor("top_width"), d = spec.factor("top_depth");
  const double t = spec.factor("top_thickness");
  const int legs = int(spec.factor("leg_style"));
  const double leg = 0.045;
  Solid s;
  s.parts.push_back(Primitive::box({0, h - t / 2, 0}, {w / 2, t / 2, d / 2}, identity3(), "top"));
  const double below = h - t;
  if (legs == 0) {
    for (double sx : {-1.0, 1.0})
      for (double sz : {-1.0, 1.0})
        s.parts.push_back(Primitive::box({sx * (w / 2 - leg - 0.02), below / 2, sz * (d / 2 - leg - 0.02)},
                                         {leg, below / 2, leg}, identity3(), "leg"));
  } else if (legs == 1) {
    add_star_base(s, below, std::min(w, d) * 0.9);
  } else {
    for (double sx : {-1.0, 1.0})
      s.parts.push_back(
          Primitive::box({sx * (w / 2 - 0.08), below / 2, 0}, {0.04, below / 2, d / 2 - 0.04}, identity3(), "panel"));
  }
  return s;
}

inline Solid build_plane(const ShapeSpec& spec) {
  const double L = spec.factor("fuselage_length"), r = spec.factor("fuselage_radius");
  const double span = spec.factor("wing_span"), sweep = spec.factor("wing_sweep");
  const double at = spec.factor("wing_position"), tail = spec.factor("tail_height");
  const double pi = std::acos(-1.0);
  Solid s;
  // Fuselage along x: a cylinder whose local y axis is turned onto x.
  s.parts.push_back(Primitive::cylinder({0, 0, 0}, r, L / 2, rotation(2, pi / 2), "fuselage"));
  s.parts.push_back(Primitive::sphere({L / 2, 0, 0}, r, "nose"));
  const double chord = 0.18, thick = 0.05;
  const double wing_x = L / 2 - at * L;
  for (double sz : {-1.0, 1.0}) {
    // Each half-wing is a box rotated about y so its tip trails backward.
    const Mat3 Rw = rotation(1, -sz * sweep);
    const Vec3 root{wing_x, 0, 0};
    const Vec3 c = root + rotate(Rw, Vec3{0, 0, sz * span / 4});
    s.parts.push_back(Primitive::box(c, {chord / 2, thick / 2, span / 4}, Rw, "wing"));
  }
  const double tail_x = -L / 2 + 0.08;
  s.parts.push_back(Primitive::box({tail_x, r + tail / 2 - 0.02, 0}, {0.07, tail / 2, 0.025}, identity3(), "fin"));
  s.parts.push_back(Primitive::box({tail_x, 0, 0}, {0.06, 0.025, span / 6}, identity3(), "stabilizer"));
  return s;
}

}  // namespace detail

/// Solid of a ShapeSpec, normalized into the unit cube. Deterministic.
inline Solid make_solid(const ShapeSpec& spec) {
  spec.validate();
  Solid raw;
  if (spec.category == "chair") raw = detail::build_chair(spec);
  else if (spec.category == "table") raw = detail::build_table(spec);
  else raw = detail::build_plane(spec);
  return raw.normalized(kShapeExtent);
}

// -------------------------------------------------------------------- dataset

struct ShapeRecord {
  ShapeSpec spec;
  VoxelGrid voxels;
  OccupancySamples samples;
};

struct DatasetConfig {
  std::string category = "chair";
  std::size_t count = 500;
  std::size_t r = 32;
  std::size_t n_uniform = 4096;
  std::size_t n_surface = 4096;
  double jitter = 0.05;
  std::uint64_t seed = 0;
  double train_fraction = 0.7;
  double test_fraction = 0.2;
};

struct Split {
  std::string name;
  std::vector<ShapeRecord> shapes;
};

struct SplitSizes {
  std::size_t train, test, val;
};

inline SplitSizes split_sizes(std::size_t count, double train_fraction = 0.7, double test_fraction = 0.2) {
  const auto train = static_cast<std::size_t>(std::llround(train_fraction * double(count)));
  const auto test = std::min(count - train, static_cast<std::size_t>(std::llround(test_fraction * double(count))));
  return {train, test, count - train - test};
}

inline ShapeRecord make_record(const ShapeSpec& spec, const DatasetConfig& cfg) {
  ShapeRecord rec{spec, {}, {}};
  const Solid solid = make_solid(spec);
  rec.voxels = voxelize(solid, cfg.r);
  Rng rng(spec.seed ^ 0xD1B54A32D192ED03ULL);
  rec.samples = sample_occupancy(solid, cfg.n_uniform, cfg.n_surface, cfg.jitter, rng);
  return rec;
}

/// Specs for `count` shapes, each with its own seed derived from cfg.seed,
/// assigned to train / test / val by a seeded shuffle.
inline std::vector<Split> build_dataset(const DatasetConfig& cfg) {
  if (cfg.count < 10) throw ValueError("build_dataset: need at least 10 shapes, got " + std::to_string(cfg.count));
  factor_ranges(cfg.category);
  Rng rng(cfg.seed);
  std::vector<ShapeSpec> specs;
  for (std::size_t i = 0; i < cfg.count; ++i) specs.push_back(ShapeSpec::random(cfg.category, rng.engine()()));
  std::vector<std::size_t> order(cfg.count);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = cfg.count - 1; i > 0; --i) std::swap(order[i], order[rng.index(i + 1)]);
  const auto sizes = split_sizes(cfg.count, cfg.train_fraction, cfg.test_fraction);
  std::vector<Split> splits{{"train", {}}, {"test", {}}, {"val", {}}};
  for (std::size_t i = 0; i < cfg.count; ++i) {
    const std::size_t which = i < sizes.train ? 0 : (i < sizes.train + sizes.test ? 1 : 2);
    splits[which].shapes.push_back(make_record(specs[order[i]], cfg));
  }
  return splits;
}

inline Container shard_container(const Split& split, const DatasetConfig& cfg) {
  Container c;
  c.kind = "dataset-shard";
  c.meta = {{"category", cfg.category}, {"split", split.name}, {"r", cfg.r}, {"count", split.shapes.size()},
            {"n_uniform", cfg.n_uniform}, {"specs", json::array()}};
  const std::size_t n = split.shapes.size();
  const std::size_t vbytes = (cfg.r * cfg.r * cfg.r + 7) / 8;
  const std::size_t P = n ? split.shapes.front().samples.points.size() : 0;
  std::vector<std::uint8_t> vox(n * vbytes), occ(n * P);
  std::vector<float> pts(n * P * 3);
  for (std::size_t s = 0; s < n; ++s) {
    const auto& rec = split.shapes[s];
    c.meta["specs"].push_back(rec.spec.to_json());
    const auto packed = encode_voxels(rec.voxels);
    std::copy(packed.begin() + 16, packed.end(), vox.begin() + std::ptrdiff_t(s * vbytes));
    if (rec.samples.points.size() != P) throw ShapeError("shard: shapes have different sample counts");
    for (std::size_t p = 0; p < P; ++p) {
      for (int a = 0; a < 3; ++a) pts[(s * P + p) * 3 + a] = float(rec.samples.points[p][a]);
      occ[s * P + p] = rec.samples.occupancy[p];
    }
  }
  c.put("voxels", {n, vbytes}, vox);
  c.put("points", {n, P, 3}, pts);
  c.put("occupancy", {n, P}, occ);
  return c;
}

/// Loaded shard; points are kept as f32 exactly as stored.
struct Shard {
  std::string category, split;
  std::size_t r = 0;
  std::vector<ShapeSpec> specs;
  std::vector<VoxelGrid> voxels;
  std::size_t points_per_shape = 0;
  std::size_t n_uniform = 0;  // per shape, the first n_uniform points are uniform, the rest near-surface
  std::vector<float> points;           // [N, P, 3]
  std::vector<std::uint8_t> occupancy;  // [N, P]

  std::size_t size() const { return specs.size(); }
};

inline Shard shard_from_container(const Container& c, const std::string& origin = "<memory>") {
  if (c.kind != "dataset-shard") throw ParseError(origin + ": container kind '" + c.kind + "' is not a dataset shard");
  Shard s;
  try {
    s.category = c.meta.at("category");
    s.split = c.meta.at("split");
    s.r = c.meta.at("r");
    s.n_uniform = c.meta.at("n_uniform");
    for (const auto& j : c.meta.at("specs")) s.specs.push_back(ShapeSpec::from_json(j));
  } catch (const json::exception& e) {
    throw ParseError(origin + ": bad shard header: " + e.what());
  }
  const auto vox = c.get<std::uint8_t>("voxels");
  const std::size_t n = s.specs.size(), vbytes = (s.r * s.r * s.r + 7) / 8;
  if (vox.size() != n * vbytes) throw ParseError(origin + ": voxel payload does not match the shape count");
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::uint8_t> file{'S', 'V', 'X', '1'};
    detail::put_le<std::uint32_t>(file, std::uint32_t(s.r));
    detail::put_le<float>(file, 0.0f);
    detail::put_le<float>(file, float(1.0 / double(s.r)));
    file.insert(file.end(), vox.begin() + std::ptrdiff_t(i * vbytes), vox.begin() + std::ptrdiff_t((i + 1) * vbytes));
    s.voxels.push_back(decode_voxels(file, origin));
    s.voxels.back().scale = 1.0 / double(s.r);
  }
  s.points = c.get<float>("points");
  s.occupancy = c.get<std::uint8_t>("occupancy");
  s.points_per_shape = n ? s.occupancy.size() / n : 0;
  if (s.points.size() != s.occupancy.size() * 3) throw ParseError(origin + ": points and occupancy disagree");
  if (n && s.n_uniform > s.points_per_shape) throw ParseError(origin + ": n_uniform exceeds the points per shape");
  return s;
}

inline Shard load_shard(const std::string& path) { return shard_from_container(Container::load(path), path); }

/// Writes <dir>/<split>.sst for every split; returns the paths.
inline std::vector<std::string> write_shards(const std::vector<Split>& splits, const DatasetConfig& cfg,
                                             const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> paths;
  for (const auto& sp : splits) {
    const auto path = (std::filesystem::path(dir) / (sp.name + ".sst")).string();
    shard_container(sp, cfg).save(path);
    paths.push_back(path);
  }
  return paths;
}

}  // namespace sst
