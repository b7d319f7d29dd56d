#pragma once

// Glue between the trained models: latent draws from a seed, code grid to
// occupancy field to mesh, and the measurements used to relate traversal
// directions to chair factors.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "sst/gan.hpp"
#include "sst/geometry/marching_cubes.hpp"

namespace sst {

/// Generator inputs for one shape.
struct LatentSample {
  std::vector<double> z;
  Coordinates coords;

  bool operator==(const LatentSample&) const = default;
};

/// z then C, all standard normal, from one seeded stream.
template <class T>
LatentSample latent_sample(const Generator<T>& gen, std::uint64_t seed) {
  Rng rng(seed);
  LatentSample s;
  s.z.resize(gen.config().z_dim);
  for (auto& v : s.z) v = rng.normal();
  s.coords = Coordinates::random(gen.subspaces(), gen.config().n, rng);
  return s;
}

template <class T>
Tensor<T> z_tensor(const LatentSample& s) {
  return Tensor<T>(Shape{s.z.size()}, std::vector<T>(s.z.begin(), s.z.end()));
}

/// Throws ConfigError when the GAN's code grids do not fit the VAE decoder
/// or the GAN records a different VAE.
template <class T>
void check_compatible(const ShapeVae<T>& vae, const LatentGan<T>& gan, const std::string& vae_digest) {
  const auto& gc = gan.generator.config();
  if (gc.c != vae.config().c || gc.g != vae.config().g) {
    throw ConfigError("gan produces " + std::to_string(gc.c) + " x " + std::to_string(gc.g) + "^3 grids, vae expects " +
                      std::to_string(vae.config().c) + " x " + std::to_string(vae.config().g) + "^3");
  }
  if (!gan.vae_hash.empty() && gan.vae_hash != vae_digest) {
    throw ConfigError("gan was trained against vae " + gan.vae_hash + ", got " + vae_digest);
  }
}

/// Code grid of one latent sample, [c, g, g, g].
template <class T>
Tensor<T> generate_code(const Generator<T>& gen, const LatentSample& s) {
  NoGrad guard;
  return gen.generate(z_tensor<T>(s), s.coords);
}

inline Mesh field_mesh(const OccupancyField& field) { return marching_cubes(field, 0.5); }

/// Occupancy field of a generated shape on a res^3 lattice.
template <class T>
OccupancyField generate_field(const ShapeVae<T>& vae, const Generator<T>& gen, const LatentSample& s,
                              std::size_t res) {
  return vae.decode_grid(generate_code(gen, s), res);
}

// ---------------------------------------------------------------- factors

struct ChairFactors {
  double seat_height = std::numeric_limits<double>::quiet_NaN();
  double back_height = std::numeric_limits<double>::quiet_NaN();
};

/// Seat height is the y of the horizontal lattice layer with the most
/// occupied nodes; back height is the top occupied y minus the seat height.
/// Both are NaN for an empty field.
inline ChairFactors measure_chair_factors(const OccupancyField& field, float iso = 0.5f) {
  const std::size_t n = field.res;
  std::vector<std::size_t> layer(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k)
        if (field.at(i, j, k) > iso) ++layer[j];
  ChairFactors f;
  std::size_t best = 0, top = 0;
  bool any = false;
  for (std::size_t j = 0; j < n; ++j) {
    if (layer[j] == 0) continue;
    if (!any || layer[j] > layer[best]) best = j;
    top = j;
    any = true;
  }
  if (!any) return f;
  const double step = 1.0 / double(n - 1);
  f.seat_height = double(best) * step;
  f.back_height = double(top - best) * step;
  return f;
}

/// Ranks starting at 1, ties sharing their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Spearman rank correlation: Pearson correlation of average ranks. Returns
/// 0 when either side is constant.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeError("spearman: sequences differ in length");
  if (x.size() < 2) throw ValueError("spearman: need at least two pairs");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw ValueError("spearman: non-finite value");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / double(rx.size());
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / double(ry.size());
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace sst
