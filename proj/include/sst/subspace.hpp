#pragma once

// Local linear subspace models and their differentiable embedding into
// sub-regions of a feature map.
//
// A subspace S = (U, L, mu) turns coordinates C (length n) into a small
// feature block phi = sum_i u_i * l_i * c_i + mu. The block is placed into a
// larger feature map by contracting each spatial axis with a 0/1 transform
// matrix [0 | I | 0]; a "dual" region uses a transform with two identity
// blocks along one axis so the same phi lands in two mirrored places.

#include <array>
#include <cmath>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sst/container.hpp"
#include "sst/nn.hpp"

namespace sst {

/// Builds the [small x large] transform with an identity block at column
/// `offset` (and a second block at `dual_offset` when given).
template <class T>
Tensor<T> build_transform(std::size_t offset, std::size_t small, std::size_t large,
                          std::optional<std::size_t> dual_offset = std::nullopt) {
  if (small == 0 || offset + small > large) {
    throw ShapeError("build_transform: block of " + std::to_string(small) + " at " + std::to_string(offset) +
                     " does not fit in " + std::to_string(large));
  }
  Tensor<T> m(Shape{small, large});
  for (std::size_t i = 0; i < small; ++i) m[i * large + offset + i] = T(1);
  if (dual_offset) {
    const std::size_t d = *dual_offset;
    if (d + small > large) {
      throw ShapeError("build_transform: dual block at " + std::to_string(d) + " does not fit in " +
                       std::to_string(large));
    }
    if (d < offset + small && offset < d + small) {
      throw ValueError("build_transform: dual blocks at " + std::to_string(offset) + " and " + std::to_string(d) +
                       " overlap");
    }
    for (std::size_t i = 0; i < small; ++i) m[i * large + d + i] = T(1);
  }
  return m;
}

/// Where a subspace block sits inside the feature map.
struct EmbedRegion {
  Extent3 offset{};
  Extent3 small{};
  Extent3 large{};
  /// Second placement. Must differ from `offset` along exactly one axis so
  /// that the embedding stays separable per axis.
  std::optional<Extent3> dual_offset;

  bool dual() const { return dual_offset.has_value(); }

  std::optional<std::size_t> dual_axis() const {
    if (!dual_offset) return std::nullopt;
    for (std::size_t a = 0; a < 3; ++a)
      if ((*dual_offset)[a] != offset[a]) return a;
    return std::nullopt;
  }

  void validate() const {
    for (std::size_t a = 0; a < 3; ++a) {
      if (small[a] == 0 || offset[a] + small[a] > large[a]) {
        throw ShapeError("embed region: axis " + std::to_string(a) + " block [" + std::to_string(offset[a]) + ", " +
                         std::to_string(offset[a] + small[a]) + ") exceeds extent " + std::to_string(large[a]));
      }
    }
    if (dual_offset) {
      std::size_t differing = 0;
      for (std::size_t a = 0; a < 3; ++a) {
        if ((*dual_offset)[a] == offset[a]) continue;
        ++differing;
        const std::size_t d = (*dual_offset)[a];
        if (d + small[a] > large[a]) throw ShapeError("embed region: dual placement exceeds the feature map");
        if (d < offset[a] + small[a] && offset[a] < d + small[a]) {
          throw ValueError("embed region: dual placements overlap");
        }
      }
      if (differing != 1) throw ValueError("embed region: dual placement must differ along exactly one axis");
    }
  }

  /// All placements (one or two) as offset triples.
  std::vector<Extent3> placements() const {
    std::vector<Extent3> out{offset};
    if (dual_offset) out.push_back(*dual_offset);
    return out;
  }

  template <class T>
  std::array<Tensor<T>, 3> transforms() const {
    validate();
    std::array<Tensor<T>, 3> out;
    const auto axis = dual_axis();
    for (std::size_t a = 0; a < 3; ++a) {
      std::optional<std::size_t> second;
      if (axis && *axis == a) second = (*dual_offset)[a];
      out[a] = build_transform<T>(offset[a], small[a], large[a], second);
    }
    return out;
  }
};

/// Pads phi out to the feature-map extent: f(phi) = sum_dhw phi_cdhw X_dD Y_hH Z_wW.
/// phi is [c, d, h, w] or [B, c, d, h, w].
template <class T>
Tensor<T> embed_padding(const Tensor<T>& phi, const EmbedRegion& region) {
  if (phi.rank() != 4 && phi.rank() != 5) {
    throw ShapeError("embed: phi must be [c,d,h,w] or [B,c,d,h,w], got " + shape_str(phi.shape()));
  }
  const std::size_t first = phi.rank() - 3;
  for (std::size_t a = 0; a < 3; ++a) {
    if (phi.dim(first + a) != region.small[a]) {
      throw ShapeError("embed: phi " + shape_str(phi.shape()) + " does not match region extents");
    }
  }
  auto mats = region.transforms<T>();
  auto out = phi;
  for (std::size_t a = 0; a < 3; ++a) out = mode_product(out, mats[a], first + a);
  return out;
}

/// m_hat = m + f(phi, X, Y, Z).
template <class T>
Tensor<T> embed(const Tensor<T>& m, const Tensor<T>& phi, const EmbedRegion& region) {
  if (m.rank() != phi.rank() || m.dim(m.rank() - 4) != phi.dim(phi.rank() - 4)) {
    throw ShapeError("embed: feature map " + shape_str(m.shape()) + " and phi " + shape_str(phi.shape()) +
                     " disagree on channels or batch");
  }
  const std::size_t first = m.rank() - 3;
  for (std::size_t a = 0; a < 3; ++a) {
    if (m.dim(first + a) != region.large[a]) {
      throw ShapeError("embed: region sized for a different feature map than " + shape_str(m.shape()));
    }
  }
  return add(m, embed_padding(phi, region));
}

/// Learnable (U, L, mu). U holds one flattened basis per row.
template <class T>
struct SubspaceModel {
  Tensor<T> U;   // [n, K]
  Tensor<T> L;   // [n], unconstrained
  Tensor<T> mu;  // [K]
  std::array<std::size_t, 4> basis_shape{};  // c, d, h, w

  std::size_t n() const { return U.dim(0); }
  std::size_t basis_size() const { return U.dim(1); }

  static SubspaceModel random(std::size_t n, std::array<std::size_t, 4> shape, Rng& rng) {
    if (n == 0) throw ValueError("subspace: need at least one basis");
    const std::size_t K = shape[0] * shape[1] * shape[2] * shape[3];
    SubspaceModel s;
    s.basis_shape = shape;
    s.U = Tensor<T>::randn({n, K}, rng, 1.0 / std::sqrt(static_cast<double>(K)));
    // Rows of U start near unit norm, so each element of U^T (L C) is about
    // L c / sqrt(K). Starting L at sqrt(K) gives a unit coordinate an O(1)
    // effect per element, on the scale of the features it is added to.
    s.L = Tensor<T>::full({n}, std::sqrt(static_cast<T>(K)));
    s.mu = Tensor<T>::zeros({K});
    s.U.set_requires_grad();
    s.L.set_requires_grad();
    s.mu.set_requires_grad();
    return s;
  }

  NamedParams<T> params() const { return {{"U", U}, {"L", L}, {"mu", mu}}; }
};

/// phi = U^T (L * C) + mu. C is [n] (returns [c,d,h,w]) or [B, n] (returns [B,c,d,h,w]).
template <class T>
Tensor<T> sample_point(const SubspaceModel<T>& s, const Tensor<T>& coords) {
  const bool batched = coords.rank() == 2;
  if (!(coords.rank() == 1 || batched) || coords.dim(coords.rank() - 1) != s.n()) {
    throw ShapeError("sample_point: coordinates " + shape_str(coords.shape()) + " do not match n=" +
                     std::to_string(s.n()));
  }
  const std::size_t B = batched ? coords.dim(0) : 1;
  auto c2 = batched ? coords : reshape(coords, {1, s.n()});
  auto scaled = mul(c2, tile0(s.L, B));
  auto flat = add(matmul(scaled, s.U), tile0(s.mu, B));
  const auto& bs = s.basis_shape;
  if (batched) return reshape(flat, {B, bs[0], bs[1], bs[2], bs[3]});
  return reshape(flat, {bs[0], bs[1], bs[2], bs[3]});
}

/// ||U U^T - I||_F^2 over the n x n Gram matrix of the flattened bases.
template <class T>
Tensor<T> subspace_regularizer(const SubspaceModel<T>& s) {
  const std::size_t n = s.n();
  Tensor<T> eye(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = T(1);
  return frobenius_sq(sub(matmul(s.U, transpose(s.U)), eye));
}

template <class T>
double orthonormality_error(const SubspaceModel<T>& s) {
  NoGrad off;
  return std::sqrt(static_cast<double>(subspace_regularizer(s).item()));
}

template <class T>
struct LayoutEntry {
  SubspaceModel<T> model;
  EmbedRegion region;
};

template <class T>
struct SubspaceLayout {
  std::vector<LayoutEntry<T>> entries;
  std::size_t feature_extent = 0;
  std::size_t channels = 0;

  std::size_t dims_per_subspace() const { return entries.empty() ? 0 : entries.front().model.n(); }
  std::size_t total_dims() const {
    std::size_t t = 0;
    for (const auto& e : entries) t += e.model.n();
    return t;
  }

  NamedParams<T> params() const {
    NamedParams<T> out;
    for (std::size_t i = 0; i < entries.size(); ++i)
      append_params(out, "subspace" + std::to_string(i) + ".", entries[i].model.params());
    return out;
  }

  /// Region metadata for checkpoint headers.
  json describe() const;
};

/// Centre cube of edge r/2 at offset r/4, plus three dual-region subspaces of
/// edge r/4 placed on either side of it along x, y and z respectively.
template <class T>
SubspaceLayout<T> default_layout(std::size_t r_f, std::size_t channels, std::size_t n, Rng& rng) {
  if (r_f == 0 || r_f % 4 != 0) {
    throw ValueError("default_layout: feature extent " + std::to_string(r_f) + " is not divisible by 4");
  }
  if (n <= 3) {
    std::cerr << "warning: subspaces with n <= 3 dimensions tend not to capture semantic attributes\n";
  }
  SubspaceLayout<T> layout;
  layout.feature_extent = r_f;
  layout.channels = channels;
  const Extent3 large{r_f, r_f, r_f};

  const std::size_t half = r_f / 2, quarter = r_f / 4;
  EmbedRegion centre{{quarter, quarter, quarter}, {half, half, half}, large, std::nullopt};
  layout.entries.push_back({SubspaceModel<T>::random(n, {channels, half, half, half}, rng), centre});

  const std::size_t side = quarter;
  const std::size_t across = (r_f - side) / 2;
  for (std::size_t axis = 0; axis < 3; ++axis) {
    Extent3 first{across, across, across};
    Extent3 second = first;
    first[axis] = 0;
    second[axis] = r_f - side;
    EmbedRegion region{first, {side, side, side}, large, second};
    region.validate();
    layout.entries.push_back({SubspaceModel<T>::random(n, {channels, side, side, side}, rng), region});
  }
  return layout;
}

inline json region_to_json(const EmbedRegion& r) {
  json j{{"offset", r.offset}, {"small", r.small}, {"large", r.large}, {"dual", r.dual()}};
  if (r.dual_offset) j["dual_offset"] = *r.dual_offset;
  return j;
}

inline EmbedRegion region_from_json(const json& j) {
  EmbedRegion r;
  r.offset = j.at("offset").get<Extent3>();
  r.small = j.at("small").get<Extent3>();
  r.large = j.at("large").get<Extent3>();
  if (j.value("dual", false)) r.dual_offset = j.at("dual_offset").get<Extent3>();
  r.validate();
  return r;
}

template <class T>
json SubspaceLayout<T>::describe() const {
  json j{{"feature_extent", feature_extent}, {"channels", channels}, {"subspaces", json::array()}};
  for (const auto& e : entries) {
    json s = region_to_json(e.region);
    s["n"] = e.model.n();
    j["subspaces"].push_back(s);
  }
  return j;
}

// ------------------------------------------------------------------ traversal

/// Coordinates of every subspace, concatenated subspace-major (length S * n).
struct Coordinates {
  std::size_t per_subspace = 0;
  std::vector<double> values;

  std::size_t subspaces() const { return per_subspace ? values.size() / per_subspace : 0; }

  template <class T>
  Tensor<T> block(std::size_t s) const {
    std::vector<T> v(values.begin() + static_cast<std::ptrdiff_t>(s * per_subspace),
                     values.begin() + static_cast<std::ptrdiff_t>((s + 1) * per_subspace));
    return Tensor<T>({per_subspace}, std::move(v));
  }

  static Coordinates random(std::size_t subspaces, std::size_t n, Rng& rng) {
    Coordinates c{n, std::vector<double>(subspaces * n)};
    for (auto& v : c.values) v = rng.normal();
    return c;
  }

  bool operator==(const Coordinates&) const = default;
};

/// Sets global dimension `dim` (subspace dim / n, local dim % n) to `value`.
inline Coordinates traverse_coordinates(const Coordinates& base, std::size_t dim, double value) {
  if (dim >= base.values.size()) {
    throw ValueError("traverse: dimension " + std::to_string(dim) + " out of range [0, " +
                     std::to_string(base.values.size()) + ")");
  }
  if (!std::isfinite(value)) throw ValueError("traverse: coefficient must be finite");
  Coordinates out = base;
  out.values[dim] = value;
  return out;
}

/// (subspace index, local dimension) for a global traversal dimension.
inline std::pair<std::size_t, std::size_t> split_dimension(std::size_t dim, std::size_t n) {
  return {dim / n, dim % n};
}

// ------------------------------------------------------------------------ PCA

struct PcaResult {
  std::vector<std::vector<double>> directions;  // unit norm, one per component
  std::vector<double> variances;                // non-increasing
  std::vector<double> mean;
};

/// Top-k principal directions of flattened samples, via the SVD of the
/// centred data matrix.
inline PcaResult pca_directions(const std::vector<std::vector<double>>& samples, std::size_t k) {
  if (samples.size() < k + 1) {
    throw ValueError("pca: need at least k+1 = " + std::to_string(k + 1) + " samples, got " +
                     std::to_string(samples.size()));
  }
  const std::size_t N = samples.size(), D = samples.front().size();
  if (k > D) throw ValueError("pca: k exceeds the sample dimension");
  Eigen::MatrixXd X(N, D);
  for (std::size_t i = 0; i < N; ++i) {
    if (samples[i].size() != D) throw ShapeError("pca: samples have inconsistent sizes");
    for (std::size_t j = 0; j < D; ++j) X(i, j) = samples[i][j];
  }
  Eigen::RowVectorXd mean = X.colwise().mean();
  X.rowwise() -= mean;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinV);
  PcaResult r;
  r.mean.assign(mean.data(), mean.data() + D);
  const auto& S = svd.singularValues();
  const auto& V = svd.matrixV();
  for (std::size_t c = 0; c < k; ++c) {
    Eigen::VectorXd v = V.col(static_cast<Eigen::Index>(c));
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;  // deterministic sign
    r.directions.emplace_back(v.data(), v.data() + D);
    const double s = c < static_cast<std::size_t>(S.size()) ? S(static_cast<Eigen::Index>(c)) : 0.0;
    r.variances.push_back(s * s / static_cast<double>(N - 1));
  }
  return r;
}

template <class T>
std::vector<double> flatten_values(const Tensor<T>& t) {
  return std::vector<double>(t.data().begin(), t.data().end());
}

}  // namespace sst
