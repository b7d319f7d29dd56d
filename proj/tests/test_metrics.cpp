#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "sst/geometry/solid.hpp"
#include "sst/metrics.hpp"

using namespace sst;

namespace {

std::vector<Vec3> random_points(std::size_t n, Rng& rng) {
  std::vector<Vec3> p(n);
  for (auto& v : p) v = {rng.uniform(), rng.uniform(), rng.uniform()};
  return p;
}

double brute_nearest(const Vec3& q, const std::vector<Vec3>& set) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : set) best = std::min(best, dist_sq(p, q));
  return best;
}

double oracle_sum_sorted(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double s = 0;
  for (double x : v) s += x;
  return s / double(v.size());
}

double brute_chamfer(const std::vector<Vec3>& p, const std::vector<Vec3>& q) {
  std::vector<double> a, b;
  for (const auto& x : p) a.push_back(brute_nearest(x, q));
  for (const auto& x : q) b.push_back(brute_nearest(x, p));
  return 0.5 * (oracle_sum_sorted(a) + oracle_sum_sorted(b));
}

DistanceMatrix random_matrix(std::size_t r, std::size_t c, Rng& rng, bool dyadic = false) {
  DistanceMatrix d(r, c);
  for (auto& v : d.values) v = dyadic ? double(rng.index(64)) / 8.0 : rng.uniform(0.0, 3.0);
  return d;
}

// COV by its definition: reference j is covered when some generated row has j
// as its first minimal column.
double oracle_cov(const DistanceMatrix& d) {
  std::size_t covered = 0;
  for (std::size_t j = 0; j < d.cols; ++j) {
    bool hit = false;
    for (std::size_t i = 0; i < d.rows && !hit; ++i) {
      const double* row = &d.values[i * d.cols];
      hit = std::size_t(std::min_element(row, row + d.cols) - row) == j;
    }
    covered += hit;
  }
  return double(covered) / double(d.cols);
}

double oracle_mmd(const DistanceMatrix& d) {
  std::vector<double> mins;
  for (std::size_t j = 0; j < d.cols; ++j) {
    std::vector<double> col;
    for (std::size_t i = 0; i < d.rows; ++i) col.push_back(d.values[i * d.cols + j]);
    mins.push_back(*std::min_element(col.begin(), col.end()));
  }
  return oracle_sum_sorted(mins);
}

DistanceMatrix symmetric(std::size_t n, Rng& rng) {
  DistanceMatrix d(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) d.at(i, j) = d.at(j, i) = rng.uniform(0.0, 2.0);
  return d;
}

VoxelGrid box_grid(std::size_t r, std::array<std::size_t, 6> b) {
  VoxelGrid g(r);
  for (std::size_t x = b[0]; x < b[1]; ++x)
    for (std::size_t y = b[2]; y < b[3]; ++y)
      for (std::size_t z = b[4]; z < b[5]; ++z) g.bits[g.index(x, y, z)] = 1;
  return g;
}

Mesh square(double z, bool flipped) {
  Mesh m;
  m.vertices = {{0, 0, z}, {1, 0, z}, {1, 1, z}, {0, 1, z}};
  m.triangles = flipped ? std::vector<Triangle>{{0, 2, 1}, {0, 3, 2}} : std::vector<Triangle>{{0, 1, 2}, {0, 2, 3}};
  return m;
}

}  // namespace

TEST(Chamfer, HandExamples) {
  const std::vector<Vec3> p{{0, 0, 0}}, q{{0.3, 0, 0}};
  EXPECT_DOUBLE_EQ(chamfer_l2(p, q), 0.09);
  Rng rng(1);
  auto a = random_points(50, rng);
  EXPECT_EQ(chamfer_l2(a, a), 0.0);
  EXPECT_THROW(chamfer_l2({}, q), ValueError);
  EXPECT_THROW(chamfer_l2(p, {}), ValueError);
}

TEST(Chamfer, KdTreeMatchesBruteForceExactly) {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    auto p = random_points(1 + rng.index(100), rng);
    auto q = random_points(1 + rng.index(100), rng);
    // Duplicates and shared coordinates stress tie handling.
    if (trial % 5 == 0) p.push_back(q[0]);
    if (trial % 7 == 0) q.push_back({p[0][0], q[0][1], p[0][2]});
    const KdTree tq(q);
    for (const auto& x : p) ASSERT_EQ(tq.nearest(x).first, brute_nearest(x, q));
    ASSERT_EQ(chamfer_l2(p, q), brute_chamfer(p, q));
  }
}

TEST(Chamfer, SymmetricAndOrderInvariant) {
  Rng rng(3);
  auto p = random_points(300, rng), q = random_points(200, rng);
  const double base = chamfer_l2(p, q);
  EXPECT_EQ(chamfer_l2(q, p), base);
  std::shuffle(p.begin(), p.end(), rng.engine());
  std::shuffle(q.begin(), q.end(), rng.engine());
  EXPECT_EQ(chamfer_l2(p, q), base);
}

TEST(SetMetrics, HandExamples) {
  DistanceMatrix one(1, 1);
  one.at(0, 0) = 7;
  EXPECT_EQ(mmd(one), 7.0);
  EXPECT_EQ(cov(one), 1.0);

  DistanceMatrix ident(4, 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) ident.at(i, j) = i == j ? 0.0 : 1.0 + double(i + j);
  EXPECT_EQ(cov(ident), 1.0);
  EXPECT_EQ(mmd(ident), 0.0);

  DistanceMatrix funnel(3, 5);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) funnel.at(i, j) = j == 2 ? 0.5 : 2.0;
  EXPECT_EQ(cov(funnel), 1.0 / 5.0);

  // {a,a} vs {b,b}: 2 d(a,b).
  DistanceMatrix cross(2, 2), zero(2, 2);
  for (auto& v : cross.values) v = 0.75;
  EXPECT_EQ(ecd_variant(cross, zero, zero), 1.5);
  EXPECT_THROW(ecd_variant(one, one, one), ValueError);
  DistanceMatrix bad(2, 2);
  bad.at(0, 1) = -1;
  EXPECT_THROW(mmd(bad), ValueError);
  EXPECT_THROW(cov(DistanceMatrix{}), ValueError);
}

TEST(SetMetrics, MatchBruteForceOnRandomInstances) {
  Rng rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t g = 2 + rng.index(9), r = 2 + rng.index(9);
    auto d = random_matrix(g, r, rng, trial % 2 == 0);
    ASSERT_EQ(cov(d), oracle_cov(d));
    ASSERT_EQ(mmd(d), oracle_mmd(d));
    auto gg = symmetric(g, rng), rr = symmetric(r, rng);
    const double direct = 2 * oracle_sum_sorted(d.values) - oracle_sum_sorted(gg.values) - oracle_sum_sorted(rr.values);
    ASSERT_EQ(ecd_variant(d, gg, rr), direct);
  }
}

TEST(SetMetrics, PermutationInvariantExactly) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t g = 2 + rng.index(9), r = 2 + rng.index(9);
    auto d = random_matrix(g, r, rng);
    auto gg = symmetric(g, rng), rr = symmetric(r, rng);
    std::vector<std::size_t> pg(g), pr(r);
    std::iota(pg.begin(), pg.end(), 0u);
    std::iota(pr.begin(), pr.end(), 0u);
    std::shuffle(pg.begin(), pg.end(), rng.engine());
    std::shuffle(pr.begin(), pr.end(), rng.engine());
    DistanceMatrix d2(g, r), g2(g, g), r2(r, r);
    for (std::size_t i = 0; i < g; ++i)
      for (std::size_t j = 0; j < r; ++j) d2.at(i, j) = d.at(pg[i], pr[j]);
    for (std::size_t i = 0; i < g; ++i)
      for (std::size_t j = 0; j < g; ++j) g2.at(i, j) = gg.at(pg[i], pg[j]);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < r; ++j) r2.at(i, j) = rr.at(pr[i], pr[j]);
    ASSERT_EQ(mmd(d2), mmd(d));
    ASSERT_EQ(ecd_variant(d2, g2, r2), ecd_variant(d, gg, rr));
    // Continuous draws have no ties, so the per-row argmin is order independent.
    ASSERT_EQ(cov(d2), cov(d));
  }
}

TEST(SetMetrics, AddingGeneratedShapeNeverIncreasesMmd) {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    auto d = random_matrix(1 + rng.index(8), 1 + rng.index(8), rng);
    auto grown = d;
    grown.rows += 1;
    for (std::size_t j = 0; j < d.cols; ++j) grown.values.push_back(rng.uniform(0.0, 3.0));
    ASSERT_LE(mmd(grown), mmd(d));
  }
}

TEST(Iou, Examples) {
  auto a = box_grid(8, {0, 4, 0, 4, 0, 4});
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, box_grid(8, {4, 8, 4, 8, 4, 8})), 0.0);
  EXPECT_DOUBLE_EQ(iou(a, box_grid(8, {2, 6, 0, 4, 0, 4})), 1.0 / 3.0);
  EXPECT_EQ(iou(VoxelGrid(4), VoxelGrid(4)), 1.0);
  EXPECT_THROW(iou(VoxelGrid(4), VoxelGrid(5)), ShapeError);
}

TEST(Iou, MatchesBruteForceOnRandomGrids) {
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t r = 1 + rng.index(10);
    VoxelGrid a(r), b(r);
    for (auto& v : a.bits) v = rng.bernoulli(0.4);
    for (auto& v : b.bits) v = rng.bernoulli(0.4);
    std::size_t inter = 0, uni = 0;
    for (std::size_t x = 0; x < r; ++x)
      for (std::size_t y = 0; y < r; ++y)
        for (std::size_t z = 0; z < r; ++z) {
          inter += a.at(x, y, z) && b.at(x, y, z);
          uni += a.at(x, y, z) || b.at(x, y, z);
        }
    ASSERT_EQ(iou(a, b), uni ? double(inter) / double(uni) : 1.0);
    ASSERT_EQ(iou(a, b), iou(b, a));
  }
}

TEST(TriangleBvh, NearestFaceMatchesBruteForce) {
  const auto mesh = sphere_mesh({0.5, 0.5, 0.5}, 0.3, 12, 24);
  const TriangleBvh bvh(mesh);
  Rng rng(8);
  for (int i = 0; i < 2000; ++i) {
    const Vec3 p{rng.uniform(), rng.uniform(), rng.uniform()};
    auto face_dist = [&](std::size_t t) {
      const auto& f = mesh.triangles[t];
      return dist_sq(p, closest_on_triangle(p, mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]));
    };
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
      if (mesh.face_area(t) > 1e-300) best = std::min(best, face_dist(t));
    ASSERT_EQ(face_dist(bvh.nearest_face(p)), best);
  }
}

TEST(NormalConsistency, Examples) {
  Rng rng(9);
  const auto sphere = sphere_mesh({0.5, 0.5, 0.5}, 0.3, 16, 32);
  EXPECT_NEAR(normal_consistency(sphere, sphere, 2048, rng), 1.0, 1e-6);
  EXPECT_NEAR(normal_consistency(square(0.5, false), square(0.5, true), 512, rng), 1.0, 1e-12);
  const auto cube = box_mesh({0.25, 0.25, 0.25}, {0.75, 0.75, 0.75});
  const auto other = sphere_mesh({0.5, 0.5, 0.5}, 0.28, 10, 20);
  EXPECT_LT(normal_consistency(sphere, cube, 2048, rng), normal_consistency(sphere, other, 2048, rng));
  EXPECT_THROW(normal_consistency(Mesh{}, sphere, 16, rng), ValueError);
}

TEST(EvaluateGeneration, IdenticalSetsAndRatio) {
  std::vector<ShapeSample> ref;
  for (int i = 0; i < 4; ++i)
    ref.push_back(make_shape_sample(sphere_mesh({0.5, 0.5, 0.5}, 0.1 + 0.08 * i, 8, 16), 512, 100 + i));
  auto same = evaluate_generation(ref, ref);
  EXPECT_EQ(same.cov, 1.0);
  EXPECT_EQ(same.mmd, 0.0);
  EXPECT_EQ(same.ecd_variant, 0.0);
  EXPECT_EQ(same.ratio(), "1:1");

  std::vector<ShapeSample> gen;
  for (int i = 0; i < 20; ++i)
    gen.push_back(make_shape_sample(sphere_mesh({0.5, 0.5, 0.5}, 0.1 + 0.012 * i, 8, 16), 512, 200 + i));
  auto five = evaluate_generation(gen, ref);
  EXPECT_EQ(five.ratio(), "5:1");
  EXPECT_EQ(five.to_json()["ratio"], "5:1");
  EXPECT_NE(five.table().find("chamfer_l2"), std::string::npos);
  EXPECT_GT(five.ecd_variant, 0.0);
  auto again = evaluate_generation(gen, ref);
  EXPECT_EQ(again.to_json(), five.to_json());
}

TEST(ShapeSample, EmptyMeshIsCentrePoint) {
  auto s = make_shape_sample(Mesh{}, 2048, 1);
  ASSERT_EQ(s.cloud.size(), 1u);
  EXPECT_EQ(s.cloud.points()[0], (Vec3{0.5, 0.5, 0.5}));
  auto full = make_shape_sample(box_mesh({0.2, 0.2, 0.2}, {0.8, 0.8, 0.8}), 2048, 1);
  EXPECT_EQ(full.cloud.size(), 2048u);
  for (const auto& p : full.cloud.points()) {
    double m = 1;
    for (int a = 0; a < 3; ++a) m = std::min({m, std::abs(p[a] - 0.2), std::abs(p[a] - 0.8)});
    EXPECT_LT(m, 1e-12);
  }
}
