#pragma once

// Isosurface extraction on a node-centred lattice.
//
// Rather than a 256-entry case table, each cell's contour is traced from its
// faces: on every face the iso crossings are paired into segments, with
// ambiguous faces (two diagonal inside corners) resolved by the average of the
// four corner values. Both cells sharing a face reach the same decision, so
// segments match across cells and the surface is crack-free. Within a cell
// the segments chain into closed loops, which are triangulated. A closed
// field (boundary strictly outside) therefore yields a closed 2-manifold.

#include <algorithm>
#include <array>
#include <cstdint>
#include <vector>

#include "sst/geometry/mesh.hpp"
#include "sst/geometry/voxel.hpp"

namespace sst {

namespace detail {

// Corner c of a cell has offset (c & 1, (c >> 1) & 1, (c >> 2) & 1).
// Faces list corners counter-clockwise as seen from outside the cell.
inline constexpr int kFaceCorners[6][4] = {{0, 4, 6, 2}, {1, 3, 7, 5}, {0, 1, 5, 4},
                                           {2, 6, 7, 3}, {0, 2, 3, 1}, {4, 5, 7, 6}};

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) { return 0.5 * norm(cross(b - a, c - a)); }

}  // namespace detail

/// Triangulates {field > iso}. Triangles face away from the inside region.
inline Mesh marching_cubes(const OccupancyField& field, double iso = 0.5) {
  if (field.res < 2) throw ValueError("marching_cubes: resolution must be at least 2");
  if (!(iso > 0.0 && iso < 1.0)) throw ValueError("marching_cubes: iso level must lie in (0, 1)");
  if (field.values.size() != field.res * field.res * field.res) {
    throw ShapeError("marching_cubes: field has " + std::to_string(field.values.size()) + " values, expected res^3");
  }
  const std::size_t n = field.res;
  Mesh mesh;
  std::vector<std::int64_t> edge_vertex(3 * n * n * n, -1);

  auto node_id = [n](std::size_t i, std::size_t j, std::size_t k) { return (i * n + j) * n + k; };

  for (std::size_t i = 0; i + 1 < n; ++i)
    for (std::size_t j = 0; j + 1 < n; ++j)
      for (std::size_t k = 0; k + 1 < n; ++k) {
        std::array<std::size_t, 8> id{};
        std::array<double, 8> val{};
        std::array<bool, 8> in{};
        int count = 0;
        for (int c = 0; c < 8; ++c) {
          id[c] = node_id(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
          val[c] = field.values[id[c]];
          in[c] = val[c] > iso;
          count += in[c];
        }
        if (count == 0 || count == 8) continue;

        // Vertex on the cell edge between corners a and b (which differ in one bit).
        auto vertex = [&](int a, int b) -> std::uint32_t {
          const int lo = std::min(a, b), hi = std::max(a, b);
          const int axis = (hi ^ lo) == 1 ? 0 : ((hi ^ lo) == 2 ? 1 : 2);
          auto& slot = edge_vertex[id[lo] * 3 + std::size_t(axis)];
          if (slot < 0) {
            double t = (iso - val[lo]) / (val[hi] - val[lo]);
            t = std::clamp(t, 1e-3, 1.0 - 1e-3);
            const Vec3 p = field.node(i + (lo & 1), j + ((lo >> 1) & 1), k + ((lo >> 2) & 1));
            Vec3 q = p;
            q[axis] += t * field.spacing;
            slot = static_cast<std::int64_t>(mesh.vertices.size());
            mesh.vertices.push_back(q);
          }
          return static_cast<std::uint32_t>(slot);
        };

        // next[v] = vertex following v along the contour.
        std::vector<std::pair<std::uint32_t, std::uint32_t>> segments;
        for (const auto& face : detail::kFaceCorners) {
          std::array<int, 4> exits{}, entries{};
          int ne = 0, nn = 0;
          std::array<int, 4> kind{};  // +1 exit, -1 entry, 0 none, per face edge
          for (int e = 0; e < 4; ++e) {
            const bool a = in[face[e]], b = in[face[(e + 1) % 4]];
            kind[e] = a && !b ? 1 : (!a && b ? -1 : 0);
            if (kind[e] == 1) exits[ne++] = e;
            if (kind[e] == -1) entries[nn++] = e;
          }
          if (ne == 0) continue;
          auto edge_vertex_of = [&](int e) { return vertex(face[e], face[(e + 1) % 4]); };
          if (ne == 1) {
            segments.emplace_back(edge_vertex_of(exits[0]), edge_vertex_of(entries[0]));
            continue;
          }
          // Ambiguous face. Sum corners in global-index order so neighbouring
          // cells compute a bit-identical centre value.
          std::array<std::size_t, 4> gids{id[face[0]], id[face[1]], id[face[2]], id[face[3]]};
          std::sort(gids.begin(), gids.end());
          double centre = 0;
          for (auto g : gids) centre += field.values[g];
          const bool centre_in = centre / 4.0 > iso;
          for (int x = 0; x < 2; ++x) {
            const int e = exits[x];
            const int partner = centre_in ? (e + 1) % 4 : (e + 3) % 4;
            segments.emplace_back(edge_vertex_of(e), edge_vertex_of(partner));
          }
        }

        // Chain segments into loops.
        std::vector<bool> used(segments.size(), false);
        for (std::size_t s0 = 0; s0 < segments.size(); ++s0) {
          if (used[s0]) continue;
          std::vector<std::uint32_t> loop;
          std::size_t s = s0;
          while (!used[s]) {
            used[s] = true;
            loop.push_back(segments[s].first);
            const auto target = segments[s].second;
            std::size_t nxt = segments.size();
            for (std::size_t t = 0; t < segments.size(); ++t)
              if (!used[t] && segments[t].first == target) {
                nxt = t;
                break;
              }
            if (nxt == segments.size()) break;
            s = nxt;
          }
          // Contours run clockwise around the inside region; reverse so
          // triangles face outward.
          std::reverse(loop.begin(), loop.end());
          const auto& V = mesh.vertices;
          if (loop.size() == 3) {
            mesh.triangles.push_back({loop[0], loop[1], loop[2]});
          } else if (loop.size() == 4) {
            const double a = std::min(detail::triangle_area(V[loop[0]], V[loop[1]], V[loop[2]]),
                                      detail::triangle_area(V[loop[0]], V[loop[2]], V[loop[3]]));
            const double b = std::min(detail::triangle_area(V[loop[1]], V[loop[2]], V[loop[3]]),
                                      detail::triangle_area(V[loop[1]], V[loop[3]], V[loop[0]]));
            if (a >= b) {
              mesh.triangles.push_back({loop[0], loop[1], loop[2]});
              mesh.triangles.push_back({loop[0], loop[2], loop[3]});
            } else {
              mesh.triangles.push_back({loop[1], loop[2], loop[3]});
              mesh.triangles.push_back({loop[1], loop[3], loop[0]});
            }
          } else if (loop.size() > 4) {
            Vec3 c{0, 0, 0};
            for (auto v : loop) c = c + V[v];
            c = c * (1.0 / double(loop.size()));
            const auto ci = static_cast<std::uint32_t>(mesh.vertices.size());
            mesh.vertices.push_back(c);
            for (std::size_t t = 0; t < loop.size(); ++t)
              mesh.triangles.push_back({ci, loop[t], loop[(t + 1) % loop.size()]});
          }
        }
      }
  return mesh;
}

}  // namespace sst
