#include "vx/marching_cubes.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace vx {

namespace {

// Case table built once at startup. For every sign configuration the cut
// edges are paired on each cube face (ambiguous faces isolate each inside
// corner — the same rule both neighbors apply, which is what makes shared
// faces stitch), chained into closed loops, oriented inside-to-outside, and
// fan-triangulated. Vertices only ever lie on cube edges, as in the
// published tables.
struct CaseTable {
  std::array<std::array<int, 2>, 12> edge_corners;
  std::array<std::vector<std::array<int, 3>>, 256> tris;
};

Vec3 corner_pos(int c) {
  return {static_cast<double>(c & 1), static_cast<double>((c >> 1) & 1),
          static_cast<double>((c >> 2) & 1)};
}

CaseTable build_case_table() {
  CaseTable table{};
  int edge_of[8][8];
  for (auto& row : edge_of) std::fill(row, row + 8, -1);
  {
    int eid = 0;
    for (int axis = 0; axis < 3; ++axis) {
      for (int c = 0; c < 8; ++c) {
        if (c & (1 << axis)) continue;
        const int c2 = c | (1 << axis);
        table.edge_corners[eid] = {c, c2};
        edge_of[c][c2] = edge_of[c2][c] = eid;
        ++eid;
      }
    }
  }

  // faces as cyclic corner quads
  std::array<std::array<int, 4>, 6> faces;
  {
    int fid = 0;
    for (int axis = 0; axis < 3; ++axis) {
      const int u = (axis + 1) % 3, v = (axis + 2) % 3;
      for (int side = 0; side < 2; ++side) {
        const int base = side << axis;
        faces[fid++] = {base, base | (1 << u), base | (1 << u) | (1 << v), base | (1 << v)};
      }
    }
  }

  for (int config = 0; config < 256; ++config) {
    auto inside = [config](int c) { return (config >> c) & 1; };

    // each cut edge is paired with exactly one partner on each adjacent face
    std::array<std::array<int, 2>, 12> partner;
    std::array<int, 12> partner_count{};
    partner_count.fill(0);
    auto add_pair = [&](int e1, int e2) {
      partner[e1][partner_count[e1]++] = e2;
      partner[e2][partner_count[e2]++] = e1;
    };

    for (const auto& quad : faces) {
      int cut[4], n_cut = 0;
      for (int k = 0; k < 4; ++k) {
        if (inside(quad[k]) != inside(quad[(k + 1) % 4])) cut[n_cut++] = k;
      }
      if (n_cut == 2) {
        add_pair(edge_of[quad[cut[0]]][quad[(cut[0] + 1) % 4]],
                 edge_of[quad[cut[1]]][quad[(cut[1] + 1) % 4]]);
      } else if (n_cut == 4) {
        // alternating signs: isolate each inside corner
        for (int k = 0; k < 4; ++k) {
          if (!inside(quad[k])) continue;
          const int e_prev = edge_of[quad[(k + 3) % 4]][quad[k]];
          const int e_next = edge_of[quad[k]][quad[(k + 1) % 4]];
          add_pair(e_prev, e_next);
        }
      }
    }

    // chain the degree-2 pairing graph into closed loops
    std::array<bool, 12> used{};
    for (int start = 0; start < 12; ++start) {
      if (partner_count[start] == 0 || used[start]) continue;
      std::vector<int> loop;
      int cur = start, prev = -1;
      while (true) {
        loop.push_back(cur);
        used[cur] = true;
        const int next = partner[cur][0] == prev && partner_count[cur] > 1 ? partner[cur][1]
                                                                           : partner[cur][0];
        prev = cur;
        cur = next;
        if (cur == start) break;
      }
      if (loop.size() < 3) continue;  // cannot happen for valid configs

      // orient the loop so its normal points from inside corners to outside
      std::vector<Vec3> pts;
      Vec3 in_c{0, 0, 0}, out_c{0, 0, 0};
      for (int e : loop) {
        const auto [a, b] = table.edge_corners[e];
        const Vec3 pa = corner_pos(a), pb = corner_pos(b);
        pts.push_back(vscale(vadd(pa, pb), 0.5));
        const int ci = inside(a) ? a : b;
        const int co = inside(a) ? b : a;
        in_c = vadd(in_c, corner_pos(ci));
        out_c = vadd(out_c, corner_pos(co));
      }
      Vec3 normal{0, 0, 0};  // Newell
      for (size_t i = 0; i < pts.size(); ++i) {
        const Vec3& p = pts[i];
        const Vec3& q = pts[(i + 1) % pts.size()];
        normal[0] += (p[1] - q[1]) * (p[2] + q[2]);
        normal[1] += (p[2] - q[2]) * (p[0] + q[0]);
        normal[2] += (p[0] - q[0]) * (p[1] + q[1]);
      }
      const Vec3 to_outside = vsub(out_c, in_c);
      const double side = vdot(normal, to_outside);
      if (std::abs(side) <= 1e-9) {
        throw GeometryError("marching cubes table: ambiguous loop orientation");
      }
      if (side < 0) std::reverse(loop.begin(), loop.end());

      for (size_t i = 1; i + 1 < loop.size(); ++i) {
        table.tris[config].push_back({loop[0], loop[static_cast<int>(i)], loop[i + 1]});
      }
    }
  }
  return table;
}

const CaseTable& case_table() {
  static const CaseTable table = build_case_table();
  return table;
}

}  // namespace

const std::vector<std::array<int, 3>>& marching_cubes_case(int config) {
  return case_table().tris.at(config);
}

std::array<int, 2> marching_cubes_edge(int edge) {
  const auto& e = case_table().edge_corners.at(edge);
  return {e[0], e[1]};
}

Mesh marching_cubes(const SdfGrid& grid, double iso) {
  const int G = grid.resolution;
  if (G < 2) throw GeometryError("marching cubes needs a grid with resolution >= 2");
  const CaseTable& table = case_table();

  Mesh mesh;
  std::unordered_map<uint64_t, int32_t> edge_vertex;
  edge_vertex.reserve(1 << 16);

  auto lattice_id = [G](int ix, int iy, int iz) {
    return (static_cast<uint64_t>(ix) * G + iy) * G + iz;
  };

  for (int ix = 0; ix + 1 < G; ++ix) {
    for (int iy = 0; iy + 1 < G; ++iy) {
      for (int iz = 0; iz + 1 < G; ++iz) {
        double val[8];
        int config = 0;
        for (int c = 0; c < 8; ++c) {
          val[c] = grid.at(ix + (c & 1), iy + ((c >> 1) & 1), iz + ((c >> 2) & 1));
          if (val[c] < iso) config |= 1 << c;
        }
        if (config == 0 || config == 255) continue;

        auto vertex_on_edge = [&](int e) -> int32_t {
          const auto [a, b] = table.edge_corners[e];
          const int ax = ix + (a & 1), ay = iy + ((a >> 1) & 1), az = iz + ((a >> 2) & 1);
          const int axis = (a ^ b) == 1 ? 0 : ((a ^ b) == 2 ? 1 : 2);
          const uint64_t key = lattice_id(ax, ay, az) * 3 + axis;
          auto it = edge_vertex.find(key);
          if (it != edge_vertex.end()) return it->second;
          const double t = std::clamp((iso - val[a]) / (val[b] - val[a]), 0.0, 1.0);
          Vec3 p{grid.coord(ax), grid.coord(ay), grid.coord(az)};
          p[axis] += t * (grid.coord(1) - grid.coord(0));
          const int32_t id = static_cast<int32_t>(mesh.vertices.size());
          mesh.vertices.push_back(p);
          edge_vertex.emplace(key, id);
          return id;
        };

        for (const auto& tri : table.tris[config]) {
          const int32_t v0 = vertex_on_edge(tri[0]);
          const int32_t v1 = vertex_on_edge(tri[1]);
          const int32_t v2 = vertex_on_edge(tri[2]);
          if (triangle_area(mesh.vertices[v0], mesh.vertices[v1], mesh.vertices[v2]) < 1e-12) {
            continue;
          }
          mesh.triangles.push_back({v0, v1, v2});
        }
      }
    }
  }
  return mesh;
}

}  // namespace vx
