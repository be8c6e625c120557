#include "vx/mesh_query.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace vx {

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // region classification via barycentric signs (Ericson, RTCD ch. 5)
  const Vec3 ab = vsub(b, a), ac = vsub(c, a), ap = vsub(p, a);
  const double d1 = vdot(ab, ap), d2 = vdot(ac, ap);
  if (d1 <= 0 && d2 <= 0) return a;

  const Vec3 bp = vsub(p, b);
  const double d3 = vdot(ab, bp), d4 = vdot(ac, bp);
  if (d3 >= 0 && d4 <= d3) return b;

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    const double v = d1 / (d1 - d3);
    return vadd(a, vscale(ab, v));
  }

  const Vec3 cp = vsub(p, c);
  const double d5 = vdot(ab, cp), d6 = vdot(ac, cp);
  if (d6 >= 0 && d5 <= d6) return c;

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    const double w = d2 / (d2 - d6);
    return vadd(a, vscale(ac, w));
  }

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && d4 - d3 >= 0 && d5 - d6 >= 0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return vadd(b, vscale(vsub(c, b), w));
  }

  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, w = vc * denom;
  return vadd(a, vadd(vscale(ab, v), vscale(ac, w)));
}

MeshDistanceQuery::MeshDistanceQuery(const Mesh& mesh) : mesh_(mesh) {
  if (mesh_.triangles.empty()) throw GeometryError("distance query needs a nonempty mesh");

  Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  for (const Vec3& v : mesh_.vertices) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], v[a]);
      hi[a] = std::max(hi[a], v[a]);
    }
  }
  const Vec3 extent = vsub(hi, lo);
  const double diag = std::max(vnorm(extent), 1e-9);
  // aim for a few triangles per occupied cell
  const double target =
      diag / std::max(4.0, std::cbrt(static_cast<double>(mesh_.triangles.size())));
  cell_size_ = std::max(target, 1e-6);
  origin_ = lo;
  nx_ = std::max(1, static_cast<int>(std::floor(extent[0] / cell_size_)) + 1);
  ny_ = std::max(1, static_cast<int>(std::floor(extent[1] / cell_size_)) + 1);
  nz_ = std::max(1, static_cast<int>(std::floor(extent[2] / cell_size_)) + 1);
  cells_.resize(static_cast<size_t>(nx_) * ny_ * nz_);

  for (size_t t = 0; t < mesh_.triangles.size(); ++t) {
    const auto& tri = mesh_.triangles[t];
    Vec3 tlo{1e300, 1e300, 1e300}, thi{-1e300, -1e300, -1e300};
    for (int k = 0; k < 3; ++k) {
      const Vec3& v = mesh_.vertices[tri[k]];
      for (int a = 0; a < 3; ++a) {
        tlo[a] = std::min(tlo[a], v[a]);
        thi[a] = std::max(thi[a], v[a]);
      }
    }
    int ix0, iy0, iz0, ix1, iy1, iz1;
    cell_of(tlo, ix0, iy0, iz0);
    cell_of(thi, ix1, iy1, iz1);
    for (int ix = ix0; ix <= ix1; ++ix)
      for (int iy = iy0; iy <= iy1; ++iy)
        for (int iz = iz0; iz <= iz1; ++iz)
          cells_[cell_index(ix, iy, iz)].tris.push_back(static_cast<int32_t>(t));
  }
}

int32_t MeshDistanceQuery::cell_index(int ix, int iy, int iz) const {
  return (ix * ny_ + iy) * nz_ + iz;
}

void MeshDistanceQuery::cell_of(const Vec3& p, int& ix, int& iy, int& iz) const {
  ix = std::clamp(static_cast<int>(std::floor((p[0] - origin_[0]) / cell_size_)), 0, nx_ - 1);
  iy = std::clamp(static_cast<int>(std::floor((p[1] - origin_[1]) / cell_size_)), 0, ny_ - 1);
  iz = std::clamp(static_cast<int>(std::floor((p[2] - origin_[2]) / cell_size_)), 0, nz_ - 1);
}

int32_t MeshDistanceQuery::closest_triangle(const Vec3& p, Vec3* closest_point) const {
  int cx, cy, cz;
  cell_of(p, cx, cy, cz);
  const int max_ring = std::max({nx_, ny_, nz_,
                                 static_cast<int>(std::ceil(vnorm(vsub(p, origin_)) / cell_size_)) +
                                     1});

  double best = std::numeric_limits<double>::infinity();
  int32_t best_tri = -1;
  Vec3 best_point{0, 0, 0};

  auto scan_cell = [&](int ix, int iy, int iz) {
    if (ix < 0 || iy < 0 || iz < 0 || ix >= nx_ || iy >= ny_ || iz >= nz_) return;
    for (int32_t t : cells_[cell_index(ix, iy, iz)].tris) {
      const auto& tri = mesh_.triangles[t];
      const Vec3 q = closest_point_on_triangle(p, mesh_.vertices[tri[0]], mesh_.vertices[tri[1]],
                                               mesh_.vertices[tri[2]]);
      const double d = vnorm(vsub(p, q));
      if (d < best) {
        best = d;
        best_tri = t;
        best_point = q;
      }
    }
  };

  for (int ring = 0; ring <= max_ring + 1; ++ring) {
    // anything in ring k is at least (k-1) cells away; once the best found
    // distance beats that bound, wider rings cannot improve it
    if (best_tri >= 0 && best <= (static_cast<double>(ring) - 1.0) * cell_size_) break;
    if (ring == 0) {
      scan_cell(cx, cy, cz);
      continue;
    }
    for (int ix = cx - ring; ix <= cx + ring; ++ix) {
      for (int iy = cy - ring; iy <= cy + ring; ++iy) {
        for (int iz = cz - ring; iz <= cz + ring; ++iz) {
          const int cheb = std::max({std::abs(ix - cx), std::abs(iy - cy), std::abs(iz - cz)});
          if (cheb != ring) continue;
          scan_cell(ix, iy, iz);
        }
      }
    }
  }
  if (best_tri < 0) throw GeometryError("distance query found no triangle (corrupt index)");
  if (closest_point != nullptr) *closest_point = best_point;
  return best_tri;
}

double MeshDistanceQuery::unsigned_distance(const Vec3& p) const {
  Vec3 q;
  closest_triangle(p, &q);
  return vnorm(vsub(p, q));
}

double MeshDistanceQuery::unsigned_distance_brute(const Vec3& p) const {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& tri : mesh_.triangles) {
    const Vec3 q = closest_point_on_triangle(p, mesh_.vertices[tri[0]], mesh_.vertices[tri[1]],
                                             mesh_.vertices[tri[2]]);
    best = std::min(best, vnorm(vsub(p, q)));
  }
  return best;
}

double MeshDistanceQuery::signed_distance(const Vec3& p) const {
  Vec3 q;
  const int32_t t = closest_triangle(p, &q);
  const auto& tri = mesh_.triangles[t];
  const Vec3 n = vcross(vsub(mesh_.vertices[tri[1]], mesh_.vertices[tri[0]]),
                        vsub(mesh_.vertices[tri[2]], mesh_.vertices[tri[0]]));
  const double d = vnorm(vsub(p, q));
  return vdot(vsub(p, q), n) >= 0 ? d : -d;
}

}  // namespace vx
