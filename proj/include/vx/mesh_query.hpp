#pragma once

#include "vx/geometry.hpp"

namespace vx {

// Exact closest point on a triangle (barycentric region walk).
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

// Exact point-to-mesh distance queries, accelerated by a uniform spatial
// hash over triangle bounding boxes with a conservative expanding-ring
// search (a ring at Chebyshev distance k cannot hold anything closer than
// (k-1) cells). The brute-force path scans every triangle and is kept as
// the testing oracle.
class MeshDistanceQuery {
 public:
  explicit MeshDistanceQuery(const Mesh& mesh);

  double unsigned_distance(const Vec3& p) const;
  double unsigned_distance_brute(const Vec3& p) const;

  // sign from the face normal of the closest triangle: reliable only for
  // closed, consistently wound meshes (reconstruction outputs)
  double signed_distance(const Vec3& p) const;

  int32_t closest_triangle(const Vec3& p, Vec3* closest_point = nullptr) const;

 private:
  struct Cell {
    std::vector<int32_t> tris;
  };

  int32_t cell_index(int ix, int iy, int iz) const;
  void cell_of(const Vec3& p, int& ix, int& iy, int& iz) const;

  const Mesh mesh_;
  Vec3 origin_{0, 0, 0};
  double cell_size_ = 1.0;
  int nx_ = 1, ny_ = 1, nz_ = 1;
  std::vector<Cell> cells_;
};

}  // namespace vx
