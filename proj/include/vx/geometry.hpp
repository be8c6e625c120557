#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vx/rng.hpp"
#include "vx/tensor.hpp"  // Coords alias

namespace vx {

struct GeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Vec3 = std::array<double, 3>;
using Quat = std::array<double, 4>;  // (w, x, y, z), unit

// ---- small vector/quaternion helpers ---------------------------------------

inline Vec3 vadd(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 vsub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 vscale(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
inline double vdot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 vcross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double vnorm(const Vec3& a);
Vec3 vnormalize(const Vec3& a);

Quat quat_normalize(const Quat& q);
Vec3 quat_rotate(const Quat& q, const Vec3& v);
Vec3 quat_rotate_inv(const Quat& q, const Vec3& v);
Quat random_rotation(Rng& rng);  // uniform over the rotation group

// ---- shapes ------------------------------------------------------------------

// All surfaces live in the normalized domain [-1,1]^3 with margin >= 0.05.
// Local-frame parameter layout per kind:
//   sphere:   {r}
//   box:      {hx, hy, hz}                         half extents
//   torus:    {R, r}                               ring in xy-plane, axis z
//   capsule:  {h, r}                               segment +-h along z, radius r
//   union_two:{hx, hy, hz, ox, oy, oz, r, sx, sy, sz}
//             box half-extents + box offset, sphere radius + sphere offset;
//             distance is min() of members: exact sign everywhere, magnitude a
//             lower bound inside the overlap
//   star:     {s}                                  two dual regular tetrahedra
//             with vertices at s*(+-1,+-1,+-1) (even/odd sign patterns); each
//             tetra uses the max-of-face-planes form: exact sign, magnitude a
//             lower bound outside near edges/vertices
enum class ShapeKind { sphere, box, torus, capsule, union_two, star };
constexpr int kNumShapeKinds = 6;

// Minimum clearance every surface keeps from the [-1,1]^3 walls.
constexpr double kDomainMargin = 0.05;

const char* shape_kind_name(ShapeKind kind);
ShapeKind shape_kind_from_name(const std::string& name);
bool has_sharp_edges(ShapeKind kind);

struct Shape {
  ShapeKind kind = ShapeKind::sphere;
  Vec3 center{0, 0, 0};
  Quat rot{1, 0, 0, 0};
  std::vector<double> params;
  int class_id = 0;  // generation condition label; equals the kind index here
};

double analytic_sdf(const Shape& shape, const Vec3& p);
double bounding_radius(const Shape& shape);  // local-frame radius around center

// Randomized instance of one kind: parameters, rotation and center drawn so
// the surface keeps the required domain margin.
Shape random_shape(ShapeKind kind, Rng& rng);
Shape random_shape(Rng& rng);

// ---- surface sampling -----------------------------------------------------------

// The 7-channel point cloud: position, unit normal, sharp flag.
struct SurfaceSample {
  Coords positions;
  Coords normals;
  std::vector<uint8_t> sharp;

  size_t size() const { return positions.size(); }
};

// Geodesic half-width of the sharp-edge band on adjacent faces.
constexpr double kSharpBand = 0.02;

// floor(n*(1-sharp_fraction)) area-uniform points; the rest drawn on the
// sharp-edge band (flagged) for kinds that have edges, reassigned to uniform
// otherwise. Deterministic under seed.
SurfaceSample sample_surface(const Shape& shape, int64_t n, double sharp_fraction, uint64_t seed);

// ---- SDF grids ----------------------------------------------------------------

struct SdfGrid {
  int resolution = 0;                // corner lattice points per axis
  std::vector<double> values;        // index (ix*G + iy)*G + iz
  double coord(int i) const { return -1.0 + 2.0 * i / (resolution - 1); }
  double at(int ix, int iy, int iz) const {
    return values[(static_cast<size_t>(ix) * resolution + iy) * resolution + iz];
  }
};

SdfGrid eval_sdf_grid(const Shape& shape, int resolution);

// ---- meshes --------------------------------------------------------------------

struct Mesh {
  Coords vertices;
  std::vector<std::array<int32_t, 3>> triangles;

  bool empty() const { return triangles.empty(); }
};

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c);
double mesh_area(const Mesh& mesh);

// Area-weighted uniform surface points (no normals/sharpness: evaluation use).
Coords sample_mesh_surface(const Mesh& mesh, int64_t n, uint64_t seed);

// ---- file formats -----------------------------------------------------------------

void write_obj(const std::string& path, const Mesh& mesh);        // ASCII, %.9g
Mesh read_obj(const std::string& path);                           // v/f records
void write_ply(const std::string& path, const SurfaceSample& s);  // ASCII with sharp property

}  // namespace vx
