#include "vx/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace vx {

namespace {
constexpr double kPi = std::numbers::pi;
constexpr int kMaxRejectionTries = 100000;
}  // namespace

double vnorm(const Vec3& a) { return std::sqrt(vdot(a, a)); }

Vec3 vnormalize(const Vec3& a) {
  const double n = vnorm(a);
  if (n == 0.0) throw GeometryError("cannot normalize a zero vector");
  return vscale(a, 1.0 / n);
}

Quat quat_normalize(const Quat& q) {
  const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  if (n == 0.0) throw GeometryError("cannot normalize a zero quaternion");
  return {q[0] / n, q[1] / n, q[2] / n, q[3] / n};
}

Vec3 quat_rotate(const Quat& q, const Vec3& v) {
  // v' = v + 2*u x (u x v + w*v), u = (x,y,z)
  const Vec3 u{q[1], q[2], q[3]};
  const Vec3 t = vcross(u, vadd(vcross(u, v), vscale(v, q[0])));
  return vadd(v, vscale(t, 2.0));
}

Vec3 quat_rotate_inv(const Quat& q, const Vec3& v) {
  return quat_rotate({q[0], -q[1], -q[2], -q[3]}, v);
}

Quat random_rotation(Rng& rng) {
  Quat q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
  return quat_normalize(q);
}

// ---- kinds -------------------------------------------------------------------

const char* shape_kind_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::box: return "box";
    case ShapeKind::torus: return "torus";
    case ShapeKind::capsule: return "capsule";
    case ShapeKind::union_two: return "union_two";
    case ShapeKind::star: return "star";
  }
  throw GeometryError("unknown shape kind");
}

ShapeKind shape_kind_from_name(const std::string& name) {
  for (int i = 0; i < kNumShapeKinds; ++i) {
    const auto kind = static_cast<ShapeKind>(i);
    if (name == shape_kind_name(kind)) return kind;
  }
  throw GeometryError("unknown shape kind: " + name);
}

bool has_sharp_edges(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::box:
    case ShapeKind::union_two:  // the box member contributes edges
    case ShapeKind::star:
      return true;
    default:
      return false;
  }
}

// ---- local-frame distance fields ------------------------------------------------

namespace {

double sdf_sphere(double r, const Vec3& p) { return vnorm(p) - r; }

double sdf_box(const Vec3& h, const Vec3& p) {
  const Vec3 q{std::abs(p[0]) - h[0], std::abs(p[1]) - h[1], std::abs(p[2]) - h[2]};
  const Vec3 qp{std::max(q[0], 0.0), std::max(q[1], 0.0), std::max(q[2], 0.0)};
  return vnorm(qp) + std::min(std::max(q[0], std::max(q[1], q[2])), 0.0);
}

double sdf_torus(double R, double r, const Vec3& p) {
  const double ring = std::sqrt(p[0] * p[0] + p[1] * p[1]) - R;
  return std::sqrt(ring * ring + p[2] * p[2]) - r;
}

double sdf_capsule(double h, double r, const Vec3& p) {
  const double zc = std::clamp(p[2], -h, h);
  const Vec3 d{p[0], p[1], p[2] - zc};
  return vnorm(d) - r;
}

// regular tetrahedron with vertices s*(even sign patterns) or the dual; the
// max-of-plane form is exact inside/near faces and a lower bound elsewhere
struct Tetra {
  std::array<Vec3, 4> verts;
  std::array<Vec3, 4> face_normals;  // face i is opposite verts[i]
  double plane_off;                  // n . x == plane_off on each face

  static Tetra make(double s, bool dual) {
    static const std::array<Vec3, 4> even = {
        Vec3{1, 1, 1}, Vec3{1, -1, -1}, Vec3{-1, 1, -1}, Vec3{-1, -1, 1}};
    Tetra t;
    const double sgn = dual ? -1.0 : 1.0;
    for (int i = 0; i < 4; ++i) {
      t.verts[i] = vscale(even[i], s * sgn);
      t.face_normals[i] = vscale(vnormalize(t.verts[i]), -1.0);
    }
    t.plane_off = s / std::sqrt(3.0);
    return t;
  }

  double sdf(const Vec3& p) const {
    double d = -1e300;
    for (int i = 0; i < 4; ++i) d = std::max(d, vdot(face_normals[i], p) - plane_off);
    return d;
  }
};

struct UnionParams {
  Vec3 box_h, box_off, sph_off;
  double sph_r;
};

UnionParams union_params(const Shape& s) {
  const auto& p = s.params;
  return UnionParams{{p[0], p[1], p[2]}, {p[3], p[4], p[5]}, {p[7], p[8], p[9]}, p[6]};
}

double sdf_local(const Shape& shape, const Vec3& p) {
  const auto& pr = shape.params;
  switch (shape.kind) {
    case ShapeKind::sphere:
      return sdf_sphere(pr[0], p);
    case ShapeKind::box:
      return sdf_box({pr[0], pr[1], pr[2]}, p);
    case ShapeKind::torus:
      return sdf_torus(pr[0], pr[1], p);
    case ShapeKind::capsule:
      return sdf_capsule(pr[0], pr[1], p);
    case ShapeKind::union_two: {
      const UnionParams u = union_params(shape);
      const double db = sdf_box(u.box_h, vsub(p, u.box_off));
      const double ds = sdf_sphere(u.sph_r, vsub(p, u.sph_off));
      return std::min(db, ds);
    }
    case ShapeKind::star: {
      const double s = pr[0];
      return std::min(Tetra::make(s, false).sdf(p), Tetra::make(s, true).sdf(p));
    }
  }
  throw GeometryError("unknown shape kind");
}

}  // namespace

double analytic_sdf(const Shape& shape, const Vec3& p) {
  if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) {
    throw GeometryError("sdf query point is not finite");
  }
  return sdf_local(shape, quat_rotate_inv(shape.rot, vsub(p, shape.center)));
}

double bounding_radius(const Shape& shape) {
  const auto& pr = shape.params;
  switch (shape.kind) {
    case ShapeKind::sphere: return pr[0];
    case ShapeKind::box: return vnorm({pr[0], pr[1], pr[2]});
    case ShapeKind::torus: return pr[0] + pr[1];
    case ShapeKind::capsule: return pr[0] + pr[1];
    case ShapeKind::union_two: {
      const UnionParams u = union_params(shape);
      return std::max(vnorm(u.box_off) + vnorm(u.box_h), vnorm(u.sph_off) + u.sph_r);
    }
    case ShapeKind::star: return pr[0] * std::sqrt(3.0);
  }
  throw GeometryError("unknown shape kind");
}

Shape random_shape(ShapeKind kind, Rng& rng) {
  Shape s;
  s.kind = kind;
  s.class_id = static_cast<int>(kind);
  s.rot = random_rotation(rng);
  switch (kind) {
    case ShapeKind::sphere:
      s.params = {rng.uniform(0.25, 0.6)};
      break;
    case ShapeKind::box:
      s.params = {rng.uniform(0.15, 0.45), rng.uniform(0.15, 0.45), rng.uniform(0.15, 0.45)};
      break;
    case ShapeKind::torus: {
      const double R = rng.uniform(0.3, 0.55);
      s.params = {R, rng.uniform(0.08, std::min(0.25, 0.8 * R))};
      break;
    }
    case ShapeKind::capsule:
      s.params = {rng.uniform(0.2, 0.5), rng.uniform(0.1, 0.3)};
      break;
    case ShapeKind::union_two: {
      auto off = [&rng]() { return rng.uniform(-0.15, 0.15); };
      const double hx = rng.uniform(0.15, 0.3), hy = rng.uniform(0.15, 0.3),
                   hz = rng.uniform(0.15, 0.3);
      s.params = {hx, hy, hz, off(), off(), off(), rng.uniform(0.15, 0.3), off(), off(), off()};
      break;
    }
    case ShapeKind::star:
      s.params = {rng.uniform(0.2, 0.45)};
      break;
  }
  const double margin = 1.0 - kDomainMargin - bounding_radius(s);
  if (margin < 0) throw GeometryError("shape parameters exceed the domain margin");
  for (int a = 0; a < 3; ++a) s.center[a] = rng.uniform(-margin, margin);
  return s;
}

Shape random_shape(Rng& rng) {
  const auto kind = static_cast<ShapeKind>(rng.uniform_index(kNumShapeKinds));
  return random_shape(kind, rng);
}

// ---- surface sampling --------------------------------------------------------------

namespace {

struct LocalSample {
  Vec3 p, n;
};

Vec3 random_unit(Rng& rng) {
  for (int i = 0; i < kMaxRejectionTries; ++i) {
    const Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    const double n = vnorm(v);
    if (n > 1e-12) return vscale(v, 1.0 / n);
  }
  throw GeometryError("unit vector sampling failed");
}

LocalSample sample_sphere(double r, Rng& rng) {
  const Vec3 d = random_unit(rng);
  return {vscale(d, r), d};
}

LocalSample sample_box_uniform(const Vec3& h, Rng& rng) {
  const double ax = h[1] * h[2], ay = h[0] * h[2], az = h[0] * h[1];
  const double total = ax + ay + az;
  const double pick = rng.uniform(0.0, total);
  int axis = pick < ax ? 0 : (pick < ax + ay ? 1 : 2);
  const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
  Vec3 p{rng.uniform(-h[0], h[0]), rng.uniform(-h[1], h[1]), rng.uniform(-h[2], h[2])};
  p[axis] = side * h[axis];
  Vec3 n{0, 0, 0};
  n[axis] = side;
  return {p, n};
}

LocalSample sample_box_sharp(const Vec3& h, Rng& rng) {
  // pick one of 12 edges by length, then a point on an adjacent face within
  // the geodesic band of the edge
  const double total = 4 * (h[0] + h[1] + h[2]);
  double pick = rng.uniform(0.0, total);
  int axis = 0;  // axis the edge runs along
  for (; axis < 2; ++axis) {
    if (pick < 4 * h[axis]) break;
    pick -= 4 * h[axis];
  }
  const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
  const double s1 = rng.uniform() < 0.5 ? -1.0 : 1.0;
  const double s2 = rng.uniform() < 0.5 ? -1.0 : 1.0;
  Vec3 p;
  p[axis] = rng.uniform(-h[axis], h[axis]);
  p[a1] = s1 * h[a1];
  p[a2] = s2 * h[a2];
  const double u = rng.uniform(0.0, std::min(kSharpBand, 0.5 * std::min(h[a1], h[a2])));
  Vec3 n{0, 0, 0};
  if (rng.uniform() < 0.5) {  // stay on the a1 face, step inward along a2
    n[a1] = s1;
    p[a2] -= s2 * u;
  } else {
    n[a2] = s2;
    p[a1] -= s1 * u;
  }
  return {p, n};
}

LocalSample sample_torus(double R, double r, Rng& rng) {
  for (int i = 0; i < kMaxRejectionTries; ++i) {
    const double theta = rng.uniform(0.0, 2 * kPi);
    const double phi = rng.uniform(0.0, 2 * kPi);
    if (rng.uniform() * (R + r) > R + r * std::cos(phi)) continue;
    const double ring = R + r * std::cos(phi);
    const Vec3 p{ring * std::cos(theta), ring * std::sin(theta), r * std::sin(phi)};
    const Vec3 n{std::cos(phi) * std::cos(theta), std::cos(phi) * std::sin(theta), std::sin(phi)};
    return {p, n};
  }
  throw GeometryError("torus sampling failed");
}

LocalSample sample_capsule(double h, double r, Rng& rng) {
  const double cyl = 2 * kPi * r * 2 * h;
  const double sph = 4 * kPi * r * r;
  if (rng.uniform(0.0, cyl + sph) < cyl) {
    const double theta = rng.uniform(0.0, 2 * kPi);
    const Vec3 n{std::cos(theta), std::sin(theta), 0};
    Vec3 p = vscale(n, r);
    p[2] = rng.uniform(-h, h);
    return {p, n};
  }
  const Vec3 d = random_unit(rng);
  Vec3 p = vscale(d, r);
  p[2] += d[2] >= 0 ? h : -h;
  return {p, d};
}

LocalSample sample_triangle(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& n, Rng& rng) {
  const double su = std::sqrt(rng.uniform());
  const double v = rng.uniform();
  const double wa = 1 - su, wb = su * (1 - v), wc = su * v;
  return {{wa * a[0] + wb * b[0] + wc * c[0], wa * a[1] + wb * b[1] + wc * c[1],
           wa * a[2] + wb * b[2] + wc * c[2]},
          n};
}

LocalSample sample_tetra_uniform(const Tetra& t, Rng& rng) {
  const int face = static_cast<int>(rng.uniform_index(4));  // faces congruent
  std::array<Vec3, 3> v;
  int at = 0;
  for (int i = 0; i < 4; ++i) {
    if (i != face) v[at++] = t.verts[i];
  }
  return sample_triangle(v[0], v[1], v[2], t.face_normals[face], rng);
}

LocalSample sample_tetra_sharp(const Tetra& t, Rng& rng) {
  // 6 congruent edges; adjacent faces are those opposite the two non-edge verts
  static const int pairs[6][2] = {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};
  const int e = static_cast<int>(rng.uniform_index(6));
  const int ia = pairs[e][0], ib = pairs[e][1];
  int others[2], at = 0;
  for (int i = 0; i < 4; ++i) {
    if (i != ia && i != ib) others[at++] = i;
  }
  const int face = others[static_cast<int>(rng.uniform_index(2))];  // face opposite this vertex
  const int third = face == others[0] ? others[1] : others[0];      // in-face vertex off the edge
  const Vec3 a = t.verts[ia], b = t.verts[ib], c = t.verts[third];
  const Vec3 e_dir = vnormalize(vsub(b, a));
  const double edge_len = vnorm(vsub(b, a));
  const double tt = rng.uniform();
  const Vec3 edge_pt = vadd(a, vscale(vsub(b, a), tt));
  Vec3 inward = vsub(c, edge_pt);
  inward = vsub(inward, vscale(e_dir, vdot(inward, e_dir)));
  inward = vnormalize(inward);
  // travel is capped so the point stays on the (equilateral) face triangle:
  // the inward ray from parameter tt exits across a neighboring face edge
  // after min(tt, 1-tt) * L * tan(60 deg)
  const double exit_dist = std::min(tt, 1.0 - tt) * edge_len * std::sqrt(3.0);
  const double u = rng.uniform() * std::min(kSharpBand, exit_dist);
  return {vadd(edge_pt, vscale(inward, u)), t.face_normals[face]};
}

double tetra_area(const Tetra& t) {
  double area = 0;
  for (int f = 0; f < 4; ++f) {
    std::array<Vec3, 3> v;
    int at = 0;
    for (int i = 0; i < 4; ++i) {
      if (i != f) v[at++] = t.verts[i];
    }
    area += triangle_area(v[0], v[1], v[2]);
  }
  return area;
}

// uniform or sharp draw in the shape's local frame, with union/star occlusion
// handled by rejection against the other member
LocalSample draw_local(const Shape& shape, bool sharp, Rng& rng) {
  const auto& pr = shape.params;
  switch (shape.kind) {
    case ShapeKind::sphere:
      return sample_sphere(pr[0], rng);
    case ShapeKind::box: {
      const Vec3 h{pr[0], pr[1], pr[2]};
      return sharp ? sample_box_sharp(h, rng) : sample_box_uniform(h, rng);
    }
    case ShapeKind::torus:
      return sample_torus(pr[0], pr[1], rng);
    case ShapeKind::capsule:
      return sample_capsule(pr[0], pr[1], rng);
    case ShapeKind::union_two: {
      const UnionParams u = union_params(shape);
      const double area_box = 8 * (u.box_h[0] * u.box_h[1] + u.box_h[1] * u.box_h[2] +
                                   u.box_h[2] * u.box_h[0]);
      const double area_sph = 4 * kPi * u.sph_r * u.sph_r;
      for (int tries = 0; tries < kMaxRejectionTries; ++tries) {
        const bool from_box = sharp || rng.uniform(0.0, area_box + area_sph) < area_box;
        LocalSample s;
        if (from_box) {
          s = sharp ? sample_box_sharp(u.box_h, rng) : sample_box_uniform(u.box_h, rng);
          s.p = vadd(s.p, u.box_off);
          if (sdf_sphere(u.sph_r, vsub(s.p, u.sph_off)) < -1e-12) continue;  // occluded
        } else {
          s = sample_sphere(u.sph_r, rng);
          s.p = vadd(s.p, u.sph_off);
          if (sdf_box(u.box_h, vsub(s.p, u.box_off)) < -1e-12) continue;
        }
        return s;
      }
      throw GeometryError("union surface sampling failed (member fully occluded?)");
    }
    case ShapeKind::star: {
      const Tetra t1 = Tetra::make(pr[0], false);
      const Tetra t2 = Tetra::make(pr[0], true);
      for (int tries = 0; tries < kMaxRejectionTries; ++tries) {
        const bool first = rng.uniform() < 0.5;  // congruent members
        const Tetra& own = first ? t1 : t2;
        const Tetra& other = first ? t2 : t1;
        const LocalSample s = sharp ? sample_tetra_sharp(own, rng) : sample_tetra_uniform(own, rng);
        if (other.sdf(s.p) < -1e-12) continue;
        return s;
      }
      throw GeometryError("star surface sampling failed");
    }
  }
  throw GeometryError("unknown shape kind");
}

}  // namespace

SurfaceSample sample_surface(const Shape& shape, int64_t n, double sharp_fraction, uint64_t seed) {
  if (n < 1) throw GeometryError("sample_surface: need n >= 1");
  if (sharp_fraction < 0.0 || sharp_fraction >= 1.0) {
    throw GeometryError("sample_surface: sharp_fraction must be in [0,1)");
  }
  Rng rng(seed);
  int64_t n_uniform = static_cast<int64_t>(std::floor(n * (1.0 - sharp_fraction)));
  int64_t n_sharp = n - n_uniform;
  if (!has_sharp_edges(shape.kind)) {
    n_uniform = n;
    n_sharp = 0;
  }
  SurfaceSample out;
  out.positions.reserve(n);
  out.normals.reserve(n);
  out.sharp.reserve(n);
  for (int64_t i = 0; i < n; ++i) {
    const bool sharp = i >= n_uniform;
    const LocalSample s = draw_local(shape, sharp, rng);
    out.positions.push_back(vadd(quat_rotate(shape.rot, s.p), shape.center));
    out.normals.push_back(quat_rotate(shape.rot, s.n));
    out.sharp.push_back(sharp ? 1 : 0);
  }
  return out;
}

// ---- SDF grid ------------------------------------------------------------------------

SdfGrid eval_sdf_grid(const Shape& shape, int resolution) {
  if (resolution < 2) throw GeometryError("eval_sdf_grid: resolution must be >= 2");
  SdfGrid grid;
  grid.resolution = resolution;
  grid.values.resize(static_cast<size_t>(resolution) * resolution * resolution);
  const int G = resolution;
#pragma omp parallel for schedule(static)
  for (int ix = 0; ix < G; ++ix) {
    for (int iy = 0; iy < G; ++iy) {
      for (int iz = 0; iz < G; ++iz) {
        const Vec3 p{grid.coord(ix), grid.coord(iy), grid.coord(iz)};
        grid.values[(static_cast<size_t>(ix) * G + iy) * G + iz] = analytic_sdf(shape, p);
      }
    }
  }
  return grid;
}

// ---- mesh utilities ---------------------------------------------------------------------

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * vnorm(vcross(vsub(b, a), vsub(c, a)));
}

double mesh_area(const Mesh& mesh) {
  double area = 0;
  for (const auto& t : mesh.triangles) {
    area += triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
  }
  return area;
}

Coords sample_mesh_surface(const Mesh& mesh, int64_t n, uint64_t seed) {
  if (mesh.empty()) throw GeometryError("cannot sample an empty mesh");
  std::vector<double> cum(mesh.triangles.size());
  double total = 0;
  for (size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto& t = mesh.triangles[i];
    total += triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
    cum[i] = total;
  }
  if (total <= 0) throw GeometryError("mesh has zero surface area");
  Rng rng(seed);
  Coords out;
  out.reserve(n);
  for (int64_t i = 0; i < n; ++i) {
    const double pick = rng.uniform(0.0, total);
    const size_t ti = std::lower_bound(cum.begin(), cum.end(), pick) - cum.begin();
    const auto& t = mesh.triangles[std::min(ti, mesh.triangles.size() - 1)];
    const LocalSample s =
        sample_triangle(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]], {0, 0, 1}, rng);
    out.push_back(s.p);
  }
  return out;
}

// ---- file I/O -------------------------------------------------------------------------------

void write_obj(const std::string& path, const Mesh& mesh) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw GeometryError("cannot open " + path + " for writing");
  char buf[128];
  for (const auto& v : mesh.vertices) {
    std::snprintf(buf, sizeof(buf), "v %.9g %.9g %.9g\n", v[0], v[1], v[2]);
    f << buf;
  }
  for (const auto& t : mesh.triangles) {
    f << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
  }
  if (!f) throw GeometryError("short write to " + path);
}

Mesh read_obj(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw GeometryError("cannot open " + path);
  Mesh mesh;
  std::string line;
  while (std::getline(f, line)) {
    std::istringstream is(line);
    std::string tag;
    is >> tag;
    if (tag == "v") {
      Vec3 v;
      is >> v[0] >> v[1] >> v[2];
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::array<int32_t, 3> t;
      for (int i = 0; i < 3; ++i) {
        std::string tok;
        is >> tok;
        t[i] = static_cast<int32_t>(std::stol(tok.substr(0, tok.find('/')))) - 1;
        if (t[i] < 0 || t[i] >= static_cast<int32_t>(mesh.vertices.size())) {
          throw GeometryError(path + ": face index out of range");
        }
      }
      mesh.triangles.push_back(t);
    }
  }
  return mesh;
}

void write_ply(const std::string& path, const SurfaceSample& s) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw GeometryError("cannot open " + path + " for writing");
  f << "ply\nformat ascii 1.0\nelement vertex " << s.size() << "\n"
    << "property double x\nproperty double y\nproperty double z\n"
    << "property double nx\nproperty double ny\nproperty double nz\n"
    << "property uchar sharp\nend_header\n";
  char buf[256];
  for (size_t i = 0; i < s.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %.9g %.9g %.9g %d\n", s.positions[i][0],
                  s.positions[i][1], s.positions[i][2], s.normals[i][0], s.normals[i][1],
                  s.normals[i][2], static_cast<int>(s.sharp[i]));
    f << buf;
  }
  if (!f) throw GeometryError("short write to " + path);
}

}  // namespace vx
