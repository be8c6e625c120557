#include "vx/metrics.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include "vx/mesh_query.hpp"

namespace vx {

namespace {

uint64_t fnv1a(uint64_t h, const void* data, size_t len) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t sample_seed(const Mesh& mesh, uint64_t seed) {
  // golden-ratio mix keeps gt/pred streams decoupled from the raw user seed
  return mesh_content_hash(mesh) ^ (seed * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
}

// distances from each sampled point of `src` to the surface of `dst`;
// written element-wise so the later sequential reduction is order-stable
std::vector<double> sample_distances(const Mesh& src, const MeshDistanceQuery& dst, int64_t n,
                                     uint64_t seed, bool accelerated) {
  const auto pts = sample_mesh_surface(src, n, sample_seed(src, seed));
  std::vector<double> d(pts.size());
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < static_cast<int64_t>(pts.size()); ++i) {
    d[i] = accelerated ? dst.unsigned_distance(pts[i]) : dst.unsigned_distance_brute(pts[i]);
  }
  return d;
}

void check_inputs(const Mesh& gt, const Mesh& pred, int64_t n) {
  if (gt.empty() || pred.empty()) throw MetricsError("metrics need nonempty meshes");
  if (n < 1) throw MetricsError("metrics need n >= 1 samples");
}

}  // namespace

uint64_t mesh_content_hash(const Mesh& mesh) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& v : mesh.vertices) h = fnv1a(h, v.data(), sizeof(double) * 3);
  for (const auto& t : mesh.triangles) h = fnv1a(h, t.data(), sizeof(int32_t) * 3);
  return h;
}

double points_to_surface_cd(const Mesh& gt, const Mesh& pred, int64_t n, uint64_t seed,
                            bool accelerated) {
  check_inputs(gt, pred, n);
  const MeshDistanceQuery q_gt(gt), q_pred(pred);
  const auto d_gp = sample_distances(gt, q_pred, n, seed, accelerated);
  const auto d_pg = sample_distances(pred, q_gt, n, seed, accelerated);
  double m_gp = 0, m_pg = 0;
  for (double d : d_gp) m_gp += d;
  for (double d : d_pg) m_pg += d;
  return m_gp / static_cast<double>(n) + m_pg / static_cast<double>(n);
}

double fscore(const Mesh& gt, const Mesh& pred, int64_t n, double threshold, uint64_t seed,
              bool accelerated) {
  check_inputs(gt, pred, n);
  if (threshold < 0) throw MetricsError("fscore threshold must be >= 0");
  const MeshDistanceQuery q_gt(gt), q_pred(pred);
  const auto d_pg = sample_distances(pred, q_gt, n, seed, accelerated);  // precision side
  const auto d_gp = sample_distances(gt, q_pred, n, seed, accelerated);  // recall side
  int64_t hit_p = 0, hit_r = 0;
  for (double d : d_pg) hit_p += d <= threshold ? 1 : 0;
  for (double d : d_gp) hit_r += d <= threshold ? 1 : 0;
  const double precision = static_cast<double>(hit_p) / static_cast<double>(n);
  const double recall = static_cast<double>(hit_r) / static_cast<double>(n);
  if (precision + recall == 0.0) return 0.0;
  return 100.0 * (2.0 * precision * recall) / (precision + recall);
}

std::string eval_report_csv(const EvalReport& report) {
  std::string out = "label,resolution,latent_size,cd_e4,f1_e2\n";
  char buf[256];
  for (const auto& row : report.rows) {
    std::string label = row.label;
    for (char& c : label) {
      if (c == ',' || c == '\n') c = ';';
    }
    std::snprintf(buf, sizeof(buf), ",%d,%lld,%.6g,%.6g\n", row.resolution,
                  static_cast<long long>(row.latent_size), row.cd_e4, row.f1_e2);
    out += label;
    out += buf;
  }
  return out;
}

void save_eval_report_csv(const std::string& path, const EvalReport& report) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw MetricsError("cannot open " + path + " for writing");
  f << eval_report_csv(report);
}

}  // namespace vx
