#include "vx/voxset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace vx {

namespace {

int cell_index(double coord, int resolution) {
  const int i = static_cast<int>(std::floor((coord + 1.0) * 0.5 * resolution));
  return std::clamp(i, 0, resolution - 1);
}

double sq_dist(const Vec3& a, const Vec3& b) {
  const Vec3 d = vsub(a, b);
  return vdot(d, d);
}

}  // namespace

ActiveVoxelSet active_voxels(const SurfaceSample& samples, int resolution) {
  if (resolution < 1) throw VoxsetError("active_voxels: resolution must be >= 1");
  if (samples.size() == 0) throw VoxsetError("active_voxels: empty sample set");
  ActiveVoxelSet av;
  av.resolution = resolution;
  av.indices.reserve(samples.size());
  for (const auto& p : samples.positions) {
    av.indices.push_back({cell_index(p[0], resolution), cell_index(p[1], resolution),
                          cell_index(p[2], resolution)});
  }
  std::sort(av.indices.begin(), av.indices.end());
  av.indices.erase(std::unique(av.indices.begin(), av.indices.end()), av.indices.end());
  return av;
}

AnchorSet voxel_queries(const ActiveVoxelSet& av) {
  if (av.indices.empty()) throw VoxsetError("voxel_queries: empty active voxel set");
  if (av.resolution < 1) throw VoxsetError("voxel_queries: bad resolution");
  AnchorSet anchors;
  anchors.resolution = av.resolution;
  anchors.kind = AnchorKind::voxel_center;
  anchors.positions.reserve(av.indices.size());
  const double w = 2.0 / av.resolution;
  for (const auto& idx : av.indices) {
    anchors.positions.push_back(
        {-1.0 + (idx[0] + 0.5) * w, -1.0 + (idx[1] + 0.5) * w, -1.0 + (idx[2] + 0.5) * w});
  }
  return anchors;
}

AnchorSet point_queries(const SurfaceSample& samples, int64_t m, uint64_t seed) {
  std::vector<Vec3> pool;
  pool.reserve(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    if (!samples.sharp[i]) pool.push_back(samples.positions[i]);
  }
  if (pool.empty()) throw VoxsetError("point_queries: no uniform samples to draw from");
  if (m < 1) throw VoxsetError("point_queries: need m >= 1");
  if (m > static_cast<int64_t>(pool.size())) {
    throw VoxsetError("point_queries: m exceeds the uniform sample count");
  }

  Rng rng(seed);
  const size_t n = pool.size();
  const size_t start = rng.uniform_index(n);

  AnchorSet anchors;
  anchors.kind = AnchorKind::surface_point;
  anchors.resolution = 0;
  anchors.positions.reserve(m);
  anchors.positions.push_back(pool[start]);

  std::vector<double> dist(n);
  for (size_t i = 0; i < n; ++i) dist[i] = sq_dist(pool[i], pool[start]);
  for (int64_t k = 1; k < m; ++k) {
    size_t best = 0;
    double best_d = -1.0;
    for (size_t i = 0; i < n; ++i) {
      if (dist[i] > best_d) {
        best_d = dist[i];
        best = i;
      }
    }
    anchors.positions.push_back(pool[best]);
    for (size_t i = 0; i < n; ++i) dist[i] = std::min(dist[i], sq_dist(pool[i], pool[best]));
  }
  return anchors;
}

AnchorSet jitter_queries(const AnchorSet& anchors, int64_t smallest_resolution, uint64_t seed) {
  if (smallest_resolution < 1) throw VoxsetError("jitter_queries: resolution must be >= 1");
  const double amp = 1.0 / static_cast<double>(smallest_resolution);
  Rng rng(seed);
  AnchorSet out;
  out.resolution = anchors.resolution;
  out.kind = AnchorKind::jittered_point;
  out.positions.reserve(anchors.size());
  for (const auto& p : anchors.positions) {
    Vec3 q;
    for (int a = 0; a < 3; ++a) q[a] = std::clamp(p[a] + rng.uniform(-amp, amp), -1.0, 1.0);
    out.positions.push_back(q);
  }
  return out;
}

std::vector<int64_t> subsample_indices(int64_t total, int64_t m, uint64_t seed) {
  if (m < 1) throw VoxsetError("subsample_indices: need m >= 1");
  if (total < 1) throw VoxsetError("subsample_indices: nothing to draw from");
  std::vector<int64_t> idx(total);
  for (int64_t i = 0; i < total; ++i) idx[i] = i;
  if (m >= total) return idx;

  // partial Fisher-Yates over the index array, then restore original order
  Rng rng(seed);
  for (int64_t i = 0; i < m; ++i) {
    const int64_t j = i + static_cast<int64_t>(rng.uniform_index(static_cast<size_t>(total - i)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

AnchorSet subsample_anchors(const AnchorSet& anchors, int64_t m, uint64_t seed) {
  const int64_t total = static_cast<int64_t>(anchors.size());
  if (m >= total && m >= 1) return anchors;
  const std::vector<int64_t> idx = subsample_indices(total, m, seed);

  AnchorSet out;
  out.resolution = anchors.resolution;
  out.kind = anchors.kind;
  out.positions.reserve(idx.size());
  for (int64_t i : idx) out.positions.push_back(anchors.positions[i]);
  return out;
}

void save_active_voxels_json(const std::string& path, const ActiveVoxelSet& av) {
  nlohmann::json j;
  j["resolution"] = av.resolution;
  auto& arr = j["indices"] = nlohmann::json::array();
  for (const auto& idx : av.indices) arr.push_back({idx[0], idx[1], idx[2]});
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw VoxsetError("cannot open " + path + " for writing");
  f << j.dump(2) << "\n";
}

ActiveVoxelSet load_active_voxels_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw VoxsetError("cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw VoxsetError("bad active-voxel file " + path + ": " + e.what());
  }
  ActiveVoxelSet av;
  av.resolution = j.at("resolution").get<int>();
  if (av.resolution < 1) throw VoxsetError("bad active-voxel file: resolution < 1");
  for (const auto& item : j.at("indices")) {
    if (!item.is_array() || item.size() != 3) {
      throw VoxsetError("bad active-voxel file: malformed index triple");
    }
    std::array<int, 3> idx{item[0].get<int>(), item[1].get<int>(), item[2].get<int>()};
    for (int a = 0; a < 3; ++a) {
      if (idx[a] < 0 || idx[a] >= av.resolution) {
        throw VoxsetError("bad active-voxel file: index out of range");
      }
    }
    av.indices.push_back(idx);
  }
  if (!std::is_sorted(av.indices.begin(), av.indices.end()) ||
      std::adjacent_find(av.indices.begin(), av.indices.end()) != av.indices.end()) {
    throw VoxsetError("bad active-voxel file: indices must be sorted and unique");
  }
  return av;
}

}  // namespace vx
