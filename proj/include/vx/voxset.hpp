#pragma once

// Sparse voxel structure over [-1,1]^3 and the anchor-query constructions
// built from it: voxel centers, farthest-point surface subsets, and the
// jittered variants that make one model serve many grid resolutions.

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vx/geometry.hpp"

namespace vx {

struct VoxsetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// sorted unique (i,j,k) cells of an R^3 grid that touch the shape surface
struct ActiveVoxelSet {
  int resolution = 0;
  std::vector<std::array<int, 3>> indices;

  size_t size() const { return indices.size(); }
};

enum class AnchorKind { voxel_center, jittered_point, surface_point };

struct AnchorSet {
  std::vector<Vec3> positions;
  int resolution = 0;  // grid resolution the anchors were derived from
  AnchorKind kind = AnchorKind::voxel_center;

  size_t size() const { return positions.size(); }
};

// voxel cells containing at least one sample position; boundary positions
// are assigned by floor with a clamp to the last cell
ActiveVoxelSet active_voxels(const SurfaceSample& samples, int resolution);

// anchor at the center of each active voxel, in index order
AnchorSet voxel_queries(const ActiveVoxelSet& av);

// farthest-point subsampling of the non-sharp sample positions; the start
// point is drawn uniformly from the pool under `seed`, ties break toward the
// lowest index
AnchorSet point_queries(const SurfaceSample& samples, int64_t m, uint64_t seed);

// independent per-coordinate uniform offsets in [-1/R, 1/R] (half of the
// 2/R voxel width at the smallest supported resolution R), clamped to the
// domain; the anchor resolution field is preserved
AnchorSet jitter_queries(const AnchorSet& anchors, int64_t smallest_resolution, uint64_t seed);

// uniform draw of min(m, total) sorted indices without replacement
std::vector<int64_t> subsample_indices(int64_t total, int64_t m, uint64_t seed);

// uniform subset without replacement keeping the original relative order;
// m >= size is the identity
AnchorSet subsample_anchors(const AnchorSet& anchors, int64_t m, uint64_t seed);

void save_active_voxels_json(const std::string& path, const ActiveVoxelSet& av);
ActiveVoxelSet load_active_voxels_json(const std::string& path);

}  // namespace vx
