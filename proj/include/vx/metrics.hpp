#pragma once

// Reconstruction metrics between watertight meshes normalized to [-1,1]^3:
// points-to-surface Chamfer distance (mean unsigned distance, both
// directions summed) and the F-score at a distance threshold.
//
// Each mesh's evaluation samples are seeded from a content hash of the mesh
// mixed with the user seed, so both metrics are exactly symmetric in their
// two mesh arguments and reruns are bit-stable.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vx/geometry.hpp"

namespace vx {

struct MetricsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr int64_t kDefaultEvalSamples = 100000;
inline constexpr double kDefaultFscoreThreshold = 0.001;

// FNV-1a over vertex bit patterns and triangle indices
uint64_t mesh_content_hash(const Mesh& mesh);

// mean distance of gt samples to the pred surface plus the reverse, in
// domain units (multiply by 1e4 for reporting); `accelerated=false` runs the
// all-triangle reference scan
double points_to_surface_cd(const Mesh& gt, const Mesh& pred, int64_t n, uint64_t seed,
                            bool accelerated = true);

// harmonic mean of precision/recall at `threshold` (inclusive comparison),
// returned on the 0..100 scale; 0 when precision+recall is 0
double fscore(const Mesh& gt, const Mesh& pred, int64_t n, double threshold, uint64_t seed,
              bool accelerated = true);

struct EvalRow {
  std::string label;
  int resolution = 0;
  int64_t latent_size = 0;
  double cd_e4 = 0.0;  // points_to_surface_cd * 1e4
  double f1_e2 = 0.0;  // fscore (already 0..100)
};

struct EvalReport {
  std::vector<EvalRow> rows;
};

// header: label,resolution,latent_size,cd_e4,f1_e2 — byte-stable
std::string eval_report_csv(const EvalReport& report);
void save_eval_report_csv(const std::string& path, const EvalReport& report);

}  // namespace vx
