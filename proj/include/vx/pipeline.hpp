#pragma once

// Orchestration over the shape, autoencoder, flow, and metrics layers:
// procedural corpus manifests with a deterministic train/held-out split,
// latent corpus construction, anchor budgeting, the two-stage generate path
// (coarse voxels -> latents -> mesh), and the reconstruction evaluation suite.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vx/flow.hpp"
#include "vx/geometry.hpp"
#include "vx/metrics.hpp"
#include "vx/vae.hpp"
#include "vx/voxset.hpp"

namespace vx {

class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- corpus -----------------------------------------------------------------

struct CorpusSpec {
  std::array<int64_t, kNumShapeKinds> counts{};  // instances per shape kind
  double sphere_radius_min = 0.3;
  double sphere_radius_max = 0.7;
  double holdout_fraction = 0.1;
};

struct ShapeRecord {
  int64_t index = 0;
  Shape shape;
  bool held_out = false;
};

// Deterministic per (spec, seed); the holdout split hashes (seed, index).
std::vector<ShapeRecord> gen_corpus(const CorpusSpec& spec, uint64_t seed);

// JSON-lines manifest; loading rejects unknown keys and malformed records.
void save_manifest(const std::string& path, const std::vector<ShapeRecord>& records);
std::vector<ShapeRecord> load_manifest(const std::string& path);

std::vector<ShapeRecord> split_of(const std::vector<ShapeRecord>& records, bool held_out);

// ---- anchors and latents -----------------------------------------------------

// Exactly `budget` anchors: subsamples when the set is larger, otherwise tops
// up with jittered copies of randomly chosen entries (amplitude one voxel
// half-width), which is how extra voxel queries are minted at test time.
AnchorSet anchors_at_budget(const AnchorSet& anchors, int64_t budget, uint64_t seed);

struct LatentCorpusOptions {
  int anchor_resolution = 16;  // ground-truth coarse voxelization
  int64_t surface_points = 4096;
  double sharp_fraction = 0.3;
};

// Posterior-mean latents at voxel-center anchors for each record.
std::vector<LatentSet> build_latent_corpus(const Vae& vae, const std::vector<ShapeRecord>& records,
                                           const LatentCorpusOptions& opt, uint64_t seed);

// ---- two-stage generation ------------------------------------------------------

struct GenerateOptions {
  int64_t budget = 256;
  int64_t steps = 50;
  double guidance_scale = 4.0;
  int64_t class_id = 0;
  int grid = 48;
  uint64_t seed = 0;
};

struct GenerateResult {
  Mesh mesh;
  LatentSet latents;
};

// Flow stage alone: budget the anchors, then integrate the velocity field.
LatentSet generate_latents(const FlowModel& dit, const AnchorSet& coarse_anchors,
                           const GenerateOptions& opt);

// Checkpoint compatibility (latent channel width) is checked before sampling.
GenerateResult generate(const FlowModel& dit, const Vae& vae, const AnchorSet& coarse_anchors,
                        const GenerateOptions& opt);

// ---- evaluation suite ----------------------------------------------------------

struct EvalCaseConfig {
  std::string label;
  int r_query = 32;          // anchor voxelization of the shape under test
  int64_t token_budget = 256;
  int g_mc = 48;             // reconstruction lattice
};

struct EvalSuiteOptions {
  std::vector<EvalCaseConfig> configs;
  int gt_grid = 96;               // reference mesh lattice
  int64_t cd_samples = 20000;     // evaluation samples per mesh
  double fscore_threshold = kDefaultFscoreThreshold;
  int64_t surface_points = 8192;  // encoder input cloud
  double sharp_fraction = 0.3;
  bool held_out_only = true;
};

// One aggregate row per config (means over evaluated shapes) preceded by a
// flagged row for every shape that failed; failures never abort the suite.
EvalReport eval_suite(const Vae& vae, const std::vector<ShapeRecord>& corpus,
                      const EvalSuiteOptions& opt, uint64_t seed);

// Reconstruction of one record through voxel-center anchors at a token budget;
// shared by the evaluation suite and the trend reproductions.
Mesh reconstruct_at_budget(const Vae& vae, const Shape& shape, const EvalCaseConfig& cfg,
                           const EvalSuiteOptions& opt, uint64_t seed);

}  // namespace vx
