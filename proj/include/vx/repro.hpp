#pragma once

// Fixed-seed reproduction scripts. Each one writes its artifacts (manifests,
// training logs, checkpoints, meshes, CSV tables, a summary.json) under a
// given directory and returns the measured numbers plus per-check outcomes,
// so the command-line tool and the acceptance gate share one implementation.
// All artifacts are deterministic functions of (script, seed); wall-clock
// readings never enter them.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace vx {

struct ReproResult {
  std::string name;
  bool passed = true;
  std::vector<std::string> checks;      // "ok: ..." / "FAIL: ..." lines
  std::map<std::string, double> stats;  // named measurements for callers
};

// metrics_oracle  — accelerated vs exhaustive distance agreement and a
//                   closed-form parallel-plane chamfer check
// smoke_vae       — short autoencoder training run must halve its loss
// smoke_dit       — short flow training run must halve its loss; also writes
//                   one sampled latent set and mesh
// tab3_trend      — jittered-query vs surface-point training compared under
//                   voxel-query evaluation across token budgets
// tokens_trend    — flow model trained at one token budget, sampled at
//                   several; reconstruction error must not degrade
const std::vector<std::string>& repro_script_names();

// Runs one script with its artifacts under out_dir (created if missing).
// Unknown names throw PipelineError.
ReproResult run_repro(const std::string& name, const std::string& out_dir, uint64_t seed);

}  // namespace vx
