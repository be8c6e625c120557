#include "vx/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vx/marching_cubes.hpp"

namespace vx {

namespace {

Shape random_sphere(Rng& rng, double rmin, double rmax) {
  Shape s;
  s.kind = ShapeKind::sphere;
  s.class_id = static_cast<int>(ShapeKind::sphere);
  s.rot = random_rotation(rng);
  s.params = {rng.uniform(rmin, rmax)};
  const double margin = 1.0 - kDomainMargin - bounding_radius(s);
  if (margin < 0) throw PipelineError("gen_corpus: sphere radius exceeds the domain margin");
  for (int a = 0; a < 3; ++a) s.center[a] = rng.uniform(-margin, margin);
  return s;
}

}  // namespace

std::vector<ShapeRecord> gen_corpus(const CorpusSpec& spec, uint64_t seed) {
  for (int64_t c : spec.counts) {
    if (c < 0) throw PipelineError("gen_corpus: counts must be >= 0");
  }
  if (!(spec.sphere_radius_min > 0.0) || spec.sphere_radius_min > spec.sphere_radius_max ||
      spec.sphere_radius_max > 1.0 - kDomainMargin) {
    throw PipelineError("gen_corpus: sphere radius range must satisfy 0 < min <= max <= " +
                        std::to_string(1.0 - kDomainMargin));
  }
  if (!(spec.holdout_fraction >= 0.0 && spec.holdout_fraction <= 1.0)) {
    throw PipelineError("gen_corpus: holdout_fraction must lie in [0,1]");
  }

  std::vector<ShapeRecord> records;
  int64_t index = 0;
  for (int k = 0; k < kNumShapeKinds; ++k) {
    const auto kind = static_cast<ShapeKind>(k);
    for (int64_t i = 0; i < spec.counts[static_cast<size_t>(k)]; ++i, ++index) {
      Rng rng(substream(seed, "corpus", static_cast<uint64_t>(index)));
      ShapeRecord rec;
      rec.index = index;
      rec.shape = kind == ShapeKind::sphere
                      ? random_sphere(rng, spec.sphere_radius_min, spec.sphere_radius_max)
                      : random_shape(kind, rng);
      const uint64_t h =
          fnv1a64("split:" + std::to_string(seed) + ":" + std::to_string(index));
      rec.held_out = static_cast<double>(h % 10000) < spec.holdout_fraction * 10000.0;
      records.push_back(std::move(rec));
    }
  }
  return records;
}

void save_manifest(const std::string& path, const std::vector<ShapeRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw PipelineError("save_manifest: cannot open " + path);
  for (const auto& rec : records) {
    nlohmann::json j;
    j["index"] = rec.index;
    j["kind"] = shape_kind_name(rec.shape.kind);
    j["class_id"] = rec.shape.class_id;
    j["center"] = rec.shape.center;
    j["rot"] = rec.shape.rot;
    j["params"] = rec.shape.params;
    j["split"] = rec.held_out ? "held" : "train";
    out << j.dump() << "\n";
  }
  if (!out) throw PipelineError("save_manifest: write failed for " + path);
}

std::vector<ShapeRecord> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PipelineError("load_manifest: cannot open " + path);
  static const std::set<std::string> known = {"index", "kind",   "class_id", "center",
                                              "rot",   "params", "split"};
  std::vector<ShapeRecord> records;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      for (const auto& item : j.items()) {
        if (known.find(item.key()) == known.end()) {
          throw PipelineError("unknown key '" + item.key() + "'");
        }
      }
      ShapeRecord rec;
      rec.index = j.at("index").get<int64_t>();
      rec.shape.kind = shape_kind_from_name(j.at("kind").get<std::string>());
      rec.shape.class_id = j.at("class_id").get<int>();
      rec.shape.center = j.at("center").get<Vec3>();
      rec.shape.rot = j.at("rot").get<Quat>();
      rec.shape.params = j.at("params").get<std::vector<double>>();
      const std::string split = j.at("split").get<std::string>();
      if (split != "train" && split != "held") throw PipelineError("bad split '" + split + "'");
      rec.held_out = split == "held";
      records.push_back(std::move(rec));
    } catch (const std::exception& e) {
      throw PipelineError("load_manifest: " + path + " line " + std::to_string(line_no) + ": " +
                          e.what());
    }
  }
  return records;
}

std::vector<ShapeRecord> split_of(const std::vector<ShapeRecord>& records, bool held_out) {
  std::vector<ShapeRecord> out;
  for (const auto& rec : records) {
    if (rec.held_out == held_out) out.push_back(rec);
  }
  return out;
}

AnchorSet anchors_at_budget(const AnchorSet& anchors, int64_t budget, uint64_t seed) {
  if (budget < 1) throw PipelineError("anchors_at_budget: budget must be >= 1");
  if (anchors.size() == 0) throw PipelineError("anchors_at_budget: empty anchor set");
  const int64_t m = static_cast<int64_t>(anchors.size());
  if (budget <= m) return subsample_anchors(anchors, budget, substream(seed, "anchor_subsample"));

  AnchorSet out = anchors;
  out.kind = AnchorKind::jittered_point;
  Rng rng(substream(seed, "anchor_topup"));
  const double amp = anchors.resolution > 0 ? 1.0 / anchors.resolution : 0.0;
  out.positions.reserve(static_cast<size_t>(budget));
  for (int64_t e = m; e < budget; ++e) {
    const Vec3& base = anchors.positions[rng.uniform_index(static_cast<size_t>(m))];
    Vec3 p;
    for (int a = 0; a < 3; ++a) {
      p[a] = std::clamp(base[a] + rng.uniform(-amp, amp), -1.0, 1.0);
    }
    out.positions.push_back(p);
  }
  return out;
}

std::vector<LatentSet> build_latent_corpus(const Vae& vae, const std::vector<ShapeRecord>& records,
                                           const LatentCorpusOptions& opt, uint64_t seed) {
  if (opt.anchor_resolution < 1) {
    throw PipelineError("build_latent_corpus: anchor_resolution must be >= 1");
  }
  NoGradGuard guard;
  std::vector<LatentSet> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    const SurfaceSample samples =
        sample_surface(rec.shape, opt.surface_points, opt.sharp_fraction,
                       substream(seed, "latent_surface", static_cast<uint64_t>(rec.index)));
    const AnchorSet anchors = voxel_queries(active_voxels(samples, opt.anchor_resolution));
    auto [mean_z, logvar_z] = vae.encode(samples, anchors);
    out.push_back(latent_set_from(mean_z, anchors, rec.shape.class_id));
  }
  return out;
}

LatentSet generate_latents(const FlowModel& dit, const AnchorSet& coarse_anchors,
                           const GenerateOptions& opt) {
  const AnchorSet anchors = anchors_at_budget(coarse_anchors, opt.budget, opt.seed);
  FlowSampleOptions so;
  so.steps = opt.steps;
  so.guidance_scale = opt.guidance_scale;
  so.class_id = opt.class_id;
  so.seed = substream(opt.seed, "generate_noise");
  return flow_sample(dit, anchors, so);
}

GenerateResult generate(const FlowModel& dit, const Vae& vae, const AnchorSet& coarse_anchors,
                        const GenerateOptions& opt) {
  if (dit.config().latent_channels != vae.config().latent_channels) {
    throw PipelineError("generate: checkpoint latent widths differ (flow " +
                        std::to_string(dit.config().latent_channels) + ", decoder " +
                        std::to_string(vae.config().latent_channels) + ")");
  }
  if (opt.grid < 2) throw PipelineError("generate: grid must be >= 2");
  GenerateResult result;
  result.latents = generate_latents(dit, coarse_anchors, opt);
  const SdfGrid grid =
      vae.decode_grid(latent_tensor(result.latents), result.latents.anchors, opt.grid);
  result.mesh = marching_cubes(grid);
  return result;
}

Mesh reconstruct_at_budget(const Vae& vae, const Shape& shape, const EvalCaseConfig& cfg,
                           const EvalSuiteOptions& opt, uint64_t seed) {
  if (cfg.r_query < 1 || cfg.g_mc < 2 || cfg.token_budget < 1) {
    throw PipelineError("reconstruct_at_budget: bad case config");
  }
  NoGradGuard guard;
  const SurfaceSample samples = sample_surface(shape, opt.surface_points, opt.sharp_fraction,
                                               substream(seed, "eval_surface"));
  AnchorSet anchors = voxel_queries(active_voxels(samples, cfg.r_query));
  anchors = anchors_at_budget(anchors, cfg.token_budget, substream(seed, "eval_budget"));
  auto [mean_z, logvar_z] = vae.encode(samples, anchors);
  const SdfGrid grid = vae.decode_grid(mean_z, anchors, cfg.g_mc);
  return marching_cubes(grid);
}

EvalReport eval_suite(const Vae& vae, const std::vector<ShapeRecord>& corpus,
                      const EvalSuiteOptions& opt, uint64_t seed) {
  EvalReport report;
  if (opt.configs.empty()) return report;

  std::vector<const ShapeRecord*> subjects;
  for (const auto& rec : corpus) {
    if (!opt.held_out_only || rec.held_out) subjects.push_back(&rec);
  }
  if (subjects.empty()) throw PipelineError("eval_suite: no shapes to evaluate");

  std::vector<Mesh> reference;
  reference.reserve(subjects.size());
  for (const auto* rec : subjects) {
    reference.push_back(marching_cubes(eval_sdf_grid(rec->shape, opt.gt_grid)));
  }

  for (const auto& cfg : opt.configs) {
    double cd_sum = 0.0, f1_sum = 0.0;
    int64_t ok = 0;
    std::vector<EvalRow> failures;
    for (size_t i = 0; i < subjects.size(); ++i) {
      const ShapeRecord& rec = *subjects[i];
      try {
        const Mesh mesh = reconstruct_at_budget(
            vae, rec.shape, cfg, opt, substream(seed, "eval_shape", static_cast<uint64_t>(rec.index)));
        const double cd = points_to_surface_cd(
            reference[i], mesh, opt.cd_samples,
            substream(seed, "eval_cd", static_cast<uint64_t>(rec.index)));
        const double f1 =
            fscore(reference[i], mesh, opt.cd_samples, opt.fscore_threshold,
                   substream(seed, "eval_f1", static_cast<uint64_t>(rec.index)));
        cd_sum += cd;
        f1_sum += f1;
        ++ok;
      } catch (const std::exception& e) {
        EvalRow row;
        row.label = cfg.label + "/shape" + std::to_string(rec.index) + ":failed";
        row.resolution = cfg.r_query;
        row.latent_size = cfg.token_budget;
        row.cd_e4 = std::numeric_limits<double>::quiet_NaN();
        row.f1_e2 = std::numeric_limits<double>::quiet_NaN();
        failures.push_back(std::move(row));
      }
    }
    for (auto& row : failures) report.rows.push_back(std::move(row));
    EvalRow row;
    row.label = cfg.label;
    row.resolution = cfg.r_query;
    row.latent_size = cfg.token_budget;
    row.cd_e4 = ok > 0 ? 1e4 * cd_sum / static_cast<double>(ok)
                       : std::numeric_limits<double>::quiet_NaN();
    row.f1_e2 = ok > 0 ? f1_sum / static_cast<double>(ok)
                       : std::numeric_limits<double>::quiet_NaN();
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace vx
