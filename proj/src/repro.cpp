#include "vx/repro.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vx/metrics.hpp"
#include "vx/pipeline.hpp"

namespace vx {
namespace {

using nlohmann::json;

void note(ReproResult& res, bool ok, const std::string& msg) {
  res.checks.push_back((ok ? "ok: " : "FAIL: ") + msg);
  res.passed = res.passed && ok;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PipelineError("repro: cannot open " + path);
  out << text;
  if (!out.flush()) throw PipelineError("repro: write failed for " + path);
}

// summary.json carries the measured numbers and check lines; keys are sorted
// by the serializer, so reruns are byte-identical.
void write_summary(const std::string& dir, const ReproResult& res) {
  json j;
  j["script"] = res.name;
  j["passed"] = res.passed;
  j["checks"] = res.checks;
  json stats = json::object();
  for (const auto& [k, v] : res.stats) stats[k] = v;
  j["stats"] = stats;
  write_text(dir + "/summary.json", j.dump(2) + "\n");
}

// Mean of column_a (+ column_b when >= 0) over rows [from, to) of a CSV.
double csv_mean(const std::string& path, size_t col_a, int col_b, int64_t from, int64_t to) {
  std::ifstream in(path);
  if (!in) throw PipelineError("repro: cannot open log " + path);
  std::string line;
  std::getline(in, line);  // header
  std::vector<double> vals;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    double v = std::stod(cells.at(col_a));
    if (col_b >= 0) v += std::stod(cells.at(static_cast<size_t>(col_b)));
    vals.push_back(v);
  }
  if (from < 0) from += static_cast<int64_t>(vals.size());
  if (to <= 0) to += static_cast<int64_t>(vals.size());
  double sum = 0;
  int64_t n = 0;
  for (int64_t i = from; i < to && i < static_cast<int64_t>(vals.size()); ++i, ++n) sum += vals[i];
  if (n == 0) throw PipelineError("repro: empty log window in " + path);
  return sum / static_cast<double>(n);
}

std::vector<Shape> shapes_of(const std::vector<ShapeRecord>& records) {
  std::vector<Shape> shapes;
  shapes.reserve(records.size());
  for (const auto& rec : records) shapes.push_back(rec.shape);
  return shapes;
}

VaeConfig small_vae_config() {
  VaeConfig cfg;
  cfg.latent_channels = 8;
  cfg.model_dim = 48;
  cfg.num_heads = 2;
  cfg.depth_enc = 1;
  cfg.depth_dec = 1;
  cfg.fourier_bands = 4;
  return cfg;
}

VaeConfig desk_vae_config() {
  VaeConfig cfg;
  cfg.latent_channels = 16;
  cfg.model_dim = 96;
  cfg.num_heads = 2;
  cfg.depth_enc = 2;
  cfg.depth_dec = 3;
  cfg.fourier_bands = 6;
  return cfg;
}

// ---- metrics_oracle ---------------------------------------------------------

ReproResult metrics_oracle(const std::string& dir, uint64_t seed) {
  ReproResult res{"metrics_oracle"};
  Rng rng(substream(seed, "metrics_oracle"));

  // 50 random closed meshes small enough for the exhaustive scan.
  std::vector<Mesh> meshes;
  int64_t attempts = 0;
  while (meshes.size() < 50 && attempts < 1000) {
    const auto kind = static_cast<ShapeKind>(attempts % kNumShapeKinds);
    ++attempts;
    Shape s = random_shape(kind, rng);
    Mesh m = marching_cubes(eval_sdf_grid(s, 12));
    if (!m.empty() && m.triangles.size() <= 500) meshes.push_back(std::move(m));
  }
  note(res, meshes.size() == 50, "collected 50 random meshes with at most 500 triangles");

  std::string csv = "pair,cd_brute,cd_accel,cd_diff,f1_brute,f1_accel,f1_diff\n";
  double max_cd_diff = 0, max_f1_diff = 0;
  for (size_t p = 0; p + 1 < meshes.size(); p += 2) {
    const Mesh& gt = meshes[p];
    const Mesh& pred = meshes[p + 1];
    const uint64_t s_cd = substream(seed, "oracle_cd", static_cast<int64_t>(p));
    const uint64_t s_f1 = substream(seed, "oracle_f1", static_cast<int64_t>(p));
    const double cd_b = points_to_surface_cd(gt, pred, 2000, s_cd, false);
    const double cd_a = points_to_surface_cd(gt, pred, 2000, s_cd, true);
    const double f1_b = fscore(gt, pred, 2000, kDefaultFscoreThreshold, s_f1, false);
    const double f1_a = fscore(gt, pred, 2000, kDefaultFscoreThreshold, s_f1, true);
    max_cd_diff = std::max(max_cd_diff, std::abs(cd_a - cd_b));
    max_f1_diff = std::max(max_f1_diff, std::abs(f1_a - f1_b));
    char row[256];
    std::snprintf(row, sizeof row, "%zu,%.17g,%.17g,%.3g,%.17g,%.17g,%.3g\n", p / 2, cd_b, cd_a,
                  std::abs(cd_a - cd_b), f1_b, f1_a, std::abs(f1_a - f1_b));
    csv += row;
  }
  write_text(dir + "/oracle_pairs.csv", csv);
  note(res, max_cd_diff <= 1e-12,
       "accelerated chamfer matches the exhaustive scan (max |diff| " + num(max_cd_diff) +
           " <= 1e-12)");
  note(res, max_f1_diff <= 1e-9,
       "accelerated f-score matches the exhaustive scan (max |diff| " + num(max_f1_diff) +
           " <= 1e-9)");

  // Two parallel unit squares a known distance apart: every sample point on
  // either square projects straight onto the other, so the chamfer distance
  // is exactly twice the gap.
  const double gap = 0.01;
  Mesh a, b;
  a.vertices = {{-0.5, -0.5, 0}, {0.5, -0.5, 0}, {0.5, 0.5, 0}, {-0.5, 0.5, 0}};
  a.triangles = {{0, 1, 2}, {0, 2, 3}};
  b = a;
  for (auto& v : b.vertices) v[2] = gap;
  const double plane_cd = points_to_surface_cd(a, b, 20000, substream(seed, "oracle_planes"), true);
  note(res, std::abs(plane_cd - 2 * gap) <= 0.01 * 2 * gap,
       "parallel planes " + num(gap) + " apart give chamfer " + num(plane_cd) +
           " (closed form 0.02, tolerance 1%)");

  res.stats["max_cd_diff"] = max_cd_diff;
  res.stats["max_f1_diff"] = max_f1_diff;
  res.stats["plane_cd"] = plane_cd;
  write_summary(dir, res);
  return res;
}

// ---- smoke_vae --------------------------------------------------------------

ReproResult smoke_vae(const std::string& dir, uint64_t seed) {
  ReproResult res{"smoke_vae"};
  CorpusSpec spec;
  spec.counts = {2, 1, 1, 2, 1, 1};
  spec.holdout_fraction = 0.0;
  auto records = gen_corpus(spec, substream(seed, "smoke_vae_corpus"));
  save_manifest(dir + "/corpus.jsonl", records);

  Vae vae(small_vae_config(), substream(seed, "smoke_vae_init"));
  VaeTrainOptions opt;
  opt.steps = 300;
  opt.lr = 2e-3;
  opt.points_per_shape = 256;
  opt.anchor_pool = 128;
  opt.token_budget = 64;
  opt.sdf_queries = 256;
  opt.log_csv = dir + "/train.csv";
  auto tr = train_vae(vae, shapes_of(records), opt, substream(seed, "smoke_vae_train"));
  vae.save(dir + "/vae.vxst");

  note(res, !tr.aborted_non_finite, "training stayed finite for 300 steps");
  const double head = csv_mean(opt.log_csv, 1, 2, 0, 30);    // recon_near + recon_vol
  const double tail = csv_mean(opt.log_csv, 1, 2, -30, 0);
  note(res, tail < 0.5 * head, "reconstruction loss halved (first 30 steps " + num(head) +
                                   ", last 30 steps " + num(tail) + ")");
  res.stats["head_loss"] = head;
  res.stats["tail_loss"] = tail;
  write_summary(dir, res);
  return res;
}

// ---- smoke_dit --------------------------------------------------------------

ReproResult smoke_dit(const std::string& dir, uint64_t seed) {
  ReproResult res{"smoke_dit"};
  CorpusSpec spec;
  spec.counts = {1, 1, 1, 0, 1, 1};
  spec.holdout_fraction = 0.0;
  auto records = gen_corpus(spec, substream(seed, "smoke_dit_corpus"));
  save_manifest(dir + "/corpus.jsonl", records);

  Vae vae(small_vae_config(), substream(seed, "smoke_dit_vae_init"));
  VaeTrainOptions vopt;
  vopt.steps = 200;
  vopt.lr = 2e-3;
  vopt.points_per_shape = 256;
  vopt.anchor_pool = 128;
  vopt.token_budget = 64;
  vopt.sdf_queries = 256;
  vopt.log_csv = dir + "/vae_train.csv";
  auto vres = train_vae(vae, shapes_of(records), vopt, substream(seed, "smoke_dit_vae_train"));
  vae.save(dir + "/vae.vxst");
  note(res, !vres.aborted_non_finite, "autoencoder pre-training stayed finite");

  LatentCorpusOptions lopt;
  lopt.anchor_resolution = 12;
  lopt.surface_points = 512;
  auto latents = build_latent_corpus(vae, records, lopt, substream(seed, "smoke_dit_latents"));

  FlowConfig fc;
  fc.latent_channels = 8;
  fc.model_dim = 48;
  fc.num_heads = 2;
  fc.depth = 2;
  fc.num_classes = 6;
  fc.cfg_dropout_p = 0.1;
  fc.token_schedule = {16};
  FlowModel dit(fc, substream(seed, "smoke_dit_init"));
  FlowTrainOptions fopt;
  fopt.steps_per_stage = 2000;
  fopt.batch_size = 2;
  fopt.lr_start = 1e-3;
  fopt.lr_end = 1e-3;
  fopt.log_csv = dir + "/dit_train.csv";
  auto fres = train_flow(dit, latents, fopt, substream(seed, "smoke_dit_train"));
  dit.save(dir + "/dit.vxst");
  note(res, !fres.aborted_non_finite, "flow training stayed finite for 2000 steps");

  const double head = csv_mean(fopt.log_csv, 3, -1, 0, 50);
  const double tail = csv_mean(fopt.log_csv, 3, -1, -50, 0);
  note(res, tail < 0.5 * head, "flow loss halved (first 50 steps " + num(head) +
                                   ", last 50 steps " + num(tail) + ")");

  // One end-to-end sample as an inspectable artifact.
  auto samples =
      sample_surface(records[0].shape, 512, 0.3, substream(seed, "smoke_dit_anchor"));
  auto anchors = voxel_queries(active_voxels(samples, 12));
  GenerateOptions gopt;
  gopt.budget = 16;
  gopt.steps = 12;
  gopt.guidance_scale = 1.5;
  gopt.class_id = records[0].shape.class_id;
  gopt.grid = 16;
  gopt.seed = substream(seed, "smoke_dit_sample");
  auto gen = generate(dit, vae, anchors, gopt);
  write_obj(dir + "/sample.obj", gen.mesh);
  save_latent_set(dir + "/sample.vxst", gen.latents);
  note(res, gen.latents.size() == 16, "sampler produced the requested 16 latent tokens");

  res.stats["head_loss"] = head;
  res.stats["tail_loss"] = tail;
  res.stats["sample_triangles"] = static_cast<double>(gen.mesh.triangles.size());
  write_summary(dir, res);
  return res;
}

// ---- tab3_trend -------------------------------------------------------------

// Two identically initialized autoencoders trained on the same data stream,
// one with jittered point queries and one with plain surface points, then
// both evaluated with voxel-center queries across token budgets.
ReproResult tab3_trend(const std::string& dir, uint64_t seed) {
  ReproResult res{"tab3_trend"};
  CorpusSpec spec;
  spec.counts = {34, 34, 33, 33, 33, 33};  // 200 shapes
  spec.holdout_fraction = 0.1;
  auto records = gen_corpus(spec, substream(seed, "tab3_corpus"));
  save_manifest(dir + "/corpus.jsonl", records);
  auto train_shapes = shapes_of(split_of(records, false));
  const int64_t held = static_cast<int64_t>(split_of(records, true).size());
  note(res, held >= 5, "holdout split kept " + std::to_string(held) + " shapes for evaluation");

  const uint64_t init = substream(seed, "tab3_init");
  const uint64_t train_seed = substream(seed, "tab3_train");
  Vae vae_jitter(desk_vae_config(), init);
  Vae vae_point(desk_vae_config(), init);

  VaeTrainOptions topt;
  topt.steps = 2400;
  topt.lr = 3e-4;
  topt.points_per_shape = 768;
  topt.anchor_pool = 512;
  topt.token_budget = 192;
  topt.sdf_queries = 512;

  topt.strategy = QueryStrategy::jittered_point;
  topt.log_csv = dir + "/vae_jitter.csv";
  topt.checkpoint_path = dir + "/vae_jitter.vxst";
  topt.save_every = 800;
  auto rj = train_vae(vae_jitter, train_shapes, topt, train_seed);
  vae_jitter.save(dir + "/vae_jitter.vxst");
  note(res, !rj.aborted_non_finite, "jittered-query training stayed finite");

  topt.strategy = QueryStrategy::surface_point;
  topt.log_csv = dir + "/vae_point.csv";
  topt.checkpoint_path = dir + "/vae_point.vxst";
  auto rp = train_vae(vae_point, train_shapes, topt, train_seed);
  vae_point.save(dir + "/vae_point.vxst");
  note(res, !rp.aborted_non_finite, "surface-point training stayed finite");

  EvalSuiteOptions eopt;
  eopt.gt_grid = 96;
  eopt.cd_samples = 20000;
  eopt.surface_points = 8192;
  const uint64_t eval_seed = substream(seed, "tab3_eval");
  eopt.configs = {{"jitter256", 32, 256, 48}, {"jitter512", 32, 512, 48},
                  {"jitter1024", 32, 1024, 48}};
  auto report = eval_suite(vae_jitter, records, eopt, eval_seed);
  eopt.configs = {{"point512", 32, 512, 48}};
  auto point_report = eval_suite(vae_point, records, eopt, eval_seed);
  report.rows.insert(report.rows.end(), point_report.rows.begin(), point_report.rows.end());
  save_eval_report_csv(dir + "/eval.csv", report);

  int64_t failures = 0;
  std::map<std::string, const EvalRow*> agg;
  for (const auto& row : report.rows) {
    if (row.label.find("failed") != std::string::npos) {
      ++failures;
    } else {
      agg[row.label] = &row;
    }
  }
  note(res, failures == 0, "every held-out reconstruction succeeded (" +
                               std::to_string(failures) + " failures)");
  const bool have_all = agg.count("jitter256") && agg.count("jitter512") &&
                        agg.count("jitter1024") && agg.count("point512");
  note(res, have_all, "all four evaluation rows present");
  if (have_all) {
    const double j256 = agg["jitter256"]->cd_e4;
    const double j512 = agg["jitter512"]->cd_e4;
    const double j1024 = agg["jitter1024"]->cd_e4;
    const double p512 = agg["point512"]->cd_e4;
    res.stats["cd_jitter256"] = j256;
    res.stats["cd_jitter512"] = j512;
    res.stats["cd_jitter1024"] = j1024;
    res.stats["cd_point512"] = p512;
    res.stats["f1_jitter512"] = agg["jitter512"]->f1_e2;
    res.stats["f1_point512"] = agg["point512"]->f1_e2;
    note(res, p512 >= 1.05 * j512,
         "jittered queries beat surface-point queries under voxel evaluation by >= 5% (point " +
             num(p512) + " vs jitter " + num(j512) + ")");
    note(res, j256 >= j512 && j512 >= j1024 && j256 > j1024,
         "chamfer improves with the token budget (" + num(j256) + " -> " + num(j512) + " -> " +
             num(j1024) + ")");
  }

  write_summary(dir, res);
  return res;
}

// ---- tokens_trend -----------------------------------------------------------

// A flow model trained on a progressive token schedule is sampled with more
// tokens than its largest training budget; reconstruction error must not
// degrade. Generation anchors come from a voxelization dense enough that every
// budget is a strict subset (no jittered top-up), so the comparison isolates
// coverage scaling.
ReproResult tokens_trend(const std::string& dir, uint64_t seed) {
  ReproResult res{"tokens_trend"};
  CorpusSpec spec;
  spec.counts = {10, 10, 10, 10, 10, 10};
  spec.holdout_fraction = 0.1;
  auto records = gen_corpus(spec, substream(seed, "tokens_corpus"));
  save_manifest(dir + "/corpus.jsonl", records);
  auto train_records = split_of(records, false);
  auto held = split_of(records, true);
  note(res, held.size() >= 3, "holdout split kept " + std::to_string(held.size()) + " shapes");

  Vae vae(desk_vae_config(), substream(seed, "tokens_vae_init"));
  VaeTrainOptions vopt;
  vopt.steps = 2000;
  vopt.lr = 3e-4;
  vopt.points_per_shape = 768;
  vopt.anchor_pool = 512;
  vopt.token_budget = 192;
  vopt.sdf_queries = 512;
  vopt.log_csv = dir + "/vae_train.csv";
  vopt.checkpoint_path = dir + "/vae.vxst";
  vopt.save_every = 800;
  auto vres = train_vae(vae, shapes_of(train_records), vopt, substream(seed, "tokens_vae_train"));
  vae.save(dir + "/vae.vxst");
  note(res, !vres.aborted_non_finite, "autoencoder training stayed finite");

  LatentCorpusOptions lopt;
  lopt.anchor_resolution = 32;
  lopt.surface_points = 4096;
  auto latents = build_latent_corpus(vae, train_records, lopt, substream(seed, "tokens_latents"));

  FlowConfig fc;
  fc.latent_channels = 16;
  fc.model_dim = 120;
  fc.num_heads = 4;  // head dim 30, divisible by 6
  fc.depth = 3;
  fc.num_classes = 6;
  fc.cfg_dropout_p = 0.1;
  fc.token_schedule = {64, 128};
  FlowModel dit(fc, substream(seed, "tokens_dit_init"));
  FlowTrainOptions fopt;
  fopt.steps_per_stage = 1600;
  fopt.batch_size = 2;
  fopt.lr_start = 5e-4;
  fopt.lr_end = 1e-4;
  fopt.log_csv = dir + "/dit_train.csv";
  fopt.checkpoint_path = dir + "/dit.vxst";
  fopt.save_every = 700;
  auto fres = train_flow(dit, latents, fopt, substream(seed, "tokens_dit_train"));
  dit.save(dir + "/dit.vxst");
  note(res, !fres.aborted_non_finite, "flow training stayed finite");

  const std::vector<int64_t> budgets = {64, 128, 256};
  std::string csv = "budget,shape,cd_e4,f1_e2\n";
  std::map<int64_t, double> cd_sum, f1_sum;
  int64_t empty_meshes = 0;
  for (size_t i = 0; i < held.size(); ++i) {
    const Shape& shape = held[i].shape;
    Mesh gt = marching_cubes(eval_sdf_grid(shape, 96));
    auto samples = sample_surface(shape, 4096, 0.3,
                                  substream(seed, "tokens_anchor", static_cast<int64_t>(i)));
    auto anchors = voxel_queries(active_voxels(samples, 32));
    for (size_t k = 0; k < budgets.size(); ++k) {
      const int64_t b = budgets[k];
      const int64_t tag = static_cast<int64_t>(i) * 16 + static_cast<int64_t>(k);
      GenerateOptions gopt;
      gopt.budget = b;
      gopt.steps = 50;
      gopt.guidance_scale = 2.0;
      gopt.class_id = shape.class_id;
      gopt.grid = 40;
      gopt.seed = substream(seed, "tokens_gen", tag);
      auto gen = generate(dit, vae, anchors, gopt);
      if (i == 0) {
        char name[64];
        std::snprintf(name, sizeof name, "/sample_%03lld.obj", static_cast<long long>(b));
        write_obj(dir + name, gen.mesh);
      }
      if (gen.mesh.empty()) {
        ++empty_meshes;
        continue;
      }
      const double cd =
          1e4 * points_to_surface_cd(gt, gen.mesh, 20000, substream(seed, "tokens_cd", tag), true);
      const double f1 = fscore(gt, gen.mesh, 20000, kDefaultFscoreThreshold,
                               substream(seed, "tokens_f1", tag), true);
      cd_sum[b] += cd;
      f1_sum[b] += f1;
      char row[128];
      std::snprintf(row, sizeof row, "%lld,%zu,%.6g,%.6g\n", static_cast<long long>(b), i, cd, f1);
      csv += row;
    }
  }
  note(res, empty_meshes == 0, "every sampled mesh is non-empty (" +
                                   std::to_string(empty_meshes) + " empty)");
  const double n = static_cast<double>(held.size());
  for (int64_t b : budgets) {
    char row[128];
    std::snprintf(row, sizeof row, "%lld,mean,%.6g,%.6g\n", static_cast<long long>(b),
                  cd_sum[b] / n, f1_sum[b] / n);
    csv += row;
  }
  write_text(dir + "/tokens.csv", csv);

  if (empty_meshes == 0) {
    const double cd64 = cd_sum[64] / n, cd128 = cd_sum[128] / n, cd256 = cd_sum[256] / n;
    res.stats["cd_64"] = cd64;
    res.stats["cd_128"] = cd128;
    res.stats["cd_256"] = cd256;
    note(res, cd256 <= cd64,
         "sampling 2x the largest training token budget does not degrade chamfer (" + num(cd64) +
             " at 64 vs " + num(cd256) + " at 256)");
  }

  write_summary(dir, res);
  return res;
}

}  // namespace

const std::vector<std::string>& repro_script_names() {
  static const std::vector<std::string> names = {"metrics_oracle", "smoke_vae", "smoke_dit",
                                                 "tab3_trend", "tokens_trend"};
  return names;
}

ReproResult run_repro(const std::string& name, const std::string& out_dir, uint64_t seed) {
  std::filesystem::create_directories(out_dir);
  if (name == "metrics_oracle") return metrics_oracle(out_dir, seed);
  if (name == "smoke_vae") return smoke_vae(out_dir, seed);
  if (name == "smoke_dit") return smoke_dit(out_dir, seed);
  if (name == "tab3_trend") return tab3_trend(out_dir, seed);
  if (name == "tokens_trend") return tokens_trend(out_dir, seed);
  std::string known;
  for (const auto& n : repro_script_names()) known += " " + n;
  throw PipelineError("unknown repro script '" + name + "'; known:" + known);
}

}  // namespace vx
