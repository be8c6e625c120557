#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "vx/pipeline.hpp"

using vx::AnchorKind;
using vx::AnchorSet;
using vx::CorpusSpec;
using vx::FlowConfig;
using vx::FlowModel;
using vx::PipelineError;
using vx::Shape;
using vx::ShapeKind;
using vx::ShapeRecord;
using vx::Tensor;
using vx::Vae;
using vx::VaeConfig;

namespace {

VaeConfig tiny_vae_config(int64_t channels = 8) {
  VaeConfig cfg;
  cfg.latent_channels = channels;
  cfg.model_dim = 48;
  cfg.num_heads = 2;
  cfg.depth_enc = 1;
  cfg.depth_dec = 1;
  cfg.fourier_bands = 2;
  cfg.smallest_resolution = 16;
  return cfg;
}

FlowConfig tiny_flow_config(int64_t channels = 8) {
  FlowConfig cfg;
  cfg.latent_channels = channels;
  cfg.model_dim = 48;
  cfg.num_heads = 2;  // head dim 24, divisible by 6
  cfg.depth = 2;
  cfg.num_classes = 6;
  cfg.token_schedule = {8};
  return cfg;
}

CorpusSpec spec_with_counts(std::array<int64_t, vx::kNumShapeKinds> counts) {
  CorpusSpec spec;
  spec.counts = counts;
  return spec;
}

std::string manifest_string(const std::vector<ShapeRecord>& records) {
  const std::string path = "test_pipeline_manifest_tmp.jsonl";
  vx::save_manifest(path, records);
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  std::remove(path.c_str());
  return buf.str();
}

AnchorSet sphere_voxel_anchors(int resolution, uint64_t seed) {
  Shape s;
  s.kind = ShapeKind::sphere;
  s.params = {0.5};
  auto samples = vx::sample_surface(s, 512, 0.0, seed);
  return vx::voxel_queries(vx::active_voxels(samples, resolution));
}

}  // namespace

TEST_CASE("corpus generation is deterministic and honors counts") {
  auto spec = spec_with_counts({3, 2, 1, 0, 2, 1});
  auto records = vx::gen_corpus(spec, 11);
  REQUIRE(records.size() == 9);
  // Indices are sequential and kinds appear grouped in declaration order.
  std::array<int64_t, vx::kNumShapeKinds> seen{};
  for (size_t i = 0; i < records.size(); ++i) {
    CHECK(records[i].index == static_cast<int64_t>(i));
    seen[static_cast<size_t>(records[i].shape.kind)]++;
    CHECK(records[i].shape.class_id == static_cast<int64_t>(records[i].shape.kind));
  }
  CHECK(seen == spec.counts);

  auto again = vx::gen_corpus(spec, 11);
  CHECK(manifest_string(again) == manifest_string(records));
  auto other = vx::gen_corpus(spec, 12);
  CHECK(manifest_string(other) != manifest_string(records));
}

TEST_CASE("all-zero counts produce an empty corpus") {
  auto records = vx::gen_corpus(CorpusSpec{}, 1);
  CHECK(records.empty());
  const std::string path = "test_pipeline_empty.jsonl";
  vx::save_manifest(path, records);
  auto loaded = vx::load_manifest(path);
  CHECK(loaded.empty());
  std::remove(path.c_str());
}

TEST_CASE("sphere radii honor the configured range and the domain margin") {
  auto spec = spec_with_counts({100, 0, 0, 0, 0, 0});
  spec.sphere_radius_min = 0.3;
  spec.sphere_radius_max = 0.7;
  auto records = vx::gen_corpus(spec, 21);
  REQUIRE(records.size() == 100);
  double lo = 1.0, hi = 0.0;
  for (const auto& rec : records) {
    REQUIRE(rec.shape.kind == ShapeKind::sphere);
    const double r = rec.shape.params.at(0);
    CHECK(r >= 0.3);
    CHECK(r <= 0.7);
    lo = std::min(lo, r);
    hi = std::max(hi, r);
    for (double c : {rec.shape.center[0], rec.shape.center[1], rec.shape.center[2]}) {
      CHECK(std::abs(c) <= 1.0 - vx::kDomainMargin - r + 1e-12);
    }
  }
  // The draw actually spans the range instead of collapsing to a point.
  CHECK(hi - lo > 0.2);

  spec.sphere_radius_min = 0.8;
  spec.sphere_radius_max = 0.7;
  CHECK_THROWS_AS(vx::gen_corpus(spec, 1), PipelineError);
  spec.sphere_radius_min = 0.0;
  CHECK_THROWS_AS(vx::gen_corpus(spec, 1), PipelineError);
  spec.sphere_radius_min = 0.3;
  spec.sphere_radius_max = 0.999;  // would touch the walls
  CHECK_THROWS_AS(vx::gen_corpus(spec, 1), PipelineError);
  spec.sphere_radius_max = 0.7;
  spec.holdout_fraction = 1.5;
  CHECK_THROWS_AS(vx::gen_corpus(spec, 1), PipelineError);
  auto bad_counts = spec_with_counts({-1, 0, 0, 0, 0, 0});
  CHECK_THROWS_AS(vx::gen_corpus(bad_counts, 1), PipelineError);
}

TEST_CASE("holdout fraction is honored by the split hash") {
  auto spec = spec_with_counts({70, 70, 70, 70, 60, 60});  // 400 records
  spec.holdout_fraction = 0.1;
  auto records = vx::gen_corpus(spec, 31);
  int64_t held = 0;
  for (const auto& rec : records) held += rec.held_out ? 1 : 0;
  // Binomial(400, 0.1): mean 40, sd ~6; a 4-sigma band is [16, 64].
  CHECK(held >= 16);
  CHECK(held <= 64);

  spec.holdout_fraction = 0.0;
  for (const auto& rec : vx::gen_corpus(spec, 31)) CHECK(!rec.held_out);
  spec.holdout_fraction = 1.0;
  for (const auto& rec : vx::gen_corpus(spec, 31)) CHECK(rec.held_out);
}

TEST_CASE("manifest round-trip preserves every field byte for byte") {
  auto spec = spec_with_counts({2, 2, 2, 2, 2, 2});
  spec.holdout_fraction = 0.5;
  auto records = vx::gen_corpus(spec, 41);
  const std::string path = "test_pipeline_roundtrip.jsonl";
  vx::save_manifest(path, records);
  auto loaded = vx::load_manifest(path);
  REQUIRE(loaded.size() == records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    const auto& a = records[i];
    const auto& b = loaded[i];
    CHECK(a.index == b.index);
    CHECK(a.held_out == b.held_out);
    CHECK(a.shape.kind == b.shape.kind);
    CHECK(a.shape.class_id == b.shape.class_id);
    for (int k = 0; k < 3; ++k) CHECK(a.shape.center[k] == b.shape.center[k]);
    for (int k = 0; k < 4; ++k) CHECK(a.shape.rot[k] == b.shape.rot[k]);
    REQUIRE(a.shape.params.size() == b.shape.params.size());
    for (size_t k = 0; k < a.shape.params.size(); ++k) CHECK(a.shape.params[k] == b.shape.params[k]);
  }
  // Saving the loaded records reproduces the file exactly.
  CHECK(manifest_string(loaded) == manifest_string(records));
  std::remove(path.c_str());
}

TEST_CASE("manifest loading rejects malformed lines") {
  const std::string path = "test_pipeline_bad.jsonl";
  auto write_file = [&](const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
  };

  write_file(R"({"index":0,"kind":"sphere","class_id":0,"center":[0,0,0],"rot":[1,0,0,0],"params":[0.5],"split":"train","extra":1})" "\n");
  CHECK_THROWS_AS(vx::load_manifest(path), PipelineError);

  write_file(R"({"index":0,"kind":"sphere","class_id":0,"center":[0,0,0],"rot":[1,0,0,0],"params":[0.5],"split":"test"})" "\n");
  CHECK_THROWS_AS(vx::load_manifest(path), PipelineError);

  write_file("not json at all\n");
  CHECK_THROWS_AS(vx::load_manifest(path), PipelineError);

  write_file(R"({"index":0,"kind":"sphere","class_id":0,"center":[0,0,0],"rot":[1,0,0,0],"split":"train"})" "\n");
  CHECK_THROWS_AS(vx::load_manifest(path), PipelineError);  // missing params

  write_file(R"({"index":0,"kind":"gear","class_id":0,"center":[0,0,0],"rot":[1,0,0,0],"params":[0.5],"split":"train"})" "\n");
  CHECK_THROWS_AS(vx::load_manifest(path), PipelineError);  // unknown kind

  // The reported message carries the offending line number.
  write_file(
      R"({"index":0,"kind":"sphere","class_id":0,"center":[0,0,0],"rot":[1,0,0,0],"params":[0.5],"split":"train"})" "\n"
      "broken\n");
  try {
    vx::load_manifest(path);
    CHECK(false);
  } catch (const PipelineError& err) {
    CHECK(std::string(err.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(vx::load_manifest("test_pipeline_nonexistent.jsonl"), PipelineError);
  std::remove(path.c_str());
}

TEST_CASE("split_of separates train and held records") {
  auto spec = spec_with_counts({6, 6, 0, 0, 0, 0});
  spec.holdout_fraction = 0.5;
  auto records = vx::gen_corpus(spec, 51);
  auto train = vx::split_of(records, false);
  auto held = vx::split_of(records, true);
  CHECK(train.size() + held.size() == records.size());
  for (const auto& rec : train) CHECK(!rec.held_out);
  for (const auto& rec : held) CHECK(rec.held_out);
}

TEST_CASE("anchors_at_budget subsamples, passes through, and tops up") {
  auto base = sphere_voxel_anchors(8, 61);
  const int64_t m = base.size();
  REQUIRE(m > 8);

  auto same = vx::anchors_at_budget(base, m, 3);
  REQUIRE(same.size() == m);
  for (int64_t i = 0; i < m; ++i)
    for (int k = 0; k < 3; ++k) CHECK(same.positions[i][k] == base.positions[i][k]);

  auto fewer = vx::anchors_at_budget(base, 5, 3);
  REQUIRE(fewer.size() == 5);
  CHECK(fewer.kind == base.kind);
  CHECK(fewer.resolution == base.resolution);
  std::set<std::array<double, 3>> pool;
  for (const auto& p : base.positions) pool.insert({p[0], p[1], p[2]});
  for (const auto& p : fewer.positions) CHECK(pool.count({p[0], p[1], p[2]}) == 1);
  auto fewer2 = vx::anchors_at_budget(base, 5, 3);
  CHECK(fewer2.positions == fewer.positions);
  CHECK(vx::anchors_at_budget(base, 5, 4).positions != fewer.positions);

  const int64_t budget = m + 9;
  auto more = vx::anchors_at_budget(base, budget, 7);
  REQUIRE(more.size() == budget);
  CHECK(more.kind == AnchorKind::jittered_point);
  CHECK(more.resolution == base.resolution);
  for (int64_t i = 0; i < m; ++i)
    for (int k = 0; k < 3; ++k) CHECK(more.positions[i][k] == base.positions[i][k]);
  // Every minted anchor is a voxel center nudged by at most one half-width.
  const double amp = 1.0 / base.resolution;
  for (int64_t i = m; i < budget; ++i) {
    const auto& p = more.positions[i];
    double best = 1e9;
    for (const auto& q : base.positions) {
      double d = 0;
      for (int k = 0; k < 3; ++k) d = std::max(d, std::abs(p[k] - q[k]));
      best = std::min(best, d);
    }
    CHECK(best <= amp + 1e-12);
    for (int k = 0; k < 3; ++k) {
      CHECK(p[k] >= -1.0);
      CHECK(p[k] <= 1.0);
    }
  }
  auto more2 = vx::anchors_at_budget(base, budget, 7);
  CHECK(more2.positions == more.positions);

  CHECK_THROWS_AS(vx::anchors_at_budget(base, 0, 1), PipelineError);
  CHECK_THROWS_AS(vx::anchors_at_budget(AnchorSet{}, 4, 1), PipelineError);
}

TEST_CASE("latent corpus aligns latents with ground-truth voxel anchors") {
  Vae vae(tiny_vae_config(), 71);
  auto spec = spec_with_counts({1, 1, 0, 0, 0, 0});
  auto records = vx::gen_corpus(spec, 72);
  vx::LatentCorpusOptions opt;
  opt.anchor_resolution = 8;
  opt.surface_points = 256;
  auto latents = vx::build_latent_corpus(vae, records, opt, 73);
  REQUIRE(latents.size() == records.size());
  for (size_t i = 0; i < latents.size(); ++i) {
    const auto& ls = latents[i];
    CHECK(ls.channels == 8);
    CHECK(ls.anchors.kind == AnchorKind::voxel_center);
    CHECK(ls.anchors.resolution == 8);
    CHECK(ls.size() == ls.anchors.size());
    CHECK(ls.size() > 0);
    CHECK(ls.class_id == records[i].shape.class_id);
  }
  auto again = vx::build_latent_corpus(vae, records, opt, 73);
  for (size_t i = 0; i < latents.size(); ++i) CHECK(again[i].latents == latents[i].latents);

  opt.anchor_resolution = 0;
  CHECK_THROWS_AS(vx::build_latent_corpus(vae, records, opt, 73), PipelineError);
}

TEST_CASE("generation rejects mismatched checkpoints before sampling") {
  Vae vae(tiny_vae_config(8), 81);
  FlowModel narrow(tiny_flow_config(4), 82);
  auto anchors = sphere_voxel_anchors(6, 83);
  vx::GenerateOptions opt;
  opt.budget = 12;
  opt.steps = 4;
  opt.grid = 12;
  opt.class_id = 1;
  opt.seed = 84;
  CHECK_THROWS_AS(vx::generate(narrow, vae, anchors, opt), PipelineError);

  FlowModel dit(tiny_flow_config(8), 85);
  auto result = vx::generate(dit, vae, anchors, opt);
  CHECK(result.latents.size() == 12);
  CHECK(result.latents.channels == 8);
  CHECK(result.latents.class_id == 1);
  auto again = vx::generate(dit, vae, anchors, opt);
  CHECK(again.latents.latents == result.latents.latents);
  REQUIRE(again.mesh.vertices.size() == result.mesh.vertices.size());
  for (size_t i = 0; i < result.mesh.vertices.size(); ++i)
    for (int k = 0; k < 3; ++k) CHECK(again.mesh.vertices[i][k] == result.mesh.vertices[i][k]);

  opt.grid = 1;
  CHECK_THROWS_AS(vx::generate(dit, vae, anchors, opt), PipelineError);
}

TEST_CASE("reconstruct_at_budget is deterministic and validates its config") {
  Vae vae(tiny_vae_config(), 91);
  Shape s;
  s.kind = ShapeKind::sphere;
  s.params = {0.5};
  vx::EvalCaseConfig cfg;
  cfg.label = "probe";
  cfg.r_query = 8;
  cfg.token_budget = 16;
  cfg.g_mc = 10;
  vx::EvalSuiteOptions opt;
  opt.surface_points = 200;
  auto mesh = vx::reconstruct_at_budget(vae, s, cfg, opt, 92);
  auto again = vx::reconstruct_at_budget(vae, s, cfg, opt, 92);
  REQUIRE(again.vertices.size() == mesh.vertices.size());
  for (size_t i = 0; i < mesh.vertices.size(); ++i)
    for (int k = 0; k < 3; ++k) CHECK(again.vertices[i][k] == mesh.vertices[i][k]);

  auto bad = cfg;
  bad.r_query = 0;
  CHECK_THROWS_AS(vx::reconstruct_at_budget(vae, s, bad, opt, 92), PipelineError);
  bad = cfg;
  bad.token_budget = 0;
  CHECK_THROWS_AS(vx::reconstruct_at_budget(vae, s, bad, opt, 92), PipelineError);
  bad = cfg;
  bad.g_mc = 1;
  CHECK_THROWS_AS(vx::reconstruct_at_budget(vae, s, bad, opt, 92), PipelineError);
}

TEST_CASE("eval_suite aggregates per config and flags failures without aborting") {
  Vae vae(tiny_vae_config(), 101);
  auto spec = spec_with_counts({2, 0, 0, 0, 0, 0});
  spec.holdout_fraction = 1.0;  // evaluate both records
  auto records = vx::gen_corpus(spec, 102);

  vx::EvalSuiteOptions opt;
  opt.gt_grid = 24;
  opt.cd_samples = 500;
  opt.surface_points = 200;

  auto empty_report = vx::eval_suite(vae, records, opt, 103);
  CHECK(empty_report.rows.empty());

  vx::EvalCaseConfig a;
  a.label = "a";
  a.r_query = 8;
  a.token_budget = 16;
  a.g_mc = 10;
  vx::EvalCaseConfig b = a;
  b.label = "b";
  b.token_budget = 8;
  opt.configs = {a, b};

  auto report = vx::eval_suite(vae, records, opt, 103);
  // One aggregate row per config, in config order, after any failure rows.
  std::vector<size_t> agg_rows;
  for (size_t i = 0; i < report.rows.size(); ++i) {
    const auto& row = report.rows[i];
    if (row.label == "a" || row.label == "b") {
      agg_rows.push_back(i);
      CHECK(row.latent_size == (row.label == "a" ? 16 : 8));
    } else {
      CHECK(row.label.find("failed") != std::string::npos);
      CHECK(std::isnan(row.cd_e4));
    }
  }
  REQUIRE(agg_rows.size() == 2);
  CHECK(report.rows[agg_rows[0]].label == "a");
  CHECK(report.rows[agg_rows[1]].label == "b");

  auto again = vx::eval_suite(vae, records, opt, 103);
  CHECK(vx::eval_report_csv(again) == vx::eval_report_csv(report));

  // A poisoned decoder fails every shape yet the suite still returns rows.
  Vae broken(tiny_vae_config(), 101);
  broken.params().front().second.leaf_data()[0] = std::numeric_limits<double>::infinity();
  auto flagged = vx::eval_suite(broken, records, opt, 103);
  int64_t failures = 0;
  for (const auto& row : flagged.rows)
    if (row.label.find("failed") != std::string::npos) ++failures;
  CHECK(failures == 4);  // two shapes x two configs
  for (const auto& row : flagged.rows)
    if (row.label == "a" || row.label == "b") CHECK(std::isnan(row.cd_e4));

  // Nothing held out -> nothing to evaluate.
  spec.holdout_fraction = 0.0;
  auto all_train = vx::gen_corpus(spec, 102);
  CHECK_THROWS_AS(vx::eval_suite(vae, all_train, opt, 103), PipelineError);
}
