// voxset: one binary for the whole desk-scale pipeline.
//
//   gen-corpus  procedural shape corpus -> JSON-lines manifest
//   train-vae   anchor-aligned SDF autoencoder on the train split
//   train-dit   rectified-flow transformer over encoded latent sets
//   sample      flow sampling at a token budget (+ mesh when a decoder is given)
//   eval        reconstruction metrics across token budgets -> CSV
//   repro       fixed-seed reproduction scripts with pass/fail checks
//
// Config precedence is CLI flag > config file (--config, JSON object keyed by
// flag name) > built-in default; the effective table is printed at startup and
// hashed into every output's .meta.json sidecar. Exit codes: 0 success,
// 1 threshold violation, 2 usage error, 3 runtime failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "vx/pipeline.hpp"
#include "vx/repro.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string git_describe() {
  FILE* pipe = ::popen("git describe --always --dirty 2>/dev/null", "r");
  if (!pipe) return "unknown";
  char buf[256];
  std::string out;
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  ::pclose(pipe);
  while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
  return out.empty() ? "unknown" : out;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw UsageError("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw UsageError("config file " + path + " must hold a JSON object");
  return j;
}

std::vector<int64_t> parse_int_list(const std::string& text) {
  std::vector<int64_t> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (cell.empty()) continue;
    try {
      size_t used = 0;
      out.push_back(std::stoll(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw UsageError("bad integer list element '" + cell + "' in '" + text + "'");
    }
  }
  if (out.empty()) throw UsageError("empty integer list '" + text + "'");
  return out;
}

// Three-way merge of one command's settings. Every key is announced with its
// source so a run's configuration is obvious from its log.
class ConfigMerge {
 public:
  ConfigMerge(const CLI::App& cmd, json file) : cmd_(cmd), file_(std::move(file)) {}

  template <typename T>
  void key(const std::string& name, T& value) {
    std::string source = "default";
    if (cmd_.count("--" + name) > 0) {
      source = "cli";
    } else if (file_.contains(name)) {
      try {
        value = file_.at(name).get<T>();
      } catch (const std::exception&) {
        throw UsageError("config key '" + name + "' has the wrong type");
      }
      source = "file";
    }
    if (file_.contains(name)) seen_.insert(name);
    effective_[name] = value;
    lines_.push_back("  " + name + " = " + json(value).dump() + "  [" + source + "]");
  }

  // Comma-separated list on the command line, array of integers in the file.
  void list(const std::string& name, const std::string& cli_text, std::vector<int64_t>& value) {
    std::string source = "default";
    if (cmd_.count("--" + name) > 0) {
      value = parse_int_list(cli_text);
      source = "cli";
    } else if (file_.contains(name)) {
      try {
        value = file_.at(name).get<std::vector<int64_t>>();
      } catch (const std::exception&) {
        throw UsageError("config key '" + name + "' must be an array of integers");
      }
      source = "file";
    }
    if (file_.contains(name)) seen_.insert(name);
    effective_[name] = value;
    lines_.push_back("  " + name + " = " + json(value).dump() + "  [" + source + "]");
  }

  // Rejects config-file keys nothing consumed, then prints the table.
  json finish(const std::string& command) {
    for (const auto& item : file_.items()) {
      if (!seen_.count(item.key())) {
        throw UsageError("unknown config key '" + item.key() + "' for " + command);
      }
    }
    std::printf("voxset %s: effective config (cli > file > default)\n", command.c_str());
    for (const auto& line : lines_) std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    return effective_;
  }

 private:
  const CLI::App& cmd_;
  json file_;
  std::set<std::string> seen_;
  json effective_ = json::object();
  std::vector<std::string> lines_;
};

void ensure_parent_dir(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

// <out>.meta.json records what produced an artifact and under which settings.
void write_sidecar(const std::string& out_path, const std::string& command, const json& effective,
                   const json& extra) {
  json j;
  j["command"] = command;
  j["config"] = effective;
  j["config_hash"] = hex64(vx::fnv1a64(effective.dump()));
  j["git"] = git_describe();
  for (const auto& item : extra.items()) j[item.key()] = item.value();
  std::ofstream out(out_path + ".meta.json", std::ios::trunc);
  out << j.dump(2) << "\n";
  if (!out.flush()) throw vx::PipelineError("cannot write " + out_path + ".meta.json");
}

int64_t sidecar_steps_done(const std::string& out_path) {
  std::ifstream in(out_path + ".meta.json");
  if (!in) return 0;
  try {
    json j;
    in >> j;
    return j.value("steps_done", static_cast<int64_t>(0));
  } catch (const std::exception&) {
    return 0;
  }
}

std::vector<vx::Shape> shapes_of(const std::vector<vx::ShapeRecord>& records) {
  std::vector<vx::Shape> shapes;
  shapes.reserve(records.size());
  for (const auto& rec : records) shapes.push_back(rec.shape);
  return shapes;
}

std::vector<vx::Shape> train_shapes_of(const std::string& manifest) {
  auto shapes = shapes_of(vx::split_of(vx::load_manifest(manifest), false));
  if (shapes.empty()) throw UsageError("manifest " + manifest + " has no training shapes");
  return shapes;
}

// ---- gen-corpus -------------------------------------------------------------

struct GenCorpusArgs {
  std::string out, config;
  uint64_t seed = 1;
  std::string counts = "34,34,33,33,33,33";
  double radius_min = 0.3, radius_max = 0.7, holdout = 0.1;
  bool force = false;
};

int run_gen_corpus(const CLI::App& cmd, GenCorpusArgs& a) {
  ConfigMerge merge(cmd, load_config_file(a.config));
  std::vector<int64_t> counts = parse_int_list(a.counts);
  merge.list("counts", a.counts, counts);
  merge.key("sphere-radius-min", a.radius_min);
  merge.key("sphere-radius-max", a.radius_max);
  merge.key("holdout", a.holdout);
  merge.key("seed", a.seed);
  const json effective = merge.finish("gen-corpus");

  if (counts.size() != vx::kNumShapeKinds) {
    throw UsageError("counts must list " + std::to_string(vx::kNumShapeKinds) +
                     " values, one per shape kind");
  }
  if (fs::exists(a.out) && !a.force) {
    throw UsageError("output " + a.out + " already exists; pass --force to overwrite");
  }
  vx::CorpusSpec spec;
  for (size_t i = 0; i < counts.size(); ++i) spec.counts[i] = counts[i];
  spec.sphere_radius_min = a.radius_min;
  spec.sphere_radius_max = a.radius_max;
  spec.holdout_fraction = a.holdout;

  auto records = vx::gen_corpus(spec, a.seed);
  ensure_parent_dir(a.out);
  vx::save_manifest(a.out, records);
  int64_t held = 0;
  for (const auto& rec : records) held += rec.held_out ? 1 : 0;
  write_sidecar(a.out, "gen-corpus", effective,
                {{"seed", a.seed},
                 {"records", records.size()},
                 {"held_out", held}});
  std::printf("voxset gen-corpus: wrote %zu records (%lld held out) to %s\n", records.size(),
              static_cast<long long>(held), a.out.c_str());
  return 0;
}

// ---- train-vae --------------------------------------------------------------

struct TrainVaeArgs {
  std::string corpus, out, config, log;
  uint64_t seed = 1;
  bool resume = false;
  // architecture (ignored when resuming from a checkpoint)
  int64_t channels = 64, model_dim = 192, heads = 4, depth_enc = 4, depth_dec = 6;
  double kl_weight = 1e-6;
  int64_t smallest_resolution = 16;
  int fourier_bands = 8;
  // optimisation
  int64_t steps = 2000, points = 768, anchor_pool = 512, token_budget = 256, sdf_queries = 512;
  double lr = 1e-4, weight_decay = 0.0, sharp_fraction = 0.3;
  std::string strategy = "jittered";
  std::string fixed_resolutions = "32,64";
  int64_t snapshot_every = 250, save_every = 0;
};

int run_train_vae(const CLI::App& cmd, TrainVaeArgs& a) {
  ConfigMerge merge(cmd, load_config_file(a.config));
  std::vector<int64_t> fixed = parse_int_list(a.fixed_resolutions);
  merge.key("seed", a.seed);
  merge.key("steps", a.steps);
  merge.key("lr", a.lr);
  merge.key("weight-decay", a.weight_decay);
  merge.key("strategy", a.strategy);
  merge.list("fixed-resolutions", a.fixed_resolutions, fixed);
  merge.key("points", a.points);
  merge.key("sharp-fraction", a.sharp_fraction);
  merge.key("anchor-pool", a.anchor_pool);
  merge.key("token-budget", a.token_budget);
  merge.key("sdf-queries", a.sdf_queries);
  merge.key("snapshot-every", a.snapshot_every);
  merge.key("save-every", a.save_every);
  merge.key("channels", a.channels);
  merge.key("model-dim", a.model_dim);
  merge.key("heads", a.heads);
  merge.key("depth-enc", a.depth_enc);
  merge.key("depth-dec", a.depth_dec);
  merge.key("kl-weight", a.kl_weight);
  merge.key("smallest-resolution", a.smallest_resolution);
  merge.key("fourier-bands", a.fourier_bands);
  const json effective = merge.finish("train-vae");

  vx::QueryStrategy strategy;
  try {
    strategy = vx::query_strategy_from_name(a.strategy);
  } catch (const std::exception&) {
    throw UsageError("unknown strategy '" + a.strategy + "' (point, fixed_voxel, jittered)");
  }

  auto shapes = train_shapes_of(a.corpus);
  int64_t start_step = 0;
  std::optional<vx::Vae> vae;
  if (a.resume && fs::exists(a.out)) {
    vae.emplace(vx::Vae::load(a.out));
    start_step = sidecar_steps_done(a.out);
    std::printf("voxset train-vae: resuming %s at step %lld (architecture flags ignored)\n",
                a.out.c_str(), static_cast<long long>(start_step));
  } else {
    vx::VaeConfig cfg;
    cfg.latent_channels = a.channels;
    cfg.model_dim = a.model_dim;
    cfg.num_heads = a.heads;
    cfg.depth_enc = a.depth_enc;
    cfg.depth_dec = a.depth_dec;
    cfg.kl_weight = a.kl_weight;
    cfg.smallest_resolution = a.smallest_resolution;
    cfg.fourier_bands = a.fourier_bands;
    vae.emplace(cfg, vx::substream(a.seed, "vae_model"));
  }
  if (start_step >= a.steps) {
    std::printf("voxset train-vae: checkpoint already has %lld of %lld steps; nothing to do\n",
                static_cast<long long>(start_step), static_cast<long long>(a.steps));
    return 0;
  }

  vx::VaeTrainOptions opt;
  opt.steps = a.steps;
  opt.lr = a.lr;
  opt.weight_decay = a.weight_decay;
  opt.points_per_shape = a.points;
  opt.sharp_fraction = a.sharp_fraction;
  opt.anchor_pool = a.anchor_pool;
  opt.token_budget = a.token_budget;
  opt.strategy = strategy;
  opt.fixed_resolutions.assign(fixed.begin(), fixed.end());
  opt.sdf_queries = a.sdf_queries;
  opt.snapshot_every = a.snapshot_every;
  opt.log_csv = a.log.empty() ? a.out + ".train.csv" : a.log;
  opt.start_step = start_step;
  opt.checkpoint_path = a.out;
  opt.save_every = a.save_every;
  ensure_parent_dir(a.out);
  ensure_parent_dir(opt.log_csv);

  auto result = vx::train_vae(*vae, shapes, opt, vx::substream(a.seed, "vae_train"));
  if (result.aborted_non_finite) {
    std::fprintf(stderr,
                 "voxset train-vae: aborted on a non-finite loss after %lld steps; "
                 "checkpoint left at the last periodic save\n",
                 static_cast<long long>(result.steps_run));
    return 3;
  }
  vae->save(a.out);
  write_sidecar(a.out, "train-vae", effective,
                {{"seed", a.seed},
                 {"steps_done", a.steps},
                 {"first_loss", result.first_loss},
                 {"last_loss", result.last_loss},
                 {"log", opt.log_csv}});
  std::printf("voxset train-vae: ran %lld steps to step %lld, loss %.6g -> %.6g, saved %s\n",
              static_cast<long long>(result.steps_run), static_cast<long long>(a.steps),
              result.first_loss, result.last_loss, a.out.c_str());
  return 0;
}

// ---- train-dit --------------------------------------------------------------

struct TrainDitArgs {
  std::string corpus, vae, out, config, log, latents_out;
  uint64_t seed = 1;
  bool resume = false;
  // architecture (latent width always comes from the decoder checkpoint)
  int64_t model_dim = 240, heads = 4, depth = 8, classes = 6;
  double cfg_dropout = 0.1;
  std::string schedule = "64,256";
  // latent corpus
  int64_t anchor_resolution = 16, surface_points = 4096;
  double sharp_fraction = 0.3;
  // optimisation
  int64_t steps_per_stage = 1000, batch = 4;
  double lr_start = 1e-4, lr_end = 1e-6, weight_decay = 0.0;
  int64_t snapshot_every = 250, save_every = 0;
};

int run_train_dit(const CLI::App& cmd, TrainDitArgs& a) {
  ConfigMerge merge(cmd, load_config_file(a.config));
  std::vector<int64_t> schedule = parse_int_list(a.schedule);
  merge.key("seed", a.seed);
  merge.list("schedule", a.schedule, schedule);
  merge.key("steps-per-stage", a.steps_per_stage);
  merge.key("batch", a.batch);
  merge.key("lr-start", a.lr_start);
  merge.key("lr-end", a.lr_end);
  merge.key("weight-decay", a.weight_decay);
  merge.key("cfg-dropout", a.cfg_dropout);
  merge.key("classes", a.classes);
  merge.key("model-dim", a.model_dim);
  merge.key("heads", a.heads);
  merge.key("depth", a.depth);
  merge.key("anchor-resolution", a.anchor_resolution);
  merge.key("surface-points", a.surface_points);
  merge.key("sharp-fraction", a.sharp_fraction);
  merge.key("snapshot-every", a.snapshot_every);
  merge.key("save-every", a.save_every);
  const json effective = merge.finish("train-dit");

  const vx::Vae vae = vx::Vae::load(a.vae);
  auto train_records = vx::split_of(vx::load_manifest(a.corpus), false);
  if (train_records.empty()) throw UsageError("manifest " + a.corpus + " has no training shapes");
  vx::LatentCorpusOptions lopt;
  lopt.anchor_resolution = static_cast<int>(a.anchor_resolution);
  lopt.surface_points = a.surface_points;
  lopt.sharp_fraction = a.sharp_fraction;
  std::printf("voxset train-dit: encoding %zu training shapes ...\n", train_records.size());
  auto latents = vx::build_latent_corpus(vae, train_records, lopt, vx::substream(a.seed, "dit_latents"));
  if (!a.latents_out.empty()) {
    fs::create_directories(a.latents_out);
    for (size_t i = 0; i < latents.size(); ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "/latent_%05lld.vxst",
                    static_cast<long long>(train_records[i].index));
      vx::save_latent_set(a.latents_out + name, latents[i]);
    }
  }

  int64_t start_step = 0;
  std::optional<vx::FlowModel> dit;
  if (a.resume && fs::exists(a.out)) {
    dit.emplace(vx::FlowModel::load(a.out));
    start_step = sidecar_steps_done(a.out);
    schedule = dit->config().token_schedule;
    std::printf("voxset train-dit: resuming %s at step %lld (architecture flags ignored)\n",
                a.out.c_str(), static_cast<long long>(start_step));
  } else {
    vx::FlowConfig cfg;
    cfg.latent_channels = vae.config().latent_channels;
    cfg.model_dim = a.model_dim;
    cfg.num_heads = a.heads;
    cfg.depth = a.depth;
    cfg.num_classes = a.classes;
    cfg.cfg_dropout_p = a.cfg_dropout;
    cfg.token_schedule = schedule;
    dit.emplace(cfg, vx::substream(a.seed, "dit_model"));
  }
  const int64_t total_steps = static_cast<int64_t>(schedule.size()) * a.steps_per_stage;
  if (start_step >= total_steps) {
    std::printf("voxset train-dit: checkpoint already has %lld of %lld steps; nothing to do\n",
                static_cast<long long>(start_step), static_cast<long long>(total_steps));
    return 0;
  }

  vx::FlowTrainOptions opt;
  opt.steps_per_stage = a.steps_per_stage;
  opt.batch_size = a.batch;
  opt.lr_start = a.lr_start;
  opt.lr_end = a.lr_end;
  opt.weight_decay = a.weight_decay;
  opt.snapshot_every = a.snapshot_every;
  opt.log_csv = a.log.empty() ? a.out + ".train.csv" : a.log;
  opt.start_step = start_step;
  opt.checkpoint_path = a.out;
  opt.save_every = a.save_every;
  ensure_parent_dir(a.out);
  ensure_parent_dir(opt.log_csv);

  auto result = vx::train_flow(*dit, latents, opt, vx::substream(a.seed, "dit_train"));
  if (result.aborted_non_finite) {
    std::fprintf(stderr,
                 "voxset train-dit: aborted on a non-finite loss after %lld steps; "
                 "checkpoint left at the last periodic save\n",
                 static_cast<long long>(result.steps_run));
    return 3;
  }
  dit->save(a.out);
  write_sidecar(a.out, "train-dit", effective,
                {{"seed", a.seed},
                 {"steps_done", total_steps},
                 {"first_loss", result.first_loss},
                 {"last_loss", result.last_loss},
                 {"log", opt.log_csv}});
  std::printf("voxset train-dit: ran %lld steps to step %lld, loss %.6g -> %.6g, saved %s\n",
              static_cast<long long>(result.steps_run), static_cast<long long>(total_steps),
              result.first_loss, result.last_loss, a.out.c_str());
  return 0;
}

// ---- sample -------------------------------------------------------------------

struct SampleArgs {
  std::string dit, vae, out, config, anchors, manifest;
  int64_t index = -1;
  int64_t resolution = 16, surface_points = 4096;
  double sharp_fraction = 0.3;
  int64_t budget = 256, steps = 50;
  double scale = 4.0;
  int64_t class_id = -2;  // -2: from the manifest record (0 with --anchors); -1: unconditional
  int64_t grid = 48;
  uint64_t seed = 1;
};

vx::AnchorSet anchors_from_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open anchors file " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw UsageError("anchors file " + path + " is not valid JSON: " + e.what());
  }
  if (!j.contains("resolution") || !j.contains("indices")) {
    throw UsageError("anchors file needs {\"resolution\": R, \"indices\": [[i,j,k], ...]}");
  }
  vx::ActiveVoxelSet voxels;
  voxels.resolution = j.at("resolution").get<int>();
  if (voxels.resolution < 1) throw UsageError("anchors file: resolution must be >= 1");
  for (const auto& cell : j.at("indices")) {
    auto idx = cell.get<std::array<int, 3>>();
    for (int k = 0; k < 3; ++k) {
      if (idx[k] < 0 || idx[k] >= voxels.resolution) {
        throw UsageError("anchors file: voxel index out of range for resolution " +
                         std::to_string(voxels.resolution));
      }
    }
    voxels.indices.push_back(idx);
  }
  if (voxels.indices.empty()) throw UsageError("anchors file lists no voxels");
  return vx::voxel_queries(voxels);
}

int run_sample(const CLI::App& cmd, SampleArgs& a) {
  ConfigMerge merge(cmd, load_config_file(a.config));
  merge.key("seed", a.seed);
  merge.key("budget", a.budget);
  merge.key("steps", a.steps);
  merge.key("scale", a.scale);
  merge.key("class-id", a.class_id);
  merge.key("grid", a.grid);
  merge.key("resolution", a.resolution);
  merge.key("surface-points", a.surface_points);
  merge.key("sharp-fraction", a.sharp_fraction);
  const json effective = merge.finish("sample");

  if (a.anchors.empty() == a.manifest.empty()) {
    throw UsageError("pass exactly one anchor source: --anchors or --manifest with --index");
  }

  vx::AnchorSet coarse;
  int64_t class_id = a.class_id;
  if (!a.anchors.empty()) {
    coarse = anchors_from_json(a.anchors);
    if (class_id == -2) class_id = 0;
  } else {
    if (a.index < 0) throw UsageError("--manifest needs --index");
    auto records = vx::load_manifest(a.manifest);
    const vx::ShapeRecord* found = nullptr;
    for (const auto& rec : records) {
      if (rec.index == a.index) found = &rec;
    }
    if (!found) throw UsageError("manifest has no record with index " + std::to_string(a.index));
    auto samples = vx::sample_surface(found->shape, a.surface_points, a.sharp_fraction,
                                      vx::substream(a.seed, "sample_surface"));
    coarse = vx::voxel_queries(vx::active_voxels(samples, static_cast<int>(a.resolution)));
    if (class_id == -2) class_id = found->shape.class_id;
  }

  const vx::FlowModel dit = vx::FlowModel::load(a.dit);
  vx::GenerateOptions gopt;
  gopt.budget = a.budget;
  gopt.steps = a.steps;
  gopt.guidance_scale = a.scale;
  gopt.class_id = class_id;
  gopt.grid = static_cast<int>(a.grid);
  gopt.seed = vx::substream(a.seed, "sample_noise");
  ensure_parent_dir(a.out);

  int64_t triangles = -1;
  vx::LatentSet latents;
  if (!a.vae.empty()) {
    const vx::Vae vae = vx::Vae::load(a.vae);
    auto gen = vx::generate(dit, vae, coarse, gopt);
    latents = std::move(gen.latents);
    vx::write_obj(a.out + ".obj", gen.mesh);
    triangles = static_cast<int64_t>(gen.mesh.triangles.size());
    std::printf("voxset sample: %lld tokens -> %lld triangles -> %s.obj\n",
                static_cast<long long>(a.budget), static_cast<long long>(triangles),
                a.out.c_str());
  } else {
    latents = vx::generate_latents(dit, coarse, gopt);
    std::printf("voxset sample: %lld latent tokens -> %s.vxst (no decoder given)\n",
                static_cast<long long>(a.budget), a.out.c_str());
  }
  vx::save_latent_set(a.out + ".vxst", latents);

  const auto& schedule = dit.config().token_schedule;
  const double trained_budget = schedule.empty() ? 1.0 : static_cast<double>(schedule.back());
  write_sidecar(a.out, "sample", effective,
                {{"seed", a.seed},
                 {"class_id", class_id},
                 {"anchor_count", coarse.size()},
                 {"budget", a.budget},
                 {"scale_factor", static_cast<double>(a.budget) / trained_budget},
                 {"triangles", triangles}});
  return 0;
}

// ---- eval ---------------------------------------------------------------------

struct EvalArgs {
  std::string vae, corpus, out, config;
  uint64_t seed = 1;
  std::string budgets = "256,512,1024";
  int64_t r_query = 32, grid = 48, gt_grid = 96, cd_samples = 20000, surface_points = 8192;
  double sharp_fraction = 0.3, max_cd = 0.0;
  std::string label = "budget";
  bool include_train = false;
};

int run_eval(const CLI::App& cmd, EvalArgs& a) {
  ConfigMerge merge(cmd, load_config_file(a.config));
  std::vector<int64_t> budgets = parse_int_list(a.budgets);
  merge.key("seed", a.seed);
  merge.list("budgets", a.budgets, budgets);
  merge.key("r-query", a.r_query);
  merge.key("grid", a.grid);
  merge.key("gt-grid", a.gt_grid);
  merge.key("cd-samples", a.cd_samples);
  merge.key("surface-points", a.surface_points);
  merge.key("sharp-fraction", a.sharp_fraction);
  merge.key("label", a.label);
  merge.key("max-cd", a.max_cd);
  const json effective = merge.finish("eval");

  const vx::Vae vae = vx::Vae::load(a.vae);
  auto records = vx::load_manifest(a.corpus);
  vx::EvalSuiteOptions opt;
  opt.gt_grid = static_cast<int>(a.gt_grid);
  opt.cd_samples = a.cd_samples;
  opt.surface_points = a.surface_points;
  opt.sharp_fraction = a.sharp_fraction;
  opt.held_out_only = !a.include_train;
  for (int64_t b : budgets) {
    vx::EvalCaseConfig cfg;
    cfg.label = a.label + std::to_string(b);
    cfg.r_query = static_cast<int>(a.r_query);
    cfg.token_budget = b;
    cfg.g_mc = static_cast<int>(a.grid);
    opt.configs.push_back(cfg);
  }

  auto report = vx::eval_suite(vae, records, opt, a.seed);
  ensure_parent_dir(a.out);
  vx::save_eval_report_csv(a.out, report);
  write_sidecar(a.out, "eval", effective, {{"seed", a.seed}, {"rows", report.rows.size()}});
  std::printf("%s", vx::eval_report_csv(report).c_str());
  std::printf("voxset eval: wrote %zu rows to %s\n", report.rows.size(), a.out.c_str());

  if (a.max_cd > 0) {
    for (const auto& row : report.rows) {
      const bool aggregate = row.label.find("failed") == std::string::npos;
      if (aggregate && !(row.cd_e4 <= a.max_cd)) {  // NaN also trips the gate
        std::fprintf(stderr, "voxset eval: %s chamfer %.6g exceeds the --max-cd gate %.6g\n",
                     row.label.c_str(), row.cd_e4, a.max_cd);
        return 1;
      }
    }
  }
  return 0;
}

// ---- repro -------------------------------------------------------------------

struct ReproArgs {
  std::string script, out;
  uint64_t seed = 0;
};

int run_repro_cmd(ReproArgs& a) {
  bool known = false;
  for (const auto& name : vx::repro_script_names()) known = known || name == a.script;
  if (!known) {
    std::string names;
    for (const auto& name : vx::repro_script_names()) names += "\n  " + name;
    throw UsageError("unknown repro script '" + a.script + "'; available:" + names);
  }
  const std::string dir = a.out.empty() ? "runs/" + a.script : a.out;
  std::printf("voxset repro: running %s (seed %llu) into %s\n", a.script.c_str(),
              static_cast<unsigned long long>(a.seed), dir.c_str());
  std::fflush(stdout);
  auto result = vx::run_repro(a.script, dir, a.seed);
  for (const auto& line : result.checks) std::printf("  %s\n", line.c_str());
  std::printf("voxset repro: %s %s\n", a.script.c_str(), result.passed ? "PASS" : "FAIL");
  return result.passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semi-structured voxel latent sets: corpus, training, sampling, evaluation"};
  app.set_version_flag("--version", "voxset 1.0");
  app.require_subcommand(1);

  GenCorpusArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "Write a procedural shape corpus manifest");
  gen_cmd->add_option("--out", gen.out, "manifest path (.jsonl)")->required();
  gen_cmd->add_option("--config", gen.config, "JSON config file");
  gen_cmd->add_option("--seed", gen.seed, "base seed")->capture_default_str();
  gen_cmd->add_option("--counts", gen.counts, "instances per kind: sphere,box,torus,capsule,union_two,star")
      ->capture_default_str();
  gen_cmd->add_option("--sphere-radius-min", gen.radius_min, "")->capture_default_str();
  gen_cmd->add_option("--sphere-radius-max", gen.radius_max, "")->capture_default_str();
  gen_cmd->add_option("--holdout", gen.holdout, "held-out fraction")->capture_default_str();
  gen_cmd->add_flag("--force", gen.force, "overwrite an existing manifest");

  TrainVaeArgs tv;
  auto* tv_cmd = app.add_subcommand("train-vae", "Train the anchor-aligned SDF autoencoder");
  tv_cmd->add_option("--corpus", tv.corpus, "manifest path")->required();
  tv_cmd->add_option("--out", tv.out, "checkpoint path (.vxst)")->required();
  tv_cmd->add_option("--config", tv.config, "JSON config file");
  tv_cmd->add_option("--log", tv.log, "training CSV (default <out>.train.csv)");
  tv_cmd->add_option("--seed", tv.seed, "")->capture_default_str();
  tv_cmd->add_flag("--resume", tv.resume, "continue from the checkpoint if it exists");
  tv_cmd->add_option("--steps", tv.steps, "")->capture_default_str();
  tv_cmd->add_option("--lr", tv.lr, "")->capture_default_str();
  tv_cmd->add_option("--weight-decay", tv.weight_decay, "")->capture_default_str();
  tv_cmd->add_option("--strategy", tv.strategy, "point|fixed_voxel|jittered")
      ->capture_default_str();
  tv_cmd->add_option("--fixed-resolutions", tv.fixed_resolutions, "grids cycled by fixed_voxel")
      ->capture_default_str();
  tv_cmd->add_option("--points", tv.points, "encoder input points per shape")->capture_default_str();
  tv_cmd->add_option("--sharp-fraction", tv.sharp_fraction, "")->capture_default_str();
  tv_cmd->add_option("--anchor-pool", tv.anchor_pool, "")->capture_default_str();
  tv_cmd->add_option("--token-budget", tv.token_budget, "")->capture_default_str();
  tv_cmd->add_option("--sdf-queries", tv.sdf_queries, "")->capture_default_str();
  tv_cmd->add_option("--snapshot-every", tv.snapshot_every, "")->capture_default_str();
  tv_cmd->add_option("--save-every", tv.save_every, "periodic checkpoint interval (0 = end only)")
      ->capture_default_str();
  tv_cmd->add_option("--channels", tv.channels, "")->capture_default_str();
  tv_cmd->add_option("--model-dim", tv.model_dim, "")->capture_default_str();
  tv_cmd->add_option("--heads", tv.heads, "")->capture_default_str();
  tv_cmd->add_option("--depth-enc", tv.depth_enc, "")->capture_default_str();
  tv_cmd->add_option("--depth-dec", tv.depth_dec, "")->capture_default_str();
  tv_cmd->add_option("--kl-weight", tv.kl_weight, "")->capture_default_str();
  tv_cmd->add_option("--smallest-resolution", tv.smallest_resolution, "")->capture_default_str();
  tv_cmd->add_option("--fourier-bands", tv.fourier_bands, "")->capture_default_str();

  TrainDitArgs td;
  auto* td_cmd = app.add_subcommand("train-dit", "Train the rectified-flow transformer on latents");
  td_cmd->add_option("--corpus", td.corpus, "manifest path")->required();
  td_cmd->add_option("--vae", td.vae, "decoder checkpoint used to encode latents")->required();
  td_cmd->add_option("--out", td.out, "checkpoint path (.vxst)")->required();
  td_cmd->add_option("--config", td.config, "JSON config file");
  td_cmd->add_option("--log", td.log, "training CSV (default <out>.train.csv)");
  td_cmd->add_option("--latents-out", td.latents_out, "directory for encoded latent sets");
  td_cmd->add_option("--seed", td.seed, "")->capture_default_str();
  td_cmd->add_flag("--resume", td.resume, "continue from the checkpoint if it exists");
  td_cmd->add_option("--schedule", td.schedule, "token budgets per training stage")
      ->capture_default_str();
  td_cmd->add_option("--steps-per-stage", td.steps_per_stage, "")->capture_default_str();
  td_cmd->add_option("--batch", td.batch, "")->capture_default_str();
  td_cmd->add_option("--lr-start", td.lr_start, "")->capture_default_str();
  td_cmd->add_option("--lr-end", td.lr_end, "")->capture_default_str();
  td_cmd->add_option("--weight-decay", td.weight_decay, "")->capture_default_str();
  td_cmd->add_option("--cfg-dropout", td.cfg_dropout, "label dropout probability")
      ->capture_default_str();
  td_cmd->add_option("--classes", td.classes, "")->capture_default_str();
  td_cmd->add_option("--model-dim", td.model_dim, "")->capture_default_str();
  td_cmd->add_option("--heads", td.heads, "")->capture_default_str();
  td_cmd->add_option("--depth", td.depth, "")->capture_default_str();
  td_cmd->add_option("--anchor-resolution", td.anchor_resolution, "latent voxelization grid")
      ->capture_default_str();
  td_cmd->add_option("--surface-points", td.surface_points, "")->capture_default_str();
  td_cmd->add_option("--sharp-fraction", td.sharp_fraction, "")->capture_default_str();
  td_cmd->add_option("--snapshot-every", td.snapshot_every, "")->capture_default_str();
  td_cmd->add_option("--save-every", td.save_every, "periodic checkpoint interval (0 = end only)")
      ->capture_default_str();

  SampleArgs sm;
  auto* sm_cmd = app.add_subcommand("sample", "Sample latent tokens (and a mesh with --vae)");
  sm_cmd->add_option("--dit", sm.dit, "flow checkpoint")->required();
  sm_cmd->add_option("--vae", sm.vae, "decoder checkpoint (optional; enables the mesh)");
  sm_cmd->add_option("--out", sm.out, "output base path (writes .vxst/.obj/.meta.json)")->required();
  sm_cmd->add_option("--config", sm.config, "JSON config file");
  sm_cmd->add_option("--anchors", sm.anchors,
                     "voxel-set JSON {\"resolution\":R,\"indices\":[[i,j,k],...]}");
  sm_cmd->add_option("--manifest", sm.manifest, "manifest to voxelize one record from");
  sm_cmd->add_option("--index", sm.index, "record index within --manifest");
  sm_cmd->add_option("--resolution", sm.resolution, "voxelization grid for --manifest")
      ->capture_default_str();
  sm_cmd->add_option("--surface-points", sm.surface_points, "")->capture_default_str();
  sm_cmd->add_option("--sharp-fraction", sm.sharp_fraction, "")->capture_default_str();
  sm_cmd->add_option("--budget", sm.budget, "token budget")->capture_default_str();
  sm_cmd->add_option("--steps", sm.steps, "sampler steps")->capture_default_str();
  sm_cmd->add_option("--scale", sm.scale, "guidance scale")->capture_default_str();
  sm_cmd->add_option("--class-id", sm.class_id,
                     "-2: from the record (0 with --anchors); -1: unconditional")
      ->capture_default_str();
  sm_cmd->add_option("--grid", sm.grid, "decode lattice")->capture_default_str();
  sm_cmd->add_option("--seed", sm.seed, "")->capture_default_str();

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "Reconstruction metrics across token budgets");
  ev_cmd->add_option("--vae", ev.vae, "decoder checkpoint")->required();
  ev_cmd->add_option("--corpus", ev.corpus, "manifest path")->required();
  ev_cmd->add_option("--out", ev.out, "CSV path")->required();
  ev_cmd->add_option("--config", ev.config, "JSON config file");
  ev_cmd->add_option("--seed", ev.seed, "")->capture_default_str();
  ev_cmd->add_option("--budgets", ev.budgets, "token budgets, one eval row each")
      ->capture_default_str();
  ev_cmd->add_option("--r-query", ev.r_query, "anchor voxelization grid")->capture_default_str();
  ev_cmd->add_option("--grid", ev.grid, "reconstruction lattice")->capture_default_str();
  ev_cmd->add_option("--gt-grid", ev.gt_grid, "reference lattice")->capture_default_str();
  ev_cmd->add_option("--cd-samples", ev.cd_samples, "")->capture_default_str();
  ev_cmd->add_option("--surface-points", ev.surface_points, "")->capture_default_str();
  ev_cmd->add_option("--sharp-fraction", ev.sharp_fraction, "")->capture_default_str();
  ev_cmd->add_option("--label", ev.label, "row label prefix")->capture_default_str();
  ev_cmd->add_option("--max-cd", ev.max_cd, "exit 1 when any aggregate cd_e4 exceeds this")
      ->capture_default_str();
  ev_cmd->add_flag("--include-train", ev.include_train, "evaluate the train split too");

  ReproArgs rp;
  auto* rp_cmd = app.add_subcommand("repro", "Run a fixed-seed reproduction script");
  rp_cmd->add_option("script", rp.script, "metrics_oracle|smoke_vae|smoke_dit|tab3_trend|tokens_trend")
      ->required();
  rp_cmd->add_option("--out", rp.out, "artifact directory (default runs/<script>)");
  rp_cmd->add_option("--seed", rp.seed, "")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // normalize every usage failure to exit 2
  }

  try {
    if (gen_cmd->parsed()) return run_gen_corpus(*gen_cmd, gen);
    if (tv_cmd->parsed()) return run_train_vae(*tv_cmd, tv);
    if (td_cmd->parsed()) return run_train_dit(*td_cmd, td);
    if (sm_cmd->parsed()) return run_sample(*sm_cmd, sm);
    if (ev_cmd->parsed()) return run_eval(*ev_cmd, ev);
    if (rp_cmd->parsed()) return run_repro_cmd(rp);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "voxset: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "voxset: %s\n", e.what());
    return 3;
  }
  return 2;
}
