// Acceptance gate: one line per criterion, pinned tolerances, exit 0 only if
// every criterion passes. Heavy runs reuse the repro scripts so the numbers
// printed here come from the same artifacts a user can regenerate with the
// voxset binary (passed as argv[1]; determinism checks exec it when given,
// otherwise they run the scripts in-process).

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "vx/pipeline.hpp"
#include "vx/repro.hpp"

namespace fs = std::filesystem;
using vx::AnchorSet;
using vx::Coords;
using vx::NamedParams;
using vx::Rng;
using vx::Shape;
using vx::ShapeKind;
using vx::Tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

void progress(const std::string& msg) {
  std::fprintf(stderr, "[acceptance] %s\n", msg.c_str());
  std::fflush(stderr);
}

// ---- criterion 1: analytic gradients match finite differences ----------------

struct GradStats {
  double max_rel = 0;
  int64_t checked = 0;
};

// forward() must be a deterministic function of the given leaves.
void check_grads(const std::vector<Tensor>& leaves, const std::function<Tensor()>& forward,
                 GradStats& gs) {
  Tensor loss = forward();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (const Tensor& t : leaves) analytic.push_back(t.grad());
  for (size_t li = 0; li < leaves.size(); ++li) {
    Tensor t = leaves[li];
    auto& d = t.leaf_data();
    const size_t stride = std::max<size_t>(1, d.size() / 6);
    for (size_t i = 0; i < d.size(); i += stride) {
      const double keep = d[i];
      const double h = 1e-5 * std::max(1.0, std::abs(keep));
      d[i] = keep + h;
      const double fp = forward().item();
      d[i] = keep - h;
      const double fm = forward().item();
      d[i] = keep;
      const double fd = (fp - fm) / (2 * h);
      const double an = analytic[li][i];
      ++gs.checked;
      if (std::abs(fd) < 1e-8 && std::abs(an) < 1e-8) continue;
      gs.max_rel = std::max(gs.max_rel, std::abs(fd - an) / std::max(std::abs(fd), std::abs(an)));
    }
  }
}

std::vector<Tensor> tensors_of(NamedParams& params) {
  std::vector<Tensor> out;
  for (auto& [name, t] : params) out.push_back(t);
  return out;
}

Outcome criterion_gradients() {
  GradStats gs;

  {  // linear layer
    Rng rng(101);
    vx::Linear lin(5, 4, rng);
    Tensor x = Tensor::randn({3, 5}, rng, 0.7, true);
    NamedParams p;
    lin.params("lin", p);
    auto leaves = tensors_of(p);
    leaves.push_back(x);
    check_grads(leaves, [&] { return vx::mean(vx::mul(lin.forward(x), lin.forward(x))); }, gs);
  }
  {  // layer norm
    Rng rng(102);
    vx::LayerNormLayer ln(6);
    Tensor x = Tensor::randn({4, 6}, rng, 1.2, true);
    NamedParams p;
    ln.params("ln", p);
    auto leaves = tensors_of(p);
    leaves.push_back(x);
    check_grads(leaves, [&] { return vx::mean(vx::mul(ln.forward(x), ln.forward(x))); }, gs);
  }
  {  // gelu mlp
    Rng rng(103);
    vx::Mlp mlp(6, 12, rng);
    Tensor x = Tensor::randn({3, 6}, rng, 0.8, true);
    NamedParams p;
    mlp.params("mlp", p);
    auto leaves = tensors_of(p);
    leaves.push_back(x);
    check_grads(leaves, [&] { return vx::mean(vx::mul(mlp.forward(x), mlp.forward(x))); }, gs);
  }
  {  // rotary multi-head attention (softmax + rope on the tape)
    Rng rng(104);
    vx::AttentionConfig cfg{.model_dim = 12, .num_heads = 2, .use_rope = true};
    vx::MultiHeadAttention mha(cfg, rng);
    Tensor x = Tensor::randn({3, 12}, rng, 0.6, true);
    Coords at = {{-0.5, 0.25, 0.75}, {0.5, -0.25, 0.125}, {0.0, 0.9, -0.9}};
    NamedParams p;
    mha.params("mha", p);
    auto leaves = tensors_of(p);
    leaves.push_back(x);
    check_grads(leaves,
                [&] {
                  Tensor y = mha.forward(x, x, &at, &at);
                  return vx::mean(vx::mul(y, y));
                },
                gs);
  }
  {  // cross-attention block
    Rng rng(105);
    vx::AttentionConfig cfg{.model_dim = 12, .num_heads = 2, .use_rope = true};
    vx::CrossAttentionBlock block(cfg, rng);
    Tensor q = Tensor::randn({2, 12}, rng, 0.6, true);
    Tensor kv = Tensor::randn({4, 12}, rng, 0.6, true);
    Coords aq = {{0.1, -0.2, 0.3}, {-0.4, 0.5, -0.6}};
    Coords ak = {{0.7, 0.1, -0.1}, {-0.3, -0.9, 0.2}, {0.0, 0.4, 0.8}, {0.6, -0.6, 0.6}};
    NamedParams p;
    block.params("cab", p);
    auto leaves = tensors_of(p);
    leaves.push_back(q);
    leaves.push_back(kv);
    check_grads(leaves,
                [&] {
                  Tensor y = block.forward(q, kv, &aq, &ak);
                  return vx::mean(vx::mul(y, y));
                },
                gs);
  }
  {  // modulated (adaptive scale-shift-gate) block with conditioning vector
    Rng rng(106);
    vx::AttentionConfig cfg{.model_dim = 12, .num_heads = 2, .use_rope = true};
    vx::ModulatedBlock block(cfg, 10, rng);
    // nudge the zero-initialized modulation away from the identity regime
    for (double& w : block.mod.w.leaf_data()) w = 0.05 * rng.normal();
    Tensor x = Tensor::randn({3, 12}, rng, 0.6, true);
    Tensor cond = Tensor::randn({1, 10}, rng, 0.6, true);
    Coords at = {{0.2, 0.2, -0.2}, {-0.8, 0.1, 0.5}, {0.4, -0.4, 0.9}};
    NamedParams p;
    block.params("mod", p);
    auto leaves = tensors_of(p);
    leaves.push_back(x);
    leaves.push_back(cond);
    check_grads(leaves,
                [&] {
                  Tensor y = block.forward(x, cond, &at);
                  return vx::mean(vx::mul(y, y));
                },
                gs);
  }
  {  // embedding row selection
    Rng rng(107);
    vx::Embedding emb(4, 6, rng);
    Tensor scale = Tensor::randn({1, 6}, rng, 0.5, true);
    NamedParams p;
    emb.params("emb", p);
    auto leaves = tensors_of(p);
    leaves.push_back(scale);
    check_grads(leaves,
                [&] {
                  Tensor y = vx::mul(emb.forward(2), scale);
                  return vx::mean(vx::mul(y, y));
                },
                gs);
  }
  {  // full autoencoder loss: encode -> reparameterize -> decode -> losses
    vx::VaeConfig cfg;
    cfg.latent_channels = 4;
    cfg.model_dim = 24;
    cfg.num_heads = 2;
    cfg.depth_enc = 1;
    cfg.depth_dec = 1;
    cfg.fourier_bands = 2;
    vx::Vae vae(cfg, 108);
    Shape s;
    s.kind = ShapeKind::sphere;
    s.params = {0.5};
    auto samples = vx::sample_surface(s, 32, 0.25, 109);
    auto anchors = vx::point_queries(samples, 6, 110);
    Rng rng(111);
    Coords q_near, q_vol;
    for (int i = 0; i < 6; ++i) {
      q_near.push_back({rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6)});
      q_vol.push_back({rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
    }
    Tensor t_near = Tensor::randn({6, 1}, rng, 0.05);
    Tensor t_vol = Tensor::randn({6, 1}, rng, 0.05);
    check_grads(tensors_of(vae.params()),
                [&] {
                  auto [mean_z, logvar_z] = vae.encode(samples, anchors);
                  Tensor z = vx::reparameterize(mean_z, logvar_z, 112);
                  Tensor pred_near = vae.decode_sdf_tensor(z, anchors, q_near);
                  Tensor pred_vol = vae.decode_sdf_tensor(z, anchors, q_vol);
                  auto loss =
                      vx::vae_loss(pred_near, t_near, pred_vol, t_vol, mean_z, logvar_z, 1e-3);
                  return loss.total;
                },
                gs);
  }
  {  // full flow-matching loss through the velocity transformer
    vx::FlowConfig cfg;
    cfg.latent_channels = 4;
    cfg.model_dim = 12;
    cfg.num_heads = 2;
    cfg.depth = 1;
    cfg.num_classes = 3;
    cfg.token_schedule = {4};
    vx::FlowModel model(cfg, 113);
    // modulation starts at zero; nudge it so its gradient path is live
    for (auto& [name, t] : model.params()) {
      if (name.find(".mod.") != std::string::npos) {
        Rng mr(vx::fnv1a64(name));
        for (double& w : t.leaf_data()) w = 0.05 * mr.normal();
      }
    }
    Rng rng(114);
    std::vector<vx::LatentSet> data;
    for (int i = 0; i < 2; ++i) {
      AnchorSet a;
      a.kind = vx::AnchorKind::voxel_center;
      a.resolution = 8;
      for (int m = 0; m < 4; ++m) {
        a.positions.push_back(
            {rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9)});
      }
      data.push_back(vx::latent_set_from(Tensor::randn({4, 4}, rng), a, i));
    }
    std::vector<const vx::LatentSet*> batch = {&data[0], &data[1]};
    Rng draw_rng(115);
    auto items = vx::draw_flow_batch(batch, 0.5, draw_rng);
    check_grads(tensors_of(model.params()),
                [&] {
                  return vx::flow_loss_from(
                      items, [&](const Tensor& xt, const AnchorSet& a, double t,
                                 int64_t cls) { return model.denoise(xt, a, t, cls); });
                },
                gs);
  }

  Outcome out;
  out.pass = gs.checked > 500 && gs.max_rel < 1e-4;
  out.detail = "max relative error " + num(gs.max_rel) + " over " + std::to_string(gs.checked) +
               " sampled coordinates (tolerance 1e-4)";
  return out;
}

// ---- criterion 2: rotary embedding invariants ---------------------------------

Outcome criterion_rope() {
  Rng rng(210);
  const vx::RopeSpec spec{12, 10000.0, 64.0};
  double max_norm_rel = 0, max_dot_diff = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor q = Tensor::randn({1, 12}, rng);
    Tensor k = Tensor::randn({1, 12}, rng);
    const vx::Vec3 p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const vx::Vec3 d = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
    const vx::Vec3 pd = vx::vadd(p, d);

    const Tensor qp = vx::rope3d(q, {p}, spec);
    double nq = 0, nqp = 0;
    for (size_t i = 0; i < 12; ++i) {
      nq += q.data()[i] * q.data()[i];
      nqp += qp.data()[i] * qp.data()[i];
    }
    max_norm_rel = std::max(max_norm_rel, std::abs(std::sqrt(nqp) - std::sqrt(nq)) /
                                              std::max(std::sqrt(nq), 1e-12));

    const Tensor kpd = vx::rope3d(k, {pd}, spec);
    const Tensor q0 = vx::rope3d(q, {vx::Vec3{0, 0, 0}}, spec);
    const Tensor kd = vx::rope3d(k, {d}, spec);
    double dot_p = 0, dot_0 = 0;
    for (size_t i = 0; i < 12; ++i) {
      dot_p += qp.data()[i] * kpd.data()[i];
      dot_0 += q0.data()[i] * kd.data()[i];
    }
    max_dot_diff = std::max(max_dot_diff, std::abs(dot_p - dot_0));
  }
  Outcome out;
  out.pass = max_norm_rel <= 1e-12 && max_dot_diff <= 1e-9;
  out.detail = "norm drift " + num(max_norm_rel) + " (<= 1e-12), relative-offset score drift " +
               num(max_dot_diff) + " (<= 1e-9) over 1000 draws";
  return out;
}

// ---- criterion 3: isosurface extraction ---------------------------------------

Outcome criterion_marching_cubes() {
  Shape s;
  s.kind = ShapeKind::sphere;
  s.params = {0.5};
  const int g = 64;
  vx::Mesh mesh = vx::marching_cubes(vx::eval_sdf_grid(s, g));
  const double cell = 2.0 / (g - 1);
  double max_err = 0;
  for (const auto& v : mesh.vertices) {
    max_err = std::max(max_err, std::abs(vx::vnorm(v) - 0.5));
  }
  const bool sphere_ok = !mesh.empty() && max_err <= 2 * cell;

  vx::SdfGrid empty_grid;
  empty_grid.resolution = 4;
  empty_grid.values.assign(4 * 4 * 4, 1.0);
  const bool empty_ok = vx::marching_cubes(empty_grid).triangles.empty();

  vx::SdfGrid corner;
  corner.resolution = 2;
  corner.values.assign(8, 1.0);
  corner.values[0] = -1.0;
  const bool corner_ok = vx::marching_cubes(corner).triangles.size() == 1;

  Outcome out;
  out.pass = sphere_ok && empty_ok && corner_ok;
  out.detail = "sphere vertices within " + num(max_err) + " of the surface (<= " + num(2 * cell) +
               "), empty grid -> " + std::string(empty_ok ? "0 triangles" : "unexpected mesh") +
               ", single corner -> " + (corner_ok ? std::string("1 triangle") : "wrong count");
  return out;
}

// ---- criterion 7: flow matching oracle + toy distribution ---------------------

Outcome criterion_flow_oracle() {
  // Part A: a predictor that answers with the drawn target velocity makes the
  // loss exactly zero.
  Rng rng(701);
  std::vector<vx::LatentSet> data;
  for (int i = 0; i < 3; ++i) {
    AnchorSet a;
    a.kind = vx::AnchorKind::voxel_center;
    a.resolution = 8;
    for (int m = 0; m < 5; ++m) {
      a.positions.push_back(
          {rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9)});
    }
    data.push_back(vx::latent_set_from(Tensor::randn({5, 3}, rng), a, 0));
  }
  std::vector<const vx::LatentSet*> batch = {&data[0], &data[1], &data[2]};
  double worst_oracle = 0;
  for (int round = 0; round < 5; ++round) {
    auto items = vx::draw_flow_batch(batch, 0.1, rng);
    Tensor loss =
        vx::flow_loss_from(items, [&](const Tensor& xt, const AnchorSet&, double, int64_t) {
          for (const auto& it : items) {
            if (it.xt.node() == xt.node()) return it.v_target;
          }
          throw std::runtime_error("predictor saw a state it never drew");
        });
    worst_oracle = std::max(worst_oracle, std::abs(loss.item()));
  }
  const bool oracle_ok = worst_oracle == 0.0;

  // Part B: a one-channel flow on a single anchor must reproduce the moments
  // of a scalar Gaussian N(3, 0.5^2).
  vx::FlowConfig cfg;
  cfg.latent_channels = 1;
  cfg.model_dim = 48;
  cfg.num_heads = 2;
  cfg.depth = 2;
  cfg.num_classes = 1;
  cfg.cfg_dropout_p = 0.0;
  cfg.token_schedule = {1, 1, 1, 1};  // constant budget; stages anneal the lr
  vx::FlowModel model(cfg, 702);
  AnchorSet anchor;
  anchor.kind = vx::AnchorKind::voxel_center;
  anchor.resolution = 1;
  anchor.positions = {{0, 0, 0}};
  Rng data_rng(vx::substream(703, "toy_data"));
  std::vector<vx::LatentSet> toy;
  toy.reserve(512);
  for (int i = 0; i < 512; ++i) {
    Tensor v = Tensor::randn({1, 1}, data_rng, 0.5);
    v.leaf_data()[0] += 3.0;
    toy.push_back(vx::latent_set_from(v, anchor, 0));
  }
  vx::FlowTrainOptions topt;
  topt.steps_per_stage = 2000;
  topt.batch_size = 8;
  topt.lr_start = 1e-3;
  topt.lr_end = 1e-4;
  auto tr = vx::train_flow(model, toy, topt, 704);

  double sum = 0, sum2 = 0;
  const int n_samples = 1500;
  for (int i = 0; i < n_samples; ++i) {
    vx::FlowSampleOptions so;
    so.steps = 64;
    so.guidance_scale = 1.0;
    so.class_id = 0;
    so.seed = 7000 + static_cast<uint64_t>(i);
    const double v = vx::flow_sample(model, anchor, so).latents.at(0);
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / n_samples;
  const double stdev = std::sqrt(std::max(0.0, sum2 / n_samples - mean * mean));
  const bool toy_ok =
      !tr.aborted_non_finite && std::abs(mean - 3.0) <= 0.1 && std::abs(stdev - 0.5) <= 0.1;

  Outcome out;
  out.pass = oracle_ok && toy_ok;
  out.detail = "oracle loss " + num(worst_oracle) + " (exact 0); toy N(3,0.5^2) sampled mean " +
               num(mean) + " (|err| <= 0.1), std " + num(stdev) + " (|err| <= 0.1)";
  return out;
}

// ---- criterion 8: guidance dropout frequency -----------------------------------

Outcome criterion_dropout(const std::string& dir) {
  vx::FlowConfig cfg;
  cfg.latent_channels = 2;
  cfg.model_dim = 12;
  cfg.num_heads = 2;
  cfg.depth = 1;
  cfg.num_classes = 3;
  cfg.cfg_dropout_p = 0.1;
  cfg.token_schedule = {2};
  vx::FlowModel model(cfg, 801);
  Rng rng(802);
  std::vector<vx::LatentSet> data;
  for (int i = 0; i < 2; ++i) {
    AnchorSet a;
    a.kind = vx::AnchorKind::voxel_center;
    a.resolution = 4;
    a.positions = {{-0.25, 0.25, 0.25}, {0.25, -0.25, -0.25}};
    data.push_back(vx::latent_set_from(Tensor::randn({2, 2}, rng), a, i));
  }
  fs::create_directories(dir);
  vx::FlowTrainOptions topt;
  topt.steps_per_stage = 10000;
  topt.batch_size = 1;
  topt.lr_start = 1e-4;
  topt.lr_end = 1e-4;
  topt.log_csv = dir + "/train.csv";
  auto tr = vx::train_flow(model, data, topt, 803);

  std::ifstream in(topt.log_csv);
  std::string line;
  std::getline(in, line);  // header
  int64_t rows = 0, dropped = 0;
  while (std::getline(in, line)) {
    const size_t comma = line.rfind(',');
    dropped += std::stoll(line.substr(comma + 1));
    ++rows;
  }
  const double freq = rows > 0 ? static_cast<double>(dropped) / static_cast<double>(rows) : -1.0;
  Outcome out;
  out.pass = !tr.aborted_non_finite && rows == 10000 && std::abs(freq - 0.1) <= 0.01;
  out.detail = "label dropout fired " + std::to_string(dropped) + "/" + std::to_string(rows) +
               " steps -> " + num(freq) + " (0.1 +- 0.01, from the training log)";
  return out;
}

// ---- criterion 10: byte-identical artifacts ------------------------------------

bool same_bytes(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  return sa.str() == sb.str();
}

Outcome criterion_determinism(const std::string& voxset_bin, const std::string& root) {
  auto run_script = [&](const std::string& script, const std::string& dir) {
    if (!voxset_bin.empty()) {
      const std::string cmd = "\"" + voxset_bin + "\" repro " + script + " --out \"" + dir +
                              "\" --seed 0 > \"" + dir + ".log\" 2>&1";
      if (std::system(cmd.c_str()) != 0) {
        throw std::runtime_error(script + " exited non-zero under " + voxset_bin);
      }
    } else {
      vx::run_repro(script, dir, 0);
    }
  };

  int64_t files = 0, mismatches = 0;
  std::vector<std::string> bad;
  for (const std::string script : {"metrics_oracle", "smoke_dit"}) {
    const std::string da = root + "/" + script + "_a";
    const std::string db = root + "/" + script + "_b";
    fs::remove_all(da);
    fs::remove_all(db);
    run_script(script, da);
    run_script(script, db);
    for (const auto& entry : fs::recursive_directory_iterator(da)) {
      if (!entry.is_regular_file()) continue;
      const fs::path rel = fs::relative(entry.path(), da);
      ++files;
      if (!same_bytes(entry.path(), fs::path(db) / rel)) {
        ++mismatches;
        bad.push_back(rel.string());
      }
    }
  }
  Outcome out;
  out.pass = files >= 10 && mismatches == 0;
  out.detail = "re-running metrics_oracle and smoke_dit reproduced " + std::to_string(files) +
               " artifact files byte-for-byte" +
               (bad.empty() ? std::string() : " except: " + bad.front() + " ...");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string voxset_bin = argc > 1 ? argv[1] : "";
  const std::string root = "runs/acceptance";
  fs::create_directories(root);

  // Development escape hatch: VX_ACCEPT_ONLY="1,3,8" runs a subset, but such a
  // run always exits 99 so it can never be mistaken for a passing gate.
  std::vector<bool> wanted(10, true);
  const bool filtered = std::getenv("VX_ACCEPT_ONLY") != nullptr;
  if (filtered) {
    wanted.assign(10, false);
    std::stringstream ss(std::getenv("VX_ACCEPT_ONLY"));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      const size_t idx = std::stoul(tok);
      if (idx >= 1 && idx <= 10) wanted[idx - 1] = true;
    }
  }

  std::vector<std::pair<std::string, Outcome>> results(10);
  auto run = [&](size_t idx, const std::string& title, const std::function<Outcome()>& fn) {
    if (!wanted[idx]) {
      results[idx] = {title, {false, "skipped by VX_ACCEPT_ONLY (dev filter)"}};
      return;
    }
    progress("running " + std::to_string(idx + 1) + ": " + title);
    try {
      results[idx] = {title, fn()};
    } catch (const std::exception& e) {
      results[idx] = {title, {false, std::string("exception: ") + e.what()}};
    }
  };

  run(0, "autodiff gradients match finite differences", criterion_gradients);
  run(1, "rotary embedding preserves norms and relative offsets", criterion_rope);
  run(2, "isosurface extraction is tight and exact on base cases", criterion_marching_cubes);
  run(3, "accelerated distance queries match the exhaustive oracle", [&] {
    auto r = vx::run_repro("metrics_oracle", root + "/metrics_oracle", 0);
    Outcome o;
    o.pass = r.passed;
    o.detail = "max chamfer deviation " + num(r.stats["max_cd_diff"]) +
               " (<= 1e-12) across 25 mesh pairs; parallel-plane chamfer " +
               num(r.stats["plane_cd"]) + " vs 0.02 closed form";
    return o;
  });
  run(6, "flow matching loss oracle and toy-distribution recovery", criterion_flow_oracle);
  run(7, "guidance dropout frequency over 10k steps", [&] {
    return criterion_dropout(root + "/dropout");
  });
  run(9, "repro artifacts are byte-identical across reruns", [&] {
    return criterion_determinism(voxset_bin, root);
  });

  const std::string title5 = "jittered queries beat surface-point queries under voxel eval";
  const std::string title6 = "reconstruction improves with the token budget";
  if (!wanted[4] && !wanted[5]) {
    results[4] = {title5, {false, "skipped by VX_ACCEPT_ONLY (dev filter)"}};
    results[5] = {title6, {false, "skipped by VX_ACCEPT_ONLY (dev filter)"}};
  } else {
    progress("running 5+6: query-strategy and token-budget trends (tab3_trend, ~45 min)");
    try {
      auto r = vx::run_repro("tab3_trend", root + "/tab3_trend", 0);
      const double j256 = r.stats.count("cd_jitter256") ? r.stats["cd_jitter256"] : -1;
      const double j512 = r.stats.count("cd_jitter512") ? r.stats["cd_jitter512"] : -1;
      const double j1024 = r.stats.count("cd_jitter1024") ? r.stats["cd_jitter1024"] : -1;
      const double p512 = r.stats.count("cd_point512") ? r.stats["cd_point512"] : -1;
      Outcome five;
      five.pass = j512 > 0 && p512 >= 1.05 * j512;
      five.detail = "voxel-query eval chamfer x1e4: jitter-trained " + num(j512) +
                    " vs point-trained " + num(p512) + " at budget 512 (>= 5% margin required)";
      Outcome six;
      six.pass = j256 > 0 && j256 >= j512 && j512 >= j1024 && j256 > j1024;
      six.detail = "chamfer x1e4 across budgets 256/512/1024: " + num(j256) + " / " + num(j512) +
                   " / " + num(j1024) + " (non-increasing, strictly better at 1024)";
      results[4] = {title5, five};
      results[5] = {title6, six};
    } catch (const std::exception& e) {
      results[4] = {title5, {false, std::string("exception: ") + e.what()}};
      results[5] = {title6, {false, std::string("exception: ") + e.what()}};
    }
  }

  run(8, "flow sampling scales past the training token budget", [&] {
    auto r = vx::run_repro("tokens_trend", root + "/tokens_trend", 0);
    Outcome o;
    const double cd64 = r.stats.count("cd_64") ? r.stats["cd_64"] : -1;
    const double cd256 = r.stats.count("cd_256") ? r.stats["cd_256"] : -1;
    o.pass = r.passed;
    o.detail = "held-out chamfer x1e4 at budgets 64/128/256: " + num(cd64) + " / " +
               (r.stats.count("cd_128") ? num(r.stats["cd_128"]) : "?") + " / " + num(cd256) +
               " (budget 256 must not degrade vs 64; all samples must complete)";
    return o;
  });

  int failures = 0;
  std::printf("\n=== acceptance results ===\n");
  for (size_t i = 0; i < results.size(); ++i) {
    const auto& [title, outcome] = results[i];
    failures += outcome.pass ? 0 : 1;
    std::printf("[%s] %zu/10 %s: %s\n", outcome.pass ? "PASS" : "FAIL", i + 1, title.c_str(),
                outcome.detail.c_str());
  }
  std::printf("=== %d/10 criteria passed ===\n", 10 - failures);
  if (filtered) {
    std::printf("(VX_ACCEPT_ONLY filter active: this is not a gate run)\n");
    return 99;
  }
  return failures == 0 ? 0 : 1;
}
