#include "vx/vae.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace vx {

namespace {

constexpr int64_t kDecodeShard = 8192;

AttentionConfig attn_config(const VaeConfig& cfg) {
  AttentionConfig a;
  a.model_dim = cfg.model_dim;
  a.num_heads = cfg.num_heads;
  a.use_rope = true;
  return a;
}

void check_domain(const Coords& pts, const char* what) {
  for (const auto& p : pts) {
    for (int a = 0; a < 3; ++a) {
      if (!(std::abs(p[a]) <= 1.0)) {
        throw VaeError(std::string(what) + " coordinates must lie in [-1,1]^3");
      }
    }
  }
}

}  // namespace

void VaeConfig::validate() const {
  if (latent_channels < 1) throw VaeError("latent_channels must be >= 1");
  if (model_dim < 1 || num_heads < 1) throw VaeError("model_dim and num_heads must be >= 1");
  if (model_dim % num_heads != 0) throw VaeError("model_dim must divide evenly into heads");
  if ((model_dim / num_heads) % 6 != 0) {
    throw VaeError("head dim must be a multiple of 6 for 3-D rotary embeddings");
  }
  if (depth_enc < 0 || depth_dec < 0) throw VaeError("depths must be >= 0");
  if (kl_weight < 0) throw VaeError("kl_weight must be >= 0");
  if (smallest_resolution < 1) throw VaeError("smallest_resolution must be >= 1");
  if (fourier_bands < 1) throw VaeError("fourier_bands must be >= 1");
}

Vae::Vae(VaeConfig cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(substream(seed, "vae_init"));
  const int64_t d = cfg_.model_dim;
  const int64_t pos_dim = 3 + 6 * cfg_.fourier_bands;
  const AttentionConfig ac = attn_config(cfg_);

  point_proj_ = Linear(pos_dim + 4, d, rng);  // fourier(xyz) + normal + sharp
  query_proj_ = Linear(pos_dim, d, rng);
  enc_cross_ = CrossAttentionBlock(ac, rng);
  for (int64_t i = 0; i < cfg_.depth_enc; ++i) enc_self_.emplace_back(ac, rng);
  enc_ln_ = LayerNormLayer(d);
  mean_head_ = Linear(d, cfg_.latent_channels, rng);
  logvar_head_ = Linear(d, cfg_.latent_channels, rng);

  latent_proj_ = Linear(cfg_.latent_channels, d, rng);
  for (int64_t i = 0; i < cfg_.depth_dec; ++i) dec_self_.emplace_back(ac, rng);
  dec_query_proj_ = Linear(pos_dim, d, rng);
  dec_cross_ = CrossAttentionBlock(ac, rng);
  head_ = Mlp(d, d, rng);
  // narrow the MLP output to one scalar per query
  head_.fc2 = Linear(d, 1, rng);

  collect_params();
}

void Vae::collect_params() {
  params_.clear();
  point_proj_.params("enc.point_proj", params_);
  query_proj_.params("enc.query_proj", params_);
  enc_cross_.params("enc.cross", params_);
  for (size_t i = 0; i < enc_self_.size(); ++i) {
    enc_self_[i].params("enc.self" + std::to_string(i), params_);
  }
  enc_ln_.params("enc.ln", params_);
  mean_head_.params("enc.mean_head", params_);
  logvar_head_.params("enc.logvar_head", params_);
  latent_proj_.params("dec.latent_proj", params_);
  for (size_t i = 0; i < dec_self_.size(); ++i) {
    dec_self_[i].params("dec.self" + std::to_string(i), params_);
  }
  dec_query_proj_.params("dec.query_proj", params_);
  dec_cross_.params("dec.cross", params_);
  head_.params("dec.head", params_);
}

Tensor Vae::point_features(const SurfaceSample& samples) const {
  const int64_t n = static_cast<int64_t>(samples.size());
  Tensor pos = fourier_features(samples.positions, cfg_.fourier_bands);
  std::vector<double> extra(static_cast<size_t>(n) * 4);
  for (int64_t i = 0; i < n; ++i) {
    extra[i * 4 + 0] = samples.normals[i][0];
    extra[i * 4 + 1] = samples.normals[i][1];
    extra[i * 4 + 2] = samples.normals[i][2];
    extra[i * 4 + 3] = samples.sharp[i] ? 1.0 : 0.0;
  }
  return concat_cols({pos, Tensor::from_vector({n, 4}, std::move(extra))});
}

std::pair<Tensor, Tensor> Vae::encode(const SurfaceSample& samples,
                                      const AnchorSet& anchors) const {
  if (samples.size() == 0) throw VaeError("encode: empty sample set");
  if (anchors.size() == 0) throw VaeError("encode: empty anchor set");
  check_domain(anchors.positions, "anchor");

  Tensor points = point_proj_.forward(point_features(samples));
  Tensor q = query_proj_.forward(fourier_features(anchors.positions, cfg_.fourier_bands));
  Tensor h = enc_cross_.forward(q, points, &anchors.positions, &samples.positions);
  for (const auto& blk : enc_self_) h = blk.forward(h, &anchors.positions);
  h = enc_ln_.forward(h);
  return {mean_head_.forward(h), logvar_head_.forward(h)};
}

Tensor Vae::processed_latents(const Tensor& z, const AnchorSet& anchors) const {
  if (z.shape().size() != 2 || z.shape()[1] != cfg_.latent_channels) {
    throw VaeError("decode: latent channel width does not match the checkpoint");
  }
  if (z.shape()[0] != static_cast<int64_t>(anchors.size())) {
    throw VaeError("decode: latent rows must align with anchors");
  }
  if (anchors.size() == 0) throw VaeError("decode: empty latent set");
  Tensor lat = latent_proj_.forward(z);
  for (const auto& blk : dec_self_) lat = blk.forward(lat, &anchors.positions);
  return lat;
}

Tensor Vae::decode_from_processed(const Tensor& lat, const AnchorSet& anchors,
                                  const Coords& queries) const {
  Tensor qt = dec_query_proj_.forward(fourier_features(queries, cfg_.fourier_bands));
  Tensor h = dec_cross_.forward(qt, lat, &queries, &anchors.positions);
  return head_.forward(h);  // [K, 1]
}

Tensor Vae::decode_sdf_tensor(const Tensor& z, const AnchorSet& anchors,
                              const Coords& queries) const {
  check_domain(queries, "query");
  return decode_from_processed(processed_latents(z, anchors), anchors, queries);
}

std::vector<double> Vae::decode_sdf(const Tensor& z, const AnchorSet& anchors,
                                    const Coords& queries) const {
  if (queries.empty()) return {};
  check_domain(queries, "query");
  NoGradGuard ng;
  const Tensor lat = processed_latents(z, anchors);
  std::vector<double> out;
  out.reserve(queries.size());
  for (size_t lo = 0; lo < queries.size(); lo += kDecodeShard) {
    const size_t hi = std::min(queries.size(), lo + kDecodeShard);
    const Coords shard(queries.begin() + lo, queries.begin() + hi);
    const Tensor pred = decode_from_processed(lat, anchors, shard);
    out.insert(out.end(), pred.data().begin(), pred.data().end());
  }
  return out;
}

SdfGrid Vae::decode_grid(const Tensor& z, const AnchorSet& anchors, int resolution) const {
  if (resolution < 2) throw VaeError("decode_grid: resolution must be >= 2");
  SdfGrid grid;
  grid.resolution = resolution;
  Coords queries;
  queries.reserve(static_cast<size_t>(resolution) * resolution * resolution);
  for (int ix = 0; ix < resolution; ++ix) {
    for (int iy = 0; iy < resolution; ++iy) {
      for (int iz = 0; iz < resolution; ++iz) {
        queries.push_back({grid.coord(ix), grid.coord(iy), grid.coord(iz)});
      }
    }
  }
  grid.values = decode_sdf(z, anchors, queries);
  return grid;
}

void Vae::save(const std::string& path) const {
  Checkpoint ck;
  ck.put_scalar("config/latent_channels", static_cast<double>(cfg_.latent_channels));
  ck.put_scalar("config/model_dim", static_cast<double>(cfg_.model_dim));
  ck.put_scalar("config/num_heads", static_cast<double>(cfg_.num_heads));
  ck.put_scalar("config/depth_enc", static_cast<double>(cfg_.depth_enc));
  ck.put_scalar("config/depth_dec", static_cast<double>(cfg_.depth_dec));
  ck.put_scalar("config/kl_weight", cfg_.kl_weight);
  ck.put_scalar("config/smallest_resolution", static_cast<double>(cfg_.smallest_resolution));
  ck.put_scalar("config/fourier_bands", static_cast<double>(cfg_.fourier_bands));
  ck.put_params(params_);
  ck.save(path);
}

Vae Vae::load(const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);
  VaeConfig cfg;
  cfg.latent_channels = static_cast<int64_t>(ck.get_scalar("config/latent_channels"));
  cfg.model_dim = static_cast<int64_t>(ck.get_scalar("config/model_dim"));
  cfg.num_heads = static_cast<int64_t>(ck.get_scalar("config/num_heads"));
  cfg.depth_enc = static_cast<int64_t>(ck.get_scalar("config/depth_enc"));
  cfg.depth_dec = static_cast<int64_t>(ck.get_scalar("config/depth_dec"));
  cfg.kl_weight = ck.get_scalar("config/kl_weight");
  cfg.smallest_resolution = static_cast<int64_t>(ck.get_scalar("config/smallest_resolution"));
  cfg.fourier_bands = static_cast<int>(ck.get_scalar("config/fourier_bands"));
  Vae vae(cfg, 0);
  ck.load_params_into(vae.params());
  return vae;
}

// ---- latent sets -----------------------------------------------------------------------

LatentSet latent_set_from(const Tensor& latents, const AnchorSet& anchors, int64_t class_id) {
  if (latents.shape().size() != 2 ||
      latents.shape()[0] != static_cast<int64_t>(anchors.size())) {
    throw VaeError("latent_set_from: latents must be [anchors, channels]");
  }
  LatentSet ls;
  ls.anchors = anchors;
  ls.latents = latents.data();
  ls.channels = latents.shape()[1];
  ls.class_id = class_id;
  return ls;
}

Tensor latent_tensor(const LatentSet& ls, bool requires_grad) {
  return Tensor::from_vector({static_cast<int64_t>(ls.size()), ls.channels}, ls.latents,
                             requires_grad);
}

void save_latent_set(const std::string& path, const LatentSet& ls) {
  if (ls.size() == 0) throw VaeError("save_latent_set: empty latent set");
  if (ls.latents.size() != ls.size() * static_cast<size_t>(ls.channels)) {
    throw VaeError("save_latent_set: latent buffer does not match anchors x channels");
  }
  Checkpoint ck;
  std::vector<double> pos(ls.size() * 3);
  for (size_t i = 0; i < ls.size(); ++i) {
    for (int a = 0; a < 3; ++a) pos[i * 3 + a] = ls.anchors.positions[i][a];
  }
  ck.put("anchors/positions", {static_cast<int64_t>(ls.size()), 3}, std::move(pos));
  ck.put_scalar("anchors/resolution", static_cast<double>(ls.anchors.resolution));
  ck.put_scalar("anchors/kind", static_cast<double>(static_cast<int>(ls.anchors.kind)));
  ck.put("latents", {static_cast<int64_t>(ls.size()), ls.channels}, ls.latents);
  ck.put_scalar("meta/vae_version", static_cast<double>(ls.vae_version));
  ck.put_scalar("meta/class_id", static_cast<double>(ls.class_id));
  ck.save(path);
}

LatentSet load_latent_set(const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);
  LatentSet ls;
  const auto& pos = ck.get("anchors/positions");
  if (pos.shape.size() != 2 || pos.shape[1] != 3) {
    throw VaeError("bad latent set file: anchors/positions must be [M,3]");
  }
  const int64_t m = pos.shape[0];
  ls.anchors.positions.resize(m);
  for (int64_t i = 0; i < m; ++i) {
    for (int a = 0; a < 3; ++a) ls.anchors.positions[i][a] = pos.data[i * 3 + a];
  }
  ls.anchors.resolution = static_cast<int>(ck.get_scalar("anchors/resolution"));
  const int kind = static_cast<int>(ck.get_scalar("anchors/kind"));
  if (kind < 0 || kind > 2) throw VaeError("bad latent set file: unknown anchor kind");
  ls.anchors.kind = static_cast<AnchorKind>(kind);
  const auto& lat = ck.get("latents");
  if (lat.shape.size() != 2 || lat.shape[0] != m) {
    throw VaeError("bad latent set file: latents must align with anchors");
  }
  ls.channels = lat.shape[1];
  ls.latents = lat.data;
  ls.vae_version = static_cast<int64_t>(ck.get_scalar("meta/vae_version"));
  ls.class_id = static_cast<int64_t>(ck.get_scalar("meta/class_id"));
  return ls;
}

// ---- losses and training ---------------------------------------------------------------

Tensor reparameterize(const Tensor& mean, const Tensor& logvar, uint64_t seed) {
  if (mean.shape() != logvar.shape()) throw VaeError("reparameterize: shape mismatch");
  Rng rng(substream(seed, "reparam"));
  Tensor eps = Tensor::randn(mean.shape(), rng);
  return add(mean, mul(exp(scale(logvar, 0.5)), eps));
}

VaeLoss vae_loss(const Tensor& pred_near, const Tensor& target_near, const Tensor& pred_vol,
                 const Tensor& target_vol, const Tensor& mean_t, const Tensor& logvar_t,
                 double kl_weight) {
  if (pred_near.shape() != target_near.shape() || pred_vol.shape() != target_vol.shape()) {
    throw VaeError("vae_loss: prediction/target shape mismatch");
  }
  Tensor d_near = sub(pred_near, target_near);
  Tensor d_vol = sub(pred_vol, target_vol);
  Tensor recon_near = mean(mul(d_near, d_near));
  Tensor recon_vol = mean(mul(d_vol, d_vol));
  // 0.5 * mean(exp(lv) + mu^2 - 1 - lv)
  Tensor kl = scale(
      mean(add(add(exp(logvar_t), mul(mean_t, mean_t)), add_scalar(scale(logvar_t, -1.0), -1.0))),
      0.5);
  VaeLoss out;
  out.recon_near = recon_near.data()[0];
  out.recon_vol = recon_vol.data()[0];
  out.kl = kl.data()[0];
  out.total = add(add(recon_near, recon_vol), scale(kl, kl_weight));
  return out;
}

const char* query_strategy_name(QueryStrategy s) {
  switch (s) {
    case QueryStrategy::surface_point:
      return "point";
    case QueryStrategy::fixed_voxel:
      return "fixed_voxel";
    case QueryStrategy::jittered_point:
      return "jittered";
  }
  throw VaeError("unknown query strategy");
}

QueryStrategy query_strategy_from_name(const std::string& name) {
  if (name == "point") return QueryStrategy::surface_point;
  if (name == "fixed_voxel") return QueryStrategy::fixed_voxel;
  if (name == "jittered") return QueryStrategy::jittered_point;
  throw VaeError("unknown query strategy: " + name);
}

namespace {

struct SdfBatch {
  Coords points;
  std::vector<double> targets;
};

SdfBatch draw_sdf_queries(const Shape& shape, const SurfaceSample& samples, int64_t count,
                          Rng& rng) {
  SdfBatch batch;
  batch.points.reserve(count);
  batch.targets.reserve(count);
  const int64_t near = count / 2;
  for (int64_t i = 0; i < count; ++i) {
    Vec3 p;
    if (i < near) {
      const size_t j = rng.uniform_index(samples.size());
      const double u = rng.uniform(-kSdfNearBand, kSdfNearBand);
      p = vadd(samples.positions[j], vscale(samples.normals[j], u));
      for (int a = 0; a < 3; ++a) p[a] = std::clamp(p[a], -1.0, 1.0);
    } else {
      p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    }
    batch.points.push_back(p);
    batch.targets.push_back(std::clamp(analytic_sdf(shape, p), -kSdfClamp, kSdfClamp));
  }
  return batch;
}

AnchorSet build_anchors(const SurfaceSample& samples, const VaeTrainOptions& opt,
                        int64_t smallest_resolution, int64_t step, uint64_t seed) {
  switch (opt.strategy) {
    case QueryStrategy::surface_point:
    case QueryStrategy::jittered_point: {
      int64_t uniform_count = 0;
      for (uint8_t f : samples.sharp) uniform_count += f ? 0 : 1;
      const int64_t pool = std::min(opt.anchor_pool, uniform_count);
      AnchorSet a = point_queries(samples, pool, substream(seed, "fps", step));
      if (opt.strategy == QueryStrategy::jittered_point) {
        a = jitter_queries(a, smallest_resolution, substream(seed, "jitter", step));
      }
      return a;
    }
    case QueryStrategy::fixed_voxel: {
      const int r = opt.fixed_resolutions[step % opt.fixed_resolutions.size()];
      return voxel_queries(active_voxels(samples, r));
    }
  }
  throw VaeError("unknown query strategy");
}

std::vector<std::vector<double>> snapshot_params(NamedParams& params) {
  std::vector<std::vector<double>> snap;
  snap.reserve(params.size());
  for (auto& [name, t] : params) snap.push_back(t.data());
  return snap;
}

void restore_params(NamedParams& params, const std::vector<std::vector<double>>& snap) {
  for (size_t i = 0; i < params.size(); ++i) params[i].second.leaf_data() = snap[i];
}

}  // namespace

VaeTrainResult train_vae(Vae& vae, const std::vector<Shape>& corpus, const VaeTrainOptions& opt,
                         uint64_t seed) {
  if (corpus.empty()) throw VaeError("train_vae: empty corpus");
  if (opt.steps < 1) throw VaeError("train_vae: steps must be >= 1");
  if (opt.sdf_queries < 2) throw VaeError("train_vae: need at least 2 sdf queries");
  if (opt.start_step < 0 || opt.start_step >= opt.steps) {
    throw VaeError("train_vae: start_step must lie in [0, steps)");
  }

  AdamWConfig ac;
  ac.lr = opt.lr;
  ac.weight_decay = opt.weight_decay;
  AdamW optim(vae.params(), ac);

  std::ofstream log;
  if (!opt.log_csv.empty()) {
    log.open(opt.log_csv, opt.start_step > 0 ? std::ios::app : std::ios::trunc);
    if (!log) throw VaeError("train_vae: cannot open log " + opt.log_csv);
    if (opt.start_step == 0) log << "step,recon_near,recon_vol,kl,lr\n";
  }

  VaeTrainResult result;
  auto snapshot = snapshot_params(vae.params());
  Rng pick(substream(seed, "vae_pick"));
  Rng query_rng(substream(seed, "vae_queries"));

  for (int64_t step = opt.start_step; step < opt.steps; ++step) {
    const Shape& shape = corpus[pick.uniform_index(corpus.size())];
    try {
      const SurfaceSample samples =
          sample_surface(shape, opt.points_per_shape, opt.sharp_fraction,
                         substream(seed, "vae_surface", static_cast<uint64_t>(step)));
      AnchorSet anchors =
          build_anchors(samples, opt, vae.config().smallest_resolution, step, seed);
      anchors = subsample_anchors(anchors, opt.token_budget,
                                  substream(seed, "vae_budget", static_cast<uint64_t>(step)));

      const SdfBatch batch = draw_sdf_queries(shape, samples, opt.sdf_queries, query_rng);
      const int64_t near = static_cast<int64_t>(batch.points.size()) / 2;
      const Coords near_q(batch.points.begin(), batch.points.begin() + near);
      const Coords vol_q(batch.points.begin() + near, batch.points.end());
      Tensor near_t = Tensor::from_vector(
          {near, 1}, std::vector<double>(batch.targets.begin(), batch.targets.begin() + near));
      Tensor vol_t = Tensor::from_vector(
          {static_cast<int64_t>(batch.points.size()) - near, 1},
          std::vector<double>(batch.targets.begin() + near, batch.targets.end()));

      auto [mean_z, logvar_z] = vae.encode(samples, anchors);
      Tensor z = reparameterize(mean_z, logvar_z, substream(seed, "vae_z", step));
      Tensor pred_near = vae.decode_sdf_tensor(z, anchors, near_q);
      Tensor pred_vol = vae.decode_sdf_tensor(z, anchors, vol_q);
      VaeLoss loss =
          vae_loss(pred_near, near_t, pred_vol, vol_t, mean_z, logvar_z, vae.config().kl_weight);

      optim.zero_grad();
      loss.total.backward();
      optim.step();

      const double total = loss.total.data()[0];
      if (step == opt.start_step) result.first_loss = total;
      result.last_loss = total;
      result.steps_run = step + 1 - opt.start_step;  // steps executed by this run
      if (log.is_open()) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%lld,%.10g,%.10g,%.10g,%.10g\n",
                      static_cast<long long>(step), loss.recon_near, loss.recon_vol, loss.kl,
                      optim.lr());
        log << buf;
      }
      if ((step + 1) % opt.snapshot_every == 0) snapshot = snapshot_params(vae.params());
      if (!opt.checkpoint_path.empty() && opt.save_every > 0 &&
          (step + 1) % opt.save_every == 0) {
        vae.save(opt.checkpoint_path);
        if (log.is_open()) log.flush();
      }
    } catch (const NumericError&) {
      restore_params(vae.params(), snapshot);
      result.aborted_non_finite = true;
      break;
    }
  }
  return result;
}

Mesh reconstruct(const Shape& shape, const Vae& vae, int r_query, int g_mc, int64_t token_budget,
                 uint64_t seed, int64_t surface_points, double sharp_fraction) {
  if (r_query < 1) throw VaeError("reconstruct: r_query must be >= 1");
  if (token_budget < 1) throw VaeError("reconstruct: token_budget must be >= 1");
  NoGradGuard ng;
  const SurfaceSample samples =
      sample_surface(shape, surface_points, sharp_fraction, substream(seed, "recon_surface"));
  AnchorSet anchors = voxel_queries(active_voxels(samples, r_query));
  anchors = subsample_anchors(anchors, token_budget, substream(seed, "recon_budget"));
  auto [mean_z, logvar_z] = vae.encode(samples, anchors);
  (void)logvar_z;
  const SdfGrid grid = vae.decode_grid(mean_z, anchors, g_mc);
  return marching_cubes(grid);
}

}  // namespace vx
