#pragma once

// Semi-structured geometry VAE: a cross-attention encoder maps an N x 7
// surface point cloud (position, normal, sharp flag) to latent tokens
// aligned 1:1 with a set of anchor positions, and a symmetric decoder
// answers signed-distance queries at arbitrary coordinates against those
// latents. Anchors enter attention through 3-D rotary embeddings, so one
// trained model serves any anchor count or query resolution.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vx/checkpoint.hpp"
#include "vx/marching_cubes.hpp"
#include "vx/nn.hpp"
#include "vx/voxset.hpp"

namespace vx {

struct VaeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// near-surface supervision band and the truncation applied to SDF targets
inline constexpr double kSdfNearBand = 0.05;
inline constexpr double kSdfClamp = 0.1;

struct VaeConfig {
  int64_t latent_channels = 64;
  int64_t model_dim = 192;
  int64_t num_heads = 4;
  int64_t depth_enc = 4;  // encoder self-attention blocks after the cross step
  int64_t depth_dec = 6;  // decoder self-attention blocks before the query cross step
  double kl_weight = 1e-6;
  int64_t smallest_resolution = 16;  // reference grid for query jitter amplitude
  int fourier_bands = 8;

  void validate() const;
};

// latent rows bound 1:1 to anchor positions
struct LatentSet {
  AnchorSet anchors;
  std::vector<double> latents;  // row-major, size() x channels
  int64_t channels = 0;
  int64_t vae_version = 1;
  int64_t class_id = -1;  // -1 when unknown

  size_t size() const { return anchors.size(); }
};

LatentSet latent_set_from(const Tensor& latents, const AnchorSet& anchors, int64_t class_id = -1);
Tensor latent_tensor(const LatentSet& ls, bool requires_grad = false);
void save_latent_set(const std::string& path, const LatentSet& ls);
LatentSet load_latent_set(const std::string& path);

class Vae {
 public:
  Vae(VaeConfig cfg, uint64_t seed);

  const VaeConfig& config() const { return cfg_; }
  NamedParams& params() { return params_; }

  // per-anchor posterior mean and log-variance, each [M, C]
  std::pair<Tensor, Tensor> encode(const SurfaceSample& samples, const AnchorSet& anchors) const;

  // differentiable decode of K query coordinates -> [K, 1]
  Tensor decode_sdf_tensor(const Tensor& z, const AnchorSet& anchors, const Coords& queries) const;

  // inference decode, sharded over query batches (output independent of
  // sharding; queries are handled pointwise)
  std::vector<double> decode_sdf(const Tensor& z, const AnchorSet& anchors,
                                 const Coords& queries) const;

  // decode the full corner lattice of a G^3 grid over [-1,1]^3
  SdfGrid decode_grid(const Tensor& z, const AnchorSet& anchors, int resolution) const;

  void save(const std::string& path) const;
  static Vae load(const std::string& path);

 private:
  Tensor point_features(const SurfaceSample& samples) const;
  Tensor processed_latents(const Tensor& z, const AnchorSet& anchors) const;
  Tensor decode_from_processed(const Tensor& lat, const AnchorSet& anchors,
                               const Coords& queries) const;
  void collect_params();

  VaeConfig cfg_;
  Linear point_proj_, query_proj_;
  CrossAttentionBlock enc_cross_;
  std::vector<SelfAttentionBlock> enc_self_;
  LayerNormLayer enc_ln_;
  Linear mean_head_, logvar_head_;
  Linear latent_proj_, dec_query_proj_;
  std::vector<SelfAttentionBlock> dec_self_;
  CrossAttentionBlock dec_cross_;
  Mlp head_;
  NamedParams params_;
};

// z = mean + exp(logvar/2) * eps with eps ~ N(0, I); differentiable through
// mean and logvar, deterministic under seed
Tensor reparameterize(const Tensor& mean, const Tensor& logvar, uint64_t seed);

struct VaeLoss {
  Tensor total;
  double recon_near = 0;
  double recon_vol = 0;
  double kl = 0;
};

// MSE over near-surface queries + MSE over volume queries
// + kl_weight * KL(q || N(0,I)), KL = 0.5 * mean(exp(lv) + mu^2 - 1 - lv)
VaeLoss vae_loss(const Tensor& pred_near, const Tensor& target_near, const Tensor& pred_vol,
                 const Tensor& target_vol, const Tensor& mean, const Tensor& logvar,
                 double kl_weight);

enum class QueryStrategy { surface_point, fixed_voxel, jittered_point };
const char* query_strategy_name(QueryStrategy s);
QueryStrategy query_strategy_from_name(const std::string& name);

struct VaeTrainOptions {
  int64_t steps = 2000;
  double lr = 1e-4;
  double weight_decay = 0.0;
  int64_t points_per_shape = 768;  // encoder input cloud size
  double sharp_fraction = 0.3;
  int64_t anchor_pool = 512;   // FPS pool size before budget subsampling
  int64_t token_budget = 256;  // anchors kept per step
  QueryStrategy strategy = QueryStrategy::jittered_point;
  std::vector<int> fixed_resolutions = {32, 64};  // cycled by fixed_voxel
  int64_t sdf_queries = 512;                      // half near-surface, half volume
  int64_t snapshot_every = 250;
  std::string log_csv;  // per-step "step,recon_near,recon_vol,kl,lr" when set
  // Resumption: start at this absolute step (appends to the log) and, when a
  // checkpoint path is set, save every save_every steps. Resumed runs continue
  // deterministically but restart optimizer moments.
  int64_t start_step = 0;
  std::string checkpoint_path;
  int64_t save_every = 0;
};

struct VaeTrainResult {
  int64_t steps_run = 0;
  double first_loss = 0;
  double last_loss = 0;
  bool aborted_non_finite = false;
};

// single-owner optimization loop; on a non-finite loss the parameters are
// rolled back to the last snapshot and the run aborts
VaeTrainResult train_vae(Vae& vae, const std::vector<Shape>& corpus, const VaeTrainOptions& opt,
                         uint64_t seed);

// voxel queries at r_query -> posterior-mean encode -> dense grid decode ->
// contouring; deterministic under seed
Mesh reconstruct(const Shape& shape, const Vae& vae, int r_query, int g_mc, int64_t token_budget,
                 uint64_t seed, int64_t surface_points = 8192, double sharp_fraction = 0.3);

}  // namespace vx
