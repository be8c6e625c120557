#pragma once

// Rectified-flow transformer over latent sets. Velocity-field training with a
// linear coupling plan, anchor-aware rotary attention, class conditioning with
// classifier-free guidance dropout, and an Euler sampler. Token budgets are
// train-time choices only: nothing caps the sequence length at inference, so
// the same checkpoint can sample more anchors than it was trained with.

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vx/nn.hpp"
#include "vx/rng.hpp"
#include "vx/tensor.hpp"
#include "vx/vae.hpp"
#include "vx/voxset.hpp"

namespace vx {

class FlowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FlowConfig {
  int64_t latent_channels = 64;
  int64_t model_dim = 240;  // per-head dim must be a multiple of 6 for 3-axis rotary pairs
  int64_t num_heads = 4;
  int64_t depth = 8;
  int64_t num_classes = 6;
  double cfg_dropout_p = 0.1;
  std::vector<int64_t> token_schedule = {64, 256};

  void validate() const;
};

// xt = (1-t)*x0 + t*x1 and the matching target velocity x1 - x0.
struct Coupled {
  Tensor xt;
  Tensor v_target;
};
Coupled linear_couple(const Tensor& x0, const Tensor& x1, double t);

// v_uncond + scale * (v_cond - v_uncond)
Tensor cfg_velocity(const Tensor& v_cond, const Tensor& v_uncond, double scale);

class FlowModel {
 public:
  FlowModel(const FlowConfig& cfg, uint64_t seed);

  const FlowConfig& config() const { return cfg_; }
  NamedParams& params() { return params_; }

  // Predicts the velocity field for noisy latents bound to anchors at time
  // t in [0,1]. class_id < 0 selects the unconditional (zero embedding) path.
  Tensor denoise(const Tensor& xt, const AnchorSet& anchors, double t, int64_t class_id) const;

  void save(const std::string& path) const;
  static FlowModel load(const std::string& path);

 private:
  Tensor cond_vector(double t, int64_t class_id) const;
  void collect_params();

  FlowConfig cfg_;
  Linear in_proj_;
  Linear t_fc1_, t_fc2_;
  Embedding class_emb_;
  std::vector<ModulatedBlock> blocks_;
  LayerNormLayer out_ln_;
  Linear out_proj_;
  NamedParams params_;
};

using VelocityPredictor =
    std::function<Tensor(const Tensor& xt, const AnchorSet& anchors, double t, int64_t class_id)>;

// One drawn training example: coupling state plus the (possibly dropped)
// conditioning label. class_id is -1 when guidance dropout fired.
struct FlowBatchItem {
  Tensor xt;
  Tensor v_target;
  double t = 0.0;
  int64_t class_id = -1;
  bool dropped = false;
  const LatentSet* example = nullptr;
};

std::vector<FlowBatchItem> draw_flow_batch(const std::vector<const LatentSet*>& batch,
                                           double cfg_dropout_p, Rng& rng);

// Mean over examples of MSE(predictor(xt), v_target); differentiable.
Tensor flow_loss_from(const std::vector<FlowBatchItem>& items, const VelocityPredictor& predictor);

// Draw + loss in one call.
Tensor flow_loss(const std::vector<const LatentSet*>& batch, const VelocityPredictor& predictor,
                 double cfg_dropout_p, Rng& rng);

// Anchors and latent rows subsampled with the same index draw.
LatentSet subsample_latent_set(const LatentSet& ls, int64_t m, uint64_t seed);

struct FlowSampleOptions {
  int64_t steps = 50;
  double guidance_scale = 4.0;
  int64_t class_id = 0;
  uint64_t seed = 0;
};

// Integrates x' = v(x, t) with S uniform Euler steps from x ~ N(0, I) at t=0.
LatentSet flow_sample(const FlowModel& model, const AnchorSet& anchors,
                      const FlowSampleOptions& opt);

struct FlowTrainOptions {
  int64_t steps_per_stage = 1000;
  int64_t batch_size = 4;
  double lr_start = 1e-4;
  double lr_end = 1e-6;
  double weight_decay = 0.0;
  int64_t snapshot_every = 250;
  std::string log_csv;  // step,stage,tokens,loss,lr,dropped
  // Resumption: skip to this absolute step (appends to the log) and, when a
  // checkpoint path is set, save every save_every steps. Resumed runs continue
  // deterministically but restart optimizer moments.
  int64_t start_step = 0;
  std::string checkpoint_path;
  int64_t save_every = 0;
};

struct FlowTrainResult {
  int64_t steps_run = 0;
  double first_loss = 0.0;
  double last_loss = 0.0;
  bool aborted_non_finite = false;
  std::vector<double> stage_step_seconds;  // mean wall-clock per step, one per stage
};

// Stages follow model.config().token_schedule: each stage subsamples every
// example to its token budget and steps the learning rate geometrically from
// lr_start (first stage) to lr_end (last stage).
FlowTrainResult train_flow(FlowModel& model, const std::vector<LatentSet>& corpus,
                           const FlowTrainOptions& opt, uint64_t seed);

}  // namespace vx
