#include "vx/flow.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "vx/checkpoint.hpp"

namespace vx {

namespace {

constexpr int64_t kTimeEmbedDim = 256;
// t lives in [0,1]; the sinusoid bank spans periods 2*pi..2*pi*1e4, so spread
// the unit interval across it the way discrete-timestep models do.
constexpr double kTimeFreqScale = 1000.0;

AttentionConfig attn_config(const FlowConfig& cfg) {
  AttentionConfig a;
  a.model_dim = cfg.model_dim;
  a.num_heads = cfg.num_heads;
  a.use_rope = true;
  return a;
}

std::vector<std::vector<double>> snapshot_params(const NamedParams& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& [name, p] : params) out.push_back(p.data());
  return out;
}

void restore_params(NamedParams& params, const std::vector<std::vector<double>>& snap) {
  for (size_t i = 0; i < params.size(); ++i) params[i].second.leaf_data() = snap[i];
}

}  // namespace

void FlowConfig::validate() const {
  if (latent_channels < 1) throw FlowError("flow config: latent_channels must be >= 1");
  if (model_dim < 1 || num_heads < 1 || model_dim % num_heads != 0) {
    throw FlowError("flow config: model_dim must be a positive multiple of num_heads");
  }
  if ((model_dim / num_heads) % 6 != 0) {
    throw FlowError("flow config: per-head dim must be a multiple of 6 for 3-axis rotary pairs");
  }
  if (depth < 1) throw FlowError("flow config: depth must be >= 1");
  if (num_classes < 1) throw FlowError("flow config: num_classes must be >= 1");
  if (!(cfg_dropout_p >= 0.0 && cfg_dropout_p <= 1.0)) {
    throw FlowError("flow config: cfg_dropout_p must lie in [0,1]");
  }
  if (token_schedule.empty()) throw FlowError("flow config: token_schedule must be non-empty");
  for (int64_t b : token_schedule) {
    if (b < 1) throw FlowError("flow config: token budgets must be >= 1");
  }
}

Coupled linear_couple(const Tensor& x0, const Tensor& x1, double t) {
  if (x0.shape() != x1.shape()) {
    throw FlowError("linear_couple: noise and data shapes must match");
  }
  if (!(t >= 0.0 && t <= 1.0)) throw FlowError("linear_couple: t must lie in [0,1]");
  Coupled c;
  c.xt = add(scale(x0, 1.0 - t), scale(x1, t));
  c.v_target = sub(x1, x0);
  return c;
}

Tensor cfg_velocity(const Tensor& v_cond, const Tensor& v_uncond, double scale_value) {
  if (v_cond.shape() != v_uncond.shape()) {
    throw FlowError("cfg_velocity: velocity shapes must match");
  }
  return add(v_uncond, scale(sub(v_cond, v_uncond), scale_value));
}

FlowModel::FlowModel(const FlowConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(substream(seed, "flow_init"));
  const int64_t d = cfg_.model_dim;
  in_proj_ = Linear(cfg_.latent_channels, d, rng);
  t_fc1_ = Linear(kTimeEmbedDim, d, rng);
  t_fc2_ = Linear(d, d, rng);
  class_emb_ = Embedding(cfg_.num_classes, d, rng);
  const AttentionConfig ac = attn_config(cfg_);
  blocks_.reserve(static_cast<size_t>(cfg_.depth));
  for (int64_t i = 0; i < cfg_.depth; ++i) blocks_.emplace_back(ac, d, rng);
  out_ln_ = LayerNormLayer(d);
  out_proj_ = Linear(d, cfg_.latent_channels, rng);
  collect_params();
}

void FlowModel::collect_params() {
  params_.clear();
  in_proj_.params("in_proj", params_);
  t_fc1_.params("time.fc1", params_);
  t_fc2_.params("time.fc2", params_);
  class_emb_.params("class_emb", params_);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].params("block" + std::to_string(i), params_);
  }
  out_ln_.params("out_ln", params_);
  out_proj_.params("out_proj", params_);
}

Tensor FlowModel::cond_vector(double t, int64_t class_id) const {
  if (!(t >= 0.0 && t <= 1.0)) throw FlowError("denoise: t must lie in [0,1]");
  Tensor tf = sinusoidal_embedding(t * kTimeFreqScale, kTimeEmbedDim);
  Tensor c = t_fc2_.forward(gelu(t_fc1_.forward(tf)));
  // class_id < 0 is the unconditional path: the zero embedding adds nothing
  if (class_id >= 0) c = add(c, class_emb_.forward(class_id));
  return c;
}

Tensor FlowModel::denoise(const Tensor& xt, const AnchorSet& anchors, double t,
                          int64_t class_id) const {
  if (xt.ndim() != 2 || xt.dim(1) != cfg_.latent_channels) {
    throw FlowError("denoise: expected [M," + std::to_string(cfg_.latent_channels) +
                    "] latents, got " + shape_str(xt.shape()));
  }
  if (static_cast<int64_t>(anchors.size()) != xt.dim(0)) {
    throw FlowError("denoise: anchors must align one-to-one with latent rows");
  }
  if (class_id >= cfg_.num_classes) throw FlowError("denoise: class id out of range");
  const Tensor cond = cond_vector(t, class_id);
  Tensor h = in_proj_.forward(xt);
  for (const auto& block : blocks_) h = block.forward(h, cond, &anchors.positions);
  return out_proj_.forward(out_ln_.forward(h));
}

void FlowModel::save(const std::string& path) const {
  Checkpoint ck;
  ck.put_scalar("config/latent_channels", static_cast<double>(cfg_.latent_channels));
  ck.put_scalar("config/model_dim", static_cast<double>(cfg_.model_dim));
  ck.put_scalar("config/num_heads", static_cast<double>(cfg_.num_heads));
  ck.put_scalar("config/depth", static_cast<double>(cfg_.depth));
  ck.put_scalar("config/num_classes", static_cast<double>(cfg_.num_classes));
  ck.put_scalar("config/cfg_dropout_p", cfg_.cfg_dropout_p);
  std::vector<double> sched(cfg_.token_schedule.begin(), cfg_.token_schedule.end());
  ck.put("config/token_schedule", {static_cast<int64_t>(sched.size())}, sched);
  ck.put_params(params_);
  ck.save(path);
}

FlowModel FlowModel::load(const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);
  FlowConfig cfg;
  cfg.latent_channels = static_cast<int64_t>(ck.get_scalar("config/latent_channels"));
  cfg.model_dim = static_cast<int64_t>(ck.get_scalar("config/model_dim"));
  cfg.num_heads = static_cast<int64_t>(ck.get_scalar("config/num_heads"));
  cfg.depth = static_cast<int64_t>(ck.get_scalar("config/depth"));
  cfg.num_classes = static_cast<int64_t>(ck.get_scalar("config/num_classes"));
  cfg.cfg_dropout_p = ck.get_scalar("config/cfg_dropout_p");
  cfg.token_schedule.clear();
  for (double v : ck.get("config/token_schedule").data) {
    cfg.token_schedule.push_back(static_cast<int64_t>(v));
  }
  FlowModel model(cfg, 0);
  ck.load_params_into(model.params_);
  return model;
}

std::vector<FlowBatchItem> draw_flow_batch(const std::vector<const LatentSet*>& batch,
                                           double cfg_dropout_p, Rng& rng) {
  if (batch.empty()) throw FlowError("draw_flow_batch: empty batch");
  std::vector<FlowBatchItem> items;
  items.reserve(batch.size());
  for (const LatentSet* ls : batch) {
    if (ls == nullptr || ls->size() == 0) throw FlowError("draw_flow_batch: empty latent set");
    FlowBatchItem item;
    item.example = ls;
    item.t = rng.uniform();
    item.dropped = rng.uniform() < cfg_dropout_p;
    item.class_id = item.dropped ? -1 : ls->class_id;
    const Tensor x1 = latent_tensor(*ls);
    const Tensor x0 = Tensor::randn(x1.shape(), rng);
    Coupled c = linear_couple(x0, x1, item.t);
    item.xt = c.xt;
    item.v_target = c.v_target;
    items.push_back(std::move(item));
  }
  return items;
}

Tensor flow_loss_from(const std::vector<FlowBatchItem>& items, const VelocityPredictor& predictor) {
  if (items.empty()) throw FlowError("flow_loss_from: empty batch");
  Tensor total;
  bool first = true;
  for (const auto& item : items) {
    Tensor pred = predictor(item.xt, item.example->anchors, item.t, item.class_id);
    if (pred.shape() != item.v_target.shape()) {
      throw FlowError("flow loss: predictor output shape mismatch");
    }
    Tensor d = sub(pred, item.v_target);
    Tensor mse = mean(mul(d, d));
    total = first ? mse : add(total, mse);
    first = false;
  }
  return scale(total, 1.0 / static_cast<double>(items.size()));
}

Tensor flow_loss(const std::vector<const LatentSet*>& batch, const VelocityPredictor& predictor,
                 double cfg_dropout_p, Rng& rng) {
  return flow_loss_from(draw_flow_batch(batch, cfg_dropout_p, rng), predictor);
}

LatentSet subsample_latent_set(const LatentSet& ls, int64_t m, uint64_t seed) {
  const int64_t total = static_cast<int64_t>(ls.size());
  if (m >= total && m >= 1) return ls;
  const std::vector<int64_t> idx = subsample_indices(total, m, seed);
  LatentSet out;
  out.channels = ls.channels;
  out.vae_version = ls.vae_version;
  out.class_id = ls.class_id;
  out.anchors.resolution = ls.anchors.resolution;
  out.anchors.kind = ls.anchors.kind;
  out.anchors.positions.reserve(idx.size());
  out.latents.reserve(idx.size() * static_cast<size_t>(ls.channels));
  for (int64_t i : idx) {
    out.anchors.positions.push_back(ls.anchors.positions[i]);
    const auto* row = ls.latents.data() + i * ls.channels;
    out.latents.insert(out.latents.end(), row, row + ls.channels);
  }
  return out;
}

LatentSet flow_sample(const FlowModel& model, const AnchorSet& anchors,
                      const FlowSampleOptions& opt) {
  if (opt.steps < 1) throw FlowError("flow_sample: steps must be >= 1");
  if (anchors.size() == 0) throw FlowError("flow_sample: need at least one anchor");
  NoGradGuard guard;
  Rng rng(substream(opt.seed, "flow_sample"));
  const int64_t m = static_cast<int64_t>(anchors.size());
  Tensor x = Tensor::randn({m, model.config().latent_channels}, rng);
  const double dt = 1.0 / static_cast<double>(opt.steps);
  for (int64_t s = 0; s < opt.steps; ++s) {
    const double t = static_cast<double>(s) * dt;
    Tensor v = model.denoise(x, anchors, t, opt.class_id);
    if (opt.guidance_scale != 1.0) {
      Tensor v_uncond = model.denoise(x, anchors, t, -1);
      v = cfg_velocity(v, v_uncond, opt.guidance_scale);
    }
    x = add(x, scale(v, dt));
  }
  return latent_set_from(x, anchors, opt.class_id);
}

FlowTrainResult train_flow(FlowModel& model, const std::vector<LatentSet>& corpus,
                           const FlowTrainOptions& opt, uint64_t seed) {
  if (corpus.empty()) throw FlowError("train_flow: empty corpus");
  if (opt.steps_per_stage < 1) throw FlowError("train_flow: steps_per_stage must be >= 1");
  if (opt.batch_size < 1) throw FlowError("train_flow: batch_size must be >= 1");
  for (const auto& ls : corpus) {
    if (ls.channels != model.config().latent_channels) {
      throw FlowError("train_flow: corpus channels do not match the model");
    }
    if (ls.size() == 0) throw FlowError("train_flow: corpus contains an empty latent set");
  }

  const std::vector<int64_t>& schedule = model.config().token_schedule;
  const int64_t stages = static_cast<int64_t>(schedule.size());
  const int64_t total_steps = stages * opt.steps_per_stage;
  if (opt.start_step < 0 || opt.start_step >= total_steps) {
    throw FlowError("train_flow: start_step must lie in [0, stages*steps_per_stage)");
  }
  AdamWConfig ac;
  ac.lr = opt.lr_start;
  ac.weight_decay = opt.weight_decay;
  AdamW optim(model.params(), ac);

  std::ofstream log;
  if (!opt.log_csv.empty()) {
    log.open(opt.log_csv, opt.start_step > 0 ? std::ios::app : std::ios::trunc);
    if (!log) throw FlowError("train_flow: cannot open log file " + opt.log_csv);
    if (opt.start_step == 0) log << "step,stage,tokens,loss,lr,dropped\n";
  }

  Rng pick(substream(seed, "flow_pick"));
  Rng couple(substream(seed, "flow_couple"));
  auto snapshot = snapshot_params(model.params());
  const VelocityPredictor predictor = [&model](const Tensor& xt, const AnchorSet& a, double t,
                                               int64_t cls) { return model.denoise(xt, a, t, cls); };

  FlowTrainResult result;
  result.stage_step_seconds.assign(static_cast<size_t>(stages), 0.0);
  int64_t global = 0;
  for (int64_t stage = 0; stage < stages && !result.aborted_non_finite; ++stage) {
    const int64_t budget = schedule[stage];
    const double lr = stages == 1 ? opt.lr_start
                                  : opt.lr_start * std::pow(opt.lr_end / opt.lr_start,
                                                            static_cast<double>(stage) /
                                                                static_cast<double>(stages - 1));
    optim.set_lr(lr);
    double stage_seconds = 0.0;
    int64_t stage_steps = 0;
    for (int64_t s = 0; s < opt.steps_per_stage; ++s, ++global) {
      if (global < opt.start_step) continue;
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<LatentSet> subs;
      subs.reserve(static_cast<size_t>(opt.batch_size));
      for (int64_t b = 0; b < opt.batch_size; ++b) {
        const LatentSet& ex = corpus[pick.uniform_index(corpus.size())];
        subs.push_back(subsample_latent_set(
            ex, budget,
            substream(seed, "flow_budget",
                      static_cast<uint64_t>(global) * static_cast<uint64_t>(opt.batch_size) +
                          static_cast<uint64_t>(b))));
      }
      std::vector<const LatentSet*> ptrs;
      ptrs.reserve(subs.size());
      for (const auto& sub : subs) ptrs.push_back(&sub);

      double loss_value = 0.0;
      int64_t dropped = 0;
      try {
        auto items = draw_flow_batch(ptrs, model.config().cfg_dropout_p, couple);
        for (const auto& item : items) dropped += item.dropped ? 1 : 0;
        Tensor loss = flow_loss_from(items, predictor);
        optim.zero_grad();
        loss.backward();
        optim.step();
        loss_value = loss.data()[0];
      } catch (const NumericError&) {
        restore_params(model.params(), snapshot);
        result.aborted_non_finite = true;
        break;
      }
      if (result.steps_run == 0) result.first_loss = loss_value;
      result.last_loss = loss_value;
      ++result.steps_run;
      ++stage_steps;
      stage_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

      if (log) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%lld,%lld,%lld,%.10g,%.10g,%lld\n",
                      static_cast<long long>(global), static_cast<long long>(stage),
                      static_cast<long long>(budget), loss_value, lr,
                      static_cast<long long>(dropped));
        log << buf;
      }
      if ((global + 1) % opt.snapshot_every == 0) snapshot = snapshot_params(model.params());
      if (!opt.checkpoint_path.empty() && opt.save_every > 0 &&
          (global + 1) % opt.save_every == 0) {
        model.save(opt.checkpoint_path);
        if (log) log.flush();
      }
    }
    if (stage_steps > 0) {
      result.stage_step_seconds[static_cast<size_t>(stage)] =
          stage_seconds / static_cast<double>(stage_steps);
    }
  }
  return result;
}

}  // namespace vx
