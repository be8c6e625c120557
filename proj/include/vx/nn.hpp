#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vx/tensor.hpp"

namespace vx {

// Named parameter handles; modules append (name, tensor) pairs. Tensors are
// shared handles, so optimizers and checkpoints mutate the module weights.
using NamedParams = std::vector<std::pair<std::string, Tensor>>;

struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [out]

  Linear() = default;
  Linear(int64_t in, int64_t out, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void params(const std::string& prefix, NamedParams& out);
};

struct LayerNormLayer {
  Tensor gamma, beta;

  LayerNormLayer() = default;
  explicit LayerNormLayer(int64_t dim);
  Tensor forward(const Tensor& x) const;
  void params(const std::string& prefix, NamedParams& out);
};

struct Mlp {
  Linear fc1, fc2;

  Mlp() = default;
  Mlp(int64_t dim, int64_t hidden, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void params(const std::string& prefix, NamedParams& out);
};

struct AttentionConfig {
  int64_t model_dim = 0;
  int64_t num_heads = 1;
  bool use_rope = false;
  double rope_base = 10000.0;
  double coord_scale = 64.0;

  int64_t head_dim() const { return model_dim / num_heads; }
  void validate() const;  // divisibility; head_dim % 6 == 0 when use_rope
};

// Scaled dot-product attention over explicit head slices. When anchors are
// supplied (both sides required together), queries and keys are rotated by
// the 3-D rotary embedding before scores.
struct MultiHeadAttention {
  AttentionConfig cfg;
  Linear wq, wk, wv, wo;

  MultiHeadAttention() = default;
  MultiHeadAttention(AttentionConfig cfg, Rng& rng);
  Tensor forward(const Tensor& x_q, const Tensor& x_kv, const Coords* anchors_q = nullptr,
                 const Coords* anchors_k = nullptr) const;
  void params(const std::string& prefix, NamedParams& out);
};

// Pre-norm residual block: self-attention then MLP.
struct SelfAttentionBlock {
  LayerNormLayer ln1, ln2;
  MultiHeadAttention attn;
  Mlp mlp;

  SelfAttentionBlock() = default;
  SelfAttentionBlock(const AttentionConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& x, const Coords* anchors = nullptr) const;
  void params(const std::string& prefix, NamedParams& out);
};

// Pre-norm residual block: cross-attention (separate kv stream) then MLP.
struct CrossAttentionBlock {
  LayerNormLayer ln_q, ln_kv, ln2;
  MultiHeadAttention attn;
  Mlp mlp;

  CrossAttentionBlock() = default;
  CrossAttentionBlock(const AttentionConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& x_q, const Tensor& x_kv, const Coords* anchors_q = nullptr,
                 const Coords* anchors_k = nullptr) const;
  void params(const std::string& prefix, NamedParams& out);
};

// Transformer block conditioned by a vector c: layer norms are non-affine and
// each sublayer is modulated by (shift, scale, gate) regressed from c. The
// modulation projection starts at zero so blocks begin as identity.
struct ModulatedBlock {
  MultiHeadAttention attn;
  Mlp mlp;
  Linear mod;  // [cond_dim, 6*model_dim]

  ModulatedBlock() = default;
  ModulatedBlock(const AttentionConfig& cfg, int64_t cond_dim, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& cond, const Coords* anchors) const;
  void params(const std::string& prefix, NamedParams& out);
};

// Learned per-id embedding rows.
struct Embedding {
  Tensor weight;  // [count, dim]

  Embedding() = default;
  Embedding(int64_t count, int64_t dim, Rng& rng);
  Tensor forward(int64_t id) const;  // [1, dim]
  void params(const std::string& prefix, NamedParams& out);
};

// Sinusoidal features of a scalar in [0,1]; [1, dim], off the tape.
Tensor sinusoidal_embedding(double t, int64_t dim, double max_period = 10000.0);

// Positional featurization of 3-D coordinates: raw xyz plus sin/cos of each
// axis at octave frequencies 2^b * pi, b = 0..bands-1. [N, 3 + 6*bands],
// off the tape.
Tensor fourier_features(const Coords& pts, int bands = 8);

// ---- optimizer -------------------------------------------------------------

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Decoupled weight decay applied before the adaptive update; bias-corrected
// moments from step 1. Parameters whose gradient contains a non-finite value
// are skipped for that step and counted (callers log the warning).
class AdamW {
 public:
  AdamW() = default;
  AdamW(NamedParams params, AdamWConfig cfg);

  void step();
  void zero_grad();

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  int64_t step_count() const { return t_; }
  int64_t skipped_updates() const { return skipped_; }
  const std::vector<std::string>& skip_log() const { return skip_log_; }

  // state export/import for checkpoints (moments keyed by parameter name)
  const NamedParams& tracked() const { return params_; }
  std::vector<std::pair<std::string, std::vector<double>>> moments_m() const;
  std::vector<std::pair<std::string, std::vector<double>>> moments_v() const;
  void restore_state(int64_t step,
                     const std::vector<std::pair<std::string, std::vector<double>>>& m,
                     const std::vector<std::pair<std::string, std::vector<double>>>& v);

 private:
  NamedParams params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
  int64_t skipped_ = 0;
  std::vector<std::string> skip_log_;
};

}  // namespace vx
