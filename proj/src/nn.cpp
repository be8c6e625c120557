#include "vx/nn.hpp"

#include <cmath>
#include <iostream>
#include <numbers>
#include <unordered_map>

namespace vx {

namespace {

Tensor glorot(int64_t in, int64_t out, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(in + out));
  return Tensor::randn({in, out}, rng, stddev, true);
}

}  // namespace

// ---- Linear ----------------------------------------------------------------

Linear::Linear(int64_t in, int64_t out, Rng& rng)
    : w(glorot(in, out, rng)), b(Tensor::zeros({out}, true)) {}

Tensor Linear::forward(const Tensor& x) const { return add_rowvec(matmul(x, w), b); }

void Linear::params(const std::string& prefix, NamedParams& out) {
  out.emplace_back(prefix + ".w", w);
  out.emplace_back(prefix + ".b", b);
}

// ---- LayerNormLayer ---------------------------------------------------------

LayerNormLayer::LayerNormLayer(int64_t dim)
    : gamma(Tensor::full({dim}, 1.0, true)), beta(Tensor::zeros({dim}, true)) {}

Tensor LayerNormLayer::forward(const Tensor& x) const { return layer_norm(x, gamma, beta); }

void LayerNormLayer::params(const std::string& prefix, NamedParams& out) {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

// ---- Mlp ---------------------------------------------------------------------

Mlp::Mlp(int64_t dim, int64_t hidden, Rng& rng) : fc1(dim, hidden, rng), fc2(hidden, dim, rng) {}

Tensor Mlp::forward(const Tensor& x) const { return fc2.forward(gelu(fc1.forward(x))); }

void Mlp::params(const std::string& prefix, NamedParams& out) {
  fc1.params(prefix + ".fc1", out);
  fc2.params(prefix + ".fc2", out);
}

// ---- attention ---------------------------------------------------------------

void AttentionConfig::validate() const {
  if (model_dim <= 0 || num_heads <= 0) {
    throw ShapeError("attention: model_dim and num_heads must be positive");
  }
  if (model_dim % num_heads != 0) {
    throw ShapeError("attention: model_dim " + std::to_string(model_dim) +
                     " not divisible by num_heads " + std::to_string(num_heads));
  }
  if (use_rope && head_dim() % 6 != 0) {
    throw ShapeError("attention: rotary embedding needs head_dim % 6 == 0, got head_dim " +
                     std::to_string(head_dim()));
  }
}

MultiHeadAttention::MultiHeadAttention(AttentionConfig c, Rng& rng) : cfg(c) {
  cfg.validate();
  wq = Linear(cfg.model_dim, cfg.model_dim, rng);
  wk = Linear(cfg.model_dim, cfg.model_dim, rng);
  wv = Linear(cfg.model_dim, cfg.model_dim, rng);
  wo = Linear(cfg.model_dim, cfg.model_dim, rng);
}

Tensor MultiHeadAttention::forward(const Tensor& x_q, const Tensor& x_kv, const Coords* anchors_q,
                                   const Coords* anchors_k) const {
  if (x_q.ndim() != 2 || x_kv.ndim() != 2 || x_q.dim(1) != cfg.model_dim ||
      x_kv.dim(1) != cfg.model_dim) {
    throw ShapeError("attention: tokens must be [*, " + std::to_string(cfg.model_dim) + "], got " +
                     shape_str(x_q.shape()) + " and " + shape_str(x_kv.shape()));
  }
  if ((anchors_q == nullptr) != (anchors_k == nullptr)) {
    throw ShapeError("attention: rotary anchors must be given for both queries and keys");
  }
  Tensor q = wq.forward(x_q);
  Tensor k = wk.forward(x_kv);
  Tensor v = wv.forward(x_kv);
  if (anchors_q != nullptr) {
    if (!cfg.use_rope) {
      throw ShapeError("attention: anchors supplied but rotary embedding disabled in config");
    }
    if (static_cast<int64_t>(anchors_q->size()) != x_q.dim(0) ||
        static_cast<int64_t>(anchors_k->size()) != x_kv.dim(0)) {
      throw ShapeError("attention: anchor counts " + std::to_string(anchors_q->size()) + "/" +
                       std::to_string(anchors_k->size()) + " do not match token counts " +
                       std::to_string(x_q.dim(0)) + "/" + std::to_string(x_kv.dim(0)));
    }
    const RopeSpec spec{cfg.head_dim(), cfg.rope_base, cfg.coord_scale};
    q = rope3d(q, *anchors_q, spec);
    k = rope3d(k, *anchors_k, spec);
  }
  const int64_t hd = cfg.head_dim();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Tensor> heads;
  heads.reserve(cfg.num_heads);
  for (int64_t h = 0; h < cfg.num_heads; ++h) {
    Tensor qh = slice_cols(q, h * hd, (h + 1) * hd);
    Tensor kh = slice_cols(k, h * hd, (h + 1) * hd);
    Tensor vh = slice_cols(v, h * hd, (h + 1) * hd);
    Tensor att = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt_d));
    heads.push_back(matmul(att, vh));
  }
  return wo.forward(concat_cols(heads));
}

void MultiHeadAttention::params(const std::string& prefix, NamedParams& out) {
  wq.params(prefix + ".wq", out);
  wk.params(prefix + ".wk", out);
  wv.params(prefix + ".wv", out);
  wo.params(prefix + ".wo", out);
}

// ---- residual blocks -----------------------------------------------------------

SelfAttentionBlock::SelfAttentionBlock(const AttentionConfig& cfg, Rng& rng)
    : ln1(cfg.model_dim), ln2(cfg.model_dim), attn(cfg, rng), mlp(cfg.model_dim, 4 * cfg.model_dim, rng) {}

Tensor SelfAttentionBlock::forward(const Tensor& x, const Coords* anchors) const {
  Tensor h = ln1.forward(x);
  Tensor y = add(x, attn.forward(h, h, anchors, anchors));
  return add(y, mlp.forward(ln2.forward(y)));
}

void SelfAttentionBlock::params(const std::string& prefix, NamedParams& out) {
  ln1.params(prefix + ".ln1", out);
  ln2.params(prefix + ".ln2", out);
  attn.params(prefix + ".attn", out);
  mlp.params(prefix + ".mlp", out);
}

CrossAttentionBlock::CrossAttentionBlock(const AttentionConfig& cfg, Rng& rng)
    : ln_q(cfg.model_dim),
      ln_kv(cfg.model_dim),
      ln2(cfg.model_dim),
      attn(cfg, rng),
      mlp(cfg.model_dim, 4 * cfg.model_dim, rng) {}

Tensor CrossAttentionBlock::forward(const Tensor& x_q, const Tensor& x_kv, const Coords* anchors_q,
                                    const Coords* anchors_k) const {
  Tensor y = add(x_q, attn.forward(ln_q.forward(x_q), ln_kv.forward(x_kv), anchors_q, anchors_k));
  return add(y, mlp.forward(ln2.forward(y)));
}

void CrossAttentionBlock::params(const std::string& prefix, NamedParams& out) {
  ln_q.params(prefix + ".ln_q", out);
  ln_kv.params(prefix + ".ln_kv", out);
  ln2.params(prefix + ".ln2", out);
  attn.params(prefix + ".attn", out);
  mlp.params(prefix + ".mlp", out);
}

// ---- conditioned block -----------------------------------------------------------

ModulatedBlock::ModulatedBlock(const AttentionConfig& cfg, int64_t cond_dim, Rng& rng)
    : attn(cfg, rng), mlp(cfg.model_dim, 4 * cfg.model_dim, rng) {
  // zero-initialized so every block starts as the identity map
  mod = Linear(cond_dim, 6 * cfg.model_dim, rng);
  std::fill(mod.w.leaf_data().begin(), mod.w.leaf_data().end(), 0.0);
}

Tensor ModulatedBlock::forward(const Tensor& x, const Tensor& cond, const Coords* anchors) const {
  const int64_t d = attn.cfg.model_dim;
  if (cond.ndim() != 2 || cond.dim(0) != 1) {
    throw ShapeError("modulated block: cond must be [1, cond_dim], got " + shape_str(cond.shape()));
  }
  Tensor m = mod.forward(cond);  // [1, 6d]
  auto piece = [&](int64_t i) { return reshape(slice_cols(m, i * d, (i + 1) * d), {d}); };
  Tensor shift1 = piece(0), scale1 = piece(1), gate1 = piece(2);
  Tensor shift2 = piece(3), scale2 = piece(4), gate2 = piece(5);

  Tensor h = layer_norm(x);
  h = add_rowvec(mul_rowvec(h, add_scalar(scale1, 1.0)), shift1);
  Tensor y = add(x, mul_rowvec(attn.forward(h, h, anchors, anchors), gate1));

  Tensor h2 = layer_norm(y);
  h2 = add_rowvec(mul_rowvec(h2, add_scalar(scale2, 1.0)), shift2);
  return add(y, mul_rowvec(mlp.forward(h2), gate2));
}

void ModulatedBlock::params(const std::string& prefix, NamedParams& out) {
  attn.params(prefix + ".attn", out);
  mlp.params(prefix + ".mlp", out);
  mod.params(prefix + ".mod", out);
}

// ---- embeddings ------------------------------------------------------------------

Embedding::Embedding(int64_t count, int64_t dim, Rng& rng)
    : weight(Tensor::randn({count, dim}, rng, 0.02, true)) {}

Tensor Embedding::forward(int64_t id) const {
  if (id < 0 || id >= weight.dim(0)) {
    throw ShapeError("embedding: id " + std::to_string(id) + " out of range [0," +
                     std::to_string(weight.dim(0)) + ")");
  }
  return slice_rows(weight, id, id + 1);
}

void Embedding::params(const std::string& prefix, NamedParams& out) {
  out.emplace_back(prefix + ".weight", weight);
}

Tensor sinusoidal_embedding(double t, int64_t dim, double max_period) {
  if (dim % 2 != 0) throw ShapeError("sinusoidal_embedding: dim must be even");
  const int64_t half = dim / 2;
  std::vector<double> out(static_cast<size_t>(dim));
  for (int64_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(max_period) * static_cast<double>(i) /
                                 static_cast<double>(half));
    out[i] = std::cos(t * freq);
    out[half + i] = std::sin(t * freq);
  }
  return Tensor::from_vector({1, dim}, std::move(out));
}

Tensor fourier_features(const Coords& pts, int bands) {
  const int64_t n = static_cast<int64_t>(pts.size());
  const int64_t width = 3 + 6 * bands;
  std::vector<double> out(static_cast<size_t>(n * width));
  for (int64_t i = 0; i < n; ++i) {
    double* row = &out[i * width];
    row[0] = pts[i][0];
    row[1] = pts[i][1];
    row[2] = pts[i][2];
    int64_t at = 3;
    for (int b = 0; b < bands; ++b) {
      const double f = std::ldexp(std::numbers::pi, b);  // pi * 2^b
      for (int axis = 0; axis < 3; ++axis) {
        row[at++] = std::sin(f * pts[i][axis]);
        row[at++] = std::cos(f * pts[i][axis]);
      }
    }
  }
  return Tensor::from_vector({n, width}, std::move(out));
}

// ---- AdamW -------------------------------------------------------------------------

AdamW::AdamW(NamedParams params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    const size_t n = params_[i].second.data().size();
    m_[i].assign(n, 0.0);
    v_[i].assign(n, 0.0);
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi].second;
    const auto& g = p.grad();
    bool finite = true;
    for (double x : g) {
      if (!std::isfinite(x)) {
        finite = false;
        break;
      }
    }
    if (!finite) {
      ++skipped_;
      const std::string msg = "step " + std::to_string(t_) + ": non-finite gradient, skipping " +
                              params_[pi].first;
      skip_log_.push_back(msg);
      std::cerr << "[adamw] " << msg << "\n";
      continue;
    }
    auto& d = p.leaf_data();
    auto& m = m_[pi];
    auto& v = v_[pi];
    const double decay = 1.0 - cfg_.lr * cfg_.weight_decay;
    for (size_t i = 0; i < d.size(); ++i) {
      d[i] *= decay;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      d[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

std::vector<std::pair<std::string, std::vector<double>>> AdamW::moments_m() const {
  std::vector<std::pair<std::string, std::vector<double>>> out;
  out.reserve(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) out.emplace_back(params_[i].first, m_[i]);
  return out;
}

std::vector<std::pair<std::string, std::vector<double>>> AdamW::moments_v() const {
  std::vector<std::pair<std::string, std::vector<double>>> out;
  out.reserve(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) out.emplace_back(params_[i].first, v_[i]);
  return out;
}

void AdamW::restore_state(int64_t step,
                          const std::vector<std::pair<std::string, std::vector<double>>>& m,
                          const std::vector<std::pair<std::string, std::vector<double>>>& v) {
  std::unordered_map<std::string, const std::vector<double>*> mm, vm;
  for (const auto& [k, val] : m) mm[k] = &val;
  for (const auto& [k, val] : v) vm[k] = &val;
  for (size_t i = 0; i < params_.size(); ++i) {
    const std::string& name = params_[i].first;
    auto im = mm.find(name);
    auto iv = vm.find(name);
    if (im == mm.end() || iv == vm.end()) {
      throw TensorError("optimizer restore: missing moments for " + name);
    }
    if (im->second->size() != m_[i].size() || iv->second->size() != v_[i].size()) {
      throw ShapeError("optimizer restore: moment size mismatch for " + name);
    }
    m_[i] = *im->second;
    v_[i] = *iv->second;
  }
  t_ = step;
}

}  // namespace vx
