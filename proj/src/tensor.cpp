#include "vx/tensor.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace vx {

std::string shape_str(const Dims& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

int64_t shape_numel(const Dims& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

namespace {

thread_local bool g_grad_enabled = true;

[[noreturn]] void shape_fail(const std::string& op, const std::string& detail) {
  throw ShapeError(op + ": " + detail);
}

void check_finite(const char* op, const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(op) + ": non-finite value in output");
    }
  }
}

void check_defined(const char* op, const Tensor& t) {
  if (!t.defined()) shape_fail(op, "undefined tensor operand");
}

struct BlasInit {
  BlasInit() { openblas_set_num_threads(1); }
};
const BlasInit g_blas_init;

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

// ---- Tensor basics -------------------------------------------------------

Tensor make_op_result(std::string op, Dims shape, std::vector<double> data,
                      std::vector<Tensor> parents, std::function<void(detail::Node&)> backward) {
  check_finite(op.c_str(), data);
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op_name = std::move(op);
  bool rg = false;
  if (g_grad_enabled) {
    for (const Tensor& p : parents) rg = rg || p.requires_grad();
  }
  node->requires_grad = rg;
  if (rg) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward);
  }
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tensor Tensor::zeros(Dims shape, bool requires_grad) {
  return from_vector(std::move(shape), {}, requires_grad);
}

Tensor Tensor::full(Dims shape, double value, bool requires_grad) {
  std::vector<double> d(static_cast<size_t>(shape_numel(shape)), value);
  return from_vector(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_vector({1}, {value}, requires_grad);
}

Tensor Tensor::from_vector(Dims shape, std::vector<double> data, bool requires_grad) {
  const int64_t n = shape_numel(shape);
  if (n < 0) throw ShapeError("tensor: negative extent in shape " + shape_str(shape));
  if (data.empty()) data.assign(static_cast<size_t>(n), 0.0);
  if (static_cast<int64_t>(data.size()) != n) {
    throw ShapeError("tensor: data size " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tensor Tensor::randn(Dims shape, Rng& rng, double stddev, bool requires_grad) {
  std::vector<double> d(static_cast<size_t>(shape_numel(shape)));
  for (double& x : d) x = rng.normal() * stddev;
  return from_vector(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::rand_uniform(Dims shape, Rng& rng, double lo, double hi, bool requires_grad) {
  std::vector<double> d(static_cast<size_t>(shape_numel(shape)));
  for (double& x : d) x = rng.uniform(lo, hi);
  return from_vector(std::move(shape), std::move(d), requires_grad);
}

const Dims& Tensor::shape() const { return node_->shape; }
int64_t Tensor::ndim() const { return static_cast<int64_t>(node_->shape.size()); }
int64_t Tensor::dim(size_t axis) const { return node_->shape.at(axis); }
int64_t Tensor::numel() const { return static_cast<int64_t>(node_->data.size()); }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
const std::vector<double>& Tensor::data() const { return node_->data; }

std::vector<double>& Tensor::leaf_data() {
  if (node_->backward_fn) {
    throw TensorError("leaf_data: tensor " + node_->op_name + " is not a leaf");
  }
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor has shape " + shape_str(shape()));
  return node_->data[0];
}

const std::vector<double>& Tensor::grad() const {
  if (!node_->requires_grad) throw TensorError("grad: tensor does not require grad");
  return node_->grad_buffer();
}

void Tensor::zero_grad() {
  if (node_->requires_grad) std::fill(node_->grad_buffer().begin(), node_->grad_buffer().end(), 0.0);
}

Tensor Tensor::detach() const {
  return Tensor::from_vector(node_->shape, node_->data, false);
}

void Tensor::backward() const {
  detail::Node* root = node_.get();
  if (!root) throw TensorError("backward: undefined tensor");
  if (root->data.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(root->shape));
  }
  if (root->backward_ran) {
    throw TensorError("backward: already ran on this node; rebuild the graph or reset");
  }
  root->backward_ran = true;

  // post-order over nodes that require grad
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, size_t>> stack;
  stack.push_back({root, 0});
  seen.insert(root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].node();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root->grad_buffer().assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    n->grad_buffer();  // backward closures index into n.grad
    if (n->backward_fn) n->backward_fn(*n);
  }
}

// ---- op helpers ----------------------------------------------------------

namespace {

detail::Node& node_of(const Tensor& t) { return *t.node(); }

// rows = product of all but last axis, cols = last axis
std::pair<int64_t, int64_t> as_rows_cols(const Tensor& t) {
  const Dims& s = t.shape();
  if (s.empty()) return {1, 1};
  int64_t cols = s.back();
  int64_t rows = 1;
  for (size_t i = 0; i + 1 < s.size(); ++i) rows *= s[i];
  return {rows, cols};
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    shape_fail(op, "operand shapes differ: " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
  }
}

void require_2d(const char* op, const Tensor& a) {
  if (a.ndim() != 2) shape_fail(op, "expected 2-D tensor, got " + shape_str(a.shape()));
}

}  // namespace

// ---- elementwise ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_defined("add", a);
  check_defined("add", b);
  require_same_shape("add", a, b);
  const auto& x = a.data();
  const auto& y = b.data();
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return make_op_result("add", a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
    const auto& g = n.grad;
    for (int side = 0; side < 2; ++side) {
      detail::Node& p = node_of(n.parents[side]);
      if (!p.requires_grad) continue;
      auto& pg = p.grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_defined("sub", a);
  check_defined("sub", b);
  require_same_shape("sub", a, b);
  const auto& x = a.data();
  const auto& y = b.data();
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return make_op_result("sub", a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
    const auto& g = n.grad;
    detail::Node& pa = node_of(n.parents[0]);
    if (pa.requires_grad) {
      auto& pg = pa.grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
    }
    detail::Node& pb = node_of(n.parents[1]);
    if (pb.requires_grad) {
      auto& pg = pb.grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) pg[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_defined("mul", a);
  check_defined("mul", b);
  require_same_shape("mul", a, b);
  const auto& x = a.data();
  const auto& y = b.data();
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return make_op_result("mul", a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
    const auto& g = n.grad;
    detail::Node& pa = node_of(n.parents[0]);
    detail::Node& pb = node_of(n.parents[1]);
    if (pa.requires_grad) {
      auto& pg = pa.grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      auto& pg = pb.grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * pa.data[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  check_defined("scale", a);
  const auto& x = a.data();
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] * s;
  return make_op_result("scale", a.shape(), std::move(out), {a}, [s](detail::Node& n) {
    detail::Node& p = node_of(n.parents[0]);
    auto& pg = p.grad_buffer();
    for (size_t i = 0; i < n.grad.size(); ++i) pg[i] += n.grad[i] * s;
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  check_defined("add_scalar", a);
  const auto& x = a.data();
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] + s;
  return make_op_result("add_scalar", a.shape(), std::move(out), {a}, [](detail::Node& n) {
    auto& pg = node_of(n.parents[0]).grad_buffer();
    for (size_t i = 0; i < n.grad.size(); ++i) pg[i] += n.grad[i];
  });
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  check_defined("add_rowvec", a);
  check_defined("add_rowvec", v);
  auto [rows, cols] = as_rows_cols(a);
  if (v.ndim() != 1 || v.dim(0) != cols) {
    shape_fail("add_rowvec", "vector " + shape_str(v.shape()) + " does not match last axis of " +
                                 shape_str(a.shape()));
  }
  const auto& x = a.data();
  const auto& y = v.data();
  std::vector<double> out(x.size());
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] + y[c];
  return make_op_result(
      "add_rowvec", a.shape(), std::move(out), {a, v}, [rows, cols](detail::Node& n) {
        detail::Node& pa = node_of(n.parents[0]);
        detail::Node& pv = node_of(n.parents[1]);
        if (pa.requires_grad) {
          auto& pg = pa.grad_buffer();
          for (size_t i = 0; i < n.grad.size(); ++i) pg[i] += n.grad[i];
        }
        if (pv.requires_grad) {
          auto& pg = pv.grad_buffer();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < cols; ++c) pg[c] += n.grad[r * cols + c];
        }
      });
}

Tensor mul_rowvec(const Tensor& a, const Tensor& v) {
  check_defined("mul_rowvec", a);
  check_defined("mul_rowvec", v);
  auto [rows, cols] = as_rows_cols(a);
  if (v.ndim() != 1 || v.dim(0) != cols) {
    shape_fail("mul_rowvec", "vector " + shape_str(v.shape()) + " does not match last axis of " +
                                 shape_str(a.shape()));
  }
  const auto& x = a.data();
  const auto& y = v.data();
  std::vector<double> out(x.size());
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] * y[c];
  return make_op_result(
      "mul_rowvec", a.shape(), std::move(out), {a, v}, [rows, cols](detail::Node& n) {
        detail::Node& pa = node_of(n.parents[0]);
        detail::Node& pv = node_of(n.parents[1]);
        if (pa.requires_grad) {
          auto& pg = pa.grad_buffer();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < cols; ++c) pg[r * cols + c] += n.grad[r * cols + c] * pv.data[c];
        }
        if (pv.requires_grad) {
          auto& pg = pv.grad_buffer();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < cols; ++c) pg[c] += n.grad[r * cols + c] * pa.data[r * cols + c];
        }
      });
}

// ---- matmul / transpose --------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined("matmul", a);
  check_defined("matmul", b);
  require_2d("matmul", a);
  require_2d("matmul", b);
  const int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    shape_fail("matmul", "inner dimensions differ: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
  }
  std::vector<double> out(static_cast<size_t>(m * n), 0.0);
  if (m > 0 && n > 0 && k > 0) {
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(m),
                static_cast<int>(n), static_cast<int>(k), 1.0, a.data().data(),
                static_cast<int>(k), b.data().data(), static_cast<int>(n), 0.0, out.data(),
                static_cast<int>(n));
  }
  return make_op_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& nd) {
    detail::Node& pa = node_of(nd.parents[0]);
    detail::Node& pb = node_of(nd.parents[1]);
    if (m == 0 || n == 0 || k == 0) return;
    if (pa.requires_grad) {
      // dA = dC * B^T
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(m),
                  static_cast<int>(k), static_cast<int>(n), 1.0, nd.grad.data(),
                  static_cast<int>(n), pb.data.data(), static_cast<int>(n), 1.0,
                  pa.grad_buffer().data(), static_cast<int>(k));
    }
    if (pb.requires_grad) {
      // dB = A^T * dC
      cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(k),
                  static_cast<int>(n), static_cast<int>(m), 1.0, pa.data.data(),
                  static_cast<int>(k), nd.grad.data(), static_cast<int>(n), 1.0,
                  pb.grad_buffer().data(), static_cast<int>(n));
    }
  });
}

Tensor transpose(const Tensor& a) {
  check_defined("transpose", a);
  require_2d("transpose", a);
  const int64_t m = a.dim(0), n = a.dim(1);
  const auto& x = a.data();
  std::vector<double> out(x.size());
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return make_op_result("transpose", {n, m}, std::move(out), {a}, [m, n](detail::Node& nd) {
    auto& pg = node_of(nd.parents[0]).grad_buffer();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) pg[i * n + j] += nd.grad[j * m + i];
  });
}

// ---- row-structured nonlinearities ----------------------------------------

Tensor softmax_rows(const Tensor& a) {
  check_defined("softmax", a);
  auto [rows, cols] = as_rows_cols(a);
  if (cols == 0) shape_fail("softmax", "empty last axis in " + shape_str(a.shape()));
  const auto& x = a.data();
  std::vector<double> out(x.size());
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = &x[r * cols];
    double* yr = &out[r * cols];
    double mx = xr[0];
    for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
    double denom = 0.0;
    for (int64_t c = 0; c < cols; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      denom += yr[c];
    }
    for (int64_t c = 0; c < cols; ++c) yr[c] /= denom;
  }
  return make_op_result("softmax", a.shape(), std::move(out), {a}, [rows, cols](detail::Node& n) {
    auto& pg = node_of(n.parents[0]).grad_buffer();
    // dx = y * (dy - sum(dy * y)) rowwise
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = &n.data[r * cols];
      const double* gy = &n.grad[r * cols];
      double dot = 0.0;
      for (int64_t c = 0; c < cols; ++c) dot += gy[c] * y[c];
      for (int64_t c = 0; c < cols; ++c) pg[r * cols + c] += y[c] * (gy[c] - dot);
    }
  });
}

namespace {

Tensor layer_norm_impl(const Tensor& a, const Tensor* gamma, const Tensor* beta, double eps) {
  check_defined("layer_norm", a);
  auto [rows, cols] = as_rows_cols(a);
  if (cols == 0) shape_fail("layer_norm", "empty last axis in " + shape_str(a.shape()));
  if (gamma) {
    if (gamma->ndim() != 1 || gamma->dim(0) != cols || beta->ndim() != 1 || beta->dim(0) != cols) {
      shape_fail("layer_norm", "affine params must be [" + std::to_string(cols) + "]");
    }
  }
  const auto& x = a.data();
  std::vector<double> out(x.size());
  std::vector<double> inv_std(rows), mean_v(rows);
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = &x[r * cols];
    double mu = 0.0;
    for (int64_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= cols;
    double var = 0.0;
    for (int64_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= cols;
    const double is = 1.0 / std::sqrt(var + eps);
    mean_v[r] = mu;
    inv_std[r] = is;
    for (int64_t c = 0; c < cols; ++c) {
      double h = (xr[c] - mu) * is;
      if (gamma) h = h * gamma->data()[c] + beta->data()[c];
      out[r * cols + c] = h;
    }
  }
  std::vector<Tensor> parents = {a};
  if (gamma) {
    parents.push_back(*gamma);
    parents.push_back(*beta);
  }
  const bool affine = gamma != nullptr;
  return make_op_result(
      "layer_norm", a.shape(), std::move(out), std::move(parents),
      [rows, cols, affine, mv = std::move(mean_v), is = std::move(inv_std)](detail::Node& n) {
        detail::Node& pa = node_of(n.parents[0]);
        detail::Node* pgm = affine ? &node_of(n.parents[1]) : nullptr;
        detail::Node* pbt = affine ? &node_of(n.parents[2]) : nullptr;
        for (int64_t r = 0; r < rows; ++r) {
          const double* xr = &pa.data[r * cols];
          const double* gy = &n.grad[r * cols];
          // gradient through the normalized value
          std::vector<double> ghat(cols);
          for (int64_t c = 0; c < cols; ++c) {
            const double xhat = (xr[c] - mv[r]) * is[r];
            const double g = affine ? gy[c] * pgm->data[c] : gy[c];
            ghat[c] = g;
            if (affine) {
              if (pgm->requires_grad) pgm->grad_buffer()[c] += gy[c] * xhat;
              if (pbt->requires_grad) pbt->grad_buffer()[c] += gy[c];
            }
          }
          if (pa.requires_grad) {
            double sum_g = 0.0, sum_gx = 0.0;
            for (int64_t c = 0; c < cols; ++c) {
              const double xhat = (xr[c] - mv[r]) * is[r];
              sum_g += ghat[c];
              sum_gx += ghat[c] * xhat;
            }
            auto& pg = pa.grad_buffer();
            for (int64_t c = 0; c < cols; ++c) {
              const double xhat = (xr[c] - mv[r]) * is[r];
              pg[r * cols + c] +=
                  is[r] * (ghat[c] - sum_g / cols - xhat * sum_gx / cols);
            }
          }
        }
      });
}

}  // namespace

Tensor layer_norm(const Tensor& a, double eps) { return layer_norm_impl(a, nullptr, nullptr, eps); }

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps) {
  return layer_norm_impl(a, &gamma, &beta, eps);
}

Tensor gelu(const Tensor& a) {
  check_defined("gelu", a);
  static const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  static const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  const auto& x = a.data();
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * inv_sqrt2));
  return make_op_result("gelu", a.shape(), std::move(out), {a}, [](detail::Node& n) {
    detail::Node& p = node_of(n.parents[0]);
    auto& pg = p.grad_buffer();
    for (size_t i = 0; i < n.grad.size(); ++i) {
      const double x = p.data[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      pg[i] += n.grad[i] * (cdf + x * pdf);
    }
  });
}

Tensor exp(const Tensor& a) {
  check_defined("exp", a);
  const auto& x = a.data();
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = std::exp(x[i]);
  return make_op_result("exp", a.shape(), std::move(out), {a}, [](detail::Node& n) {
    auto& pg = node_of(n.parents[0]).grad_buffer();
    for (size_t i = 0; i < n.grad.size(); ++i) pg[i] += n.grad[i] * n.data[i];
  });
}

// ---- shape ops -------------------------------------------------------------

Tensor reshape(const Tensor& a, Dims shape) {
  check_defined("reshape", a);
  if (shape_numel(shape) != a.numel()) {
    shape_fail("reshape", shape_str(a.shape()) + " cannot view as " + shape_str(shape));
  }
  return make_op_result("reshape", std::move(shape), a.data(), {a}, [](detail::Node& n) {
    auto& pg = node_of(n.parents[0]).grad_buffer();
    for (size_t i = 0; i < n.grad.size(); ++i) pg[i] += n.grad[i];
  });
}

Tensor slice_rows(const Tensor& a, int64_t lo, int64_t hi) {
  check_defined("slice_rows", a);
  if (a.ndim() < 1) shape_fail("slice_rows", "scalar input");
  const int64_t rows = a.dim(0);
  if (lo < 0 || hi > rows || lo > hi) {
    shape_fail("slice_rows", "range [" + std::to_string(lo) + "," + std::to_string(hi) +
                                 ") out of " + shape_str(a.shape()));
  }
  int64_t row_sz = 1;
  for (size_t i = 1; i < a.shape().size(); ++i) row_sz *= a.shape()[i];
  Dims out_shape = a.shape();
  out_shape[0] = hi - lo;
  std::vector<double> out(static_cast<size_t>((hi - lo) * row_sz));
  std::copy(a.data().begin() + lo * row_sz, a.data().begin() + hi * row_sz, out.begin());
  return make_op_result("slice_rows", std::move(out_shape), std::move(out), {a},
                        [lo, row_sz](detail::Node& n) {
                          auto& pg = node_of(n.parents[0]).grad_buffer();
                          for (size_t i = 0; i < n.grad.size(); ++i)
                            pg[static_cast<size_t>(lo * row_sz) + i] += n.grad[i];
                        });
}

Tensor slice_cols(const Tensor& a, int64_t lo, int64_t hi) {
  check_defined("slice_cols", a);
  require_2d("slice_cols", a);
  const int64_t rows = a.dim(0), cols = a.dim(1);
  if (lo < 0 || hi > cols || lo > hi) {
    shape_fail("slice_cols", "range [" + std::to_string(lo) + "," + std::to_string(hi) +
                                 ") out of " + shape_str(a.shape()));
  }
  const int64_t w = hi - lo;
  std::vector<double> out(static_cast<size_t>(rows * w));
  for (int64_t r = 0; r < rows; ++r)
    std::copy(a.data().begin() + r * cols + lo, a.data().begin() + r * cols + hi,
              out.begin() + r * w);
  return make_op_result("slice_cols", {rows, w}, std::move(out), {a},
                        [rows, cols, lo, w](detail::Node& n) {
                          auto& pg = node_of(n.parents[0]).grad_buffer();
                          for (int64_t r = 0; r < rows; ++r)
                            for (int64_t c = 0; c < w; ++c)
                              pg[r * cols + lo + c] += n.grad[r * w + c];
                        });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) shape_fail("concat_rows", "no operands");
  for (const Tensor& p : parts) check_defined("concat_rows", p);
  Dims tail = parts[0].shape();
  int64_t total = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != parts[0].ndim()) shape_fail("concat_rows", "rank mismatch");
    for (size_t i = 1; i < tail.size(); ++i) {
      if (p.shape()[i] != tail[i]) {
        shape_fail("concat_rows", "trailing dims differ: " + shape_str(p.shape()) + " vs " +
                                      shape_str(tail));
      }
    }
    total += p.dim(0);
  }
  Dims out_shape = tail;
  out_shape[0] = total;
  std::vector<double> out;
  out.reserve(static_cast<size_t>(shape_numel(out_shape)));
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_op_result("concat_rows", std::move(out_shape), std::move(out), std::move(parents),
                        [](detail::Node& n) {
                          size_t off = 0;
                          for (Tensor& par : n.parents) {
                            detail::Node& p = node_of(par);
                            if (p.requires_grad) {
                              auto& pg = p.grad_buffer();
                              for (size_t i = 0; i < p.data.size(); ++i) pg[i] += n.grad[off + i];
                            }
                            off += p.data.size();
                          }
                        });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) shape_fail("concat_cols", "no operands");
  for (const Tensor& p : parts) {
    check_defined("concat_cols", p);
    require_2d("concat_cols", p);
  }
  const int64_t rows = parts[0].dim(0);
  int64_t total = 0;
  for (const Tensor& p : parts) {
    if (p.dim(0) != rows) shape_fail("concat_cols", "row counts differ");
    total += p.dim(1);
  }
  std::vector<double> out(static_cast<size_t>(rows * total));
  int64_t off = 0;
  for (const Tensor& p : parts) {
    const int64_t w = p.dim(1);
    for (int64_t r = 0; r < rows; ++r)
      std::copy(p.data().begin() + r * w, p.data().begin() + (r + 1) * w,
                out.begin() + r * total + off);
    off += w;
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_op_result("concat_cols", {rows, total}, std::move(out), std::move(parents),
                        [rows, total](detail::Node& n) {
                          int64_t off = 0;
                          for (Tensor& par : n.parents) {
                            detail::Node& p = node_of(par);
                            const int64_t w = p.shape[1];
                            if (p.requires_grad) {
                              auto& pg = p.grad_buffer();
                              for (int64_t r = 0; r < rows; ++r)
                                for (int64_t c = 0; c < w; ++c)
                                  pg[r * w + c] += n.grad[r * total + off + c];
                            }
                            off += w;
                          }
                        });
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a) {
  check_defined("sum", a);
  double s = 0.0;
  for (double x : a.data()) s += x;
  return make_op_result("sum", {1}, {s}, {a}, [](detail::Node& n) {
    auto& pg = node_of(n.parents[0]).grad_buffer();
    for (double& g : pg) g += n.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  check_defined("mean", a);
  if (a.numel() == 0) shape_fail("mean", "empty tensor");
  double s = 0.0;
  for (double x : a.data()) s += x;
  const double inv = 1.0 / static_cast<double>(a.numel());
  return make_op_result("mean", {1}, {s * inv}, {a}, [inv](detail::Node& n) {
    auto& pg = node_of(n.parents[0]).grad_buffer();
    for (double& g : pg) g += n.grad[0] * inv;
  });
}

// ---- rotary embedding -------------------------------------------------------

Tensor rope3d(const Tensor& tokens, const Coords& anchors, const RopeSpec& spec) {
  check_defined("rope3d", tokens);
  require_2d("rope3d", tokens);
  const int64_t m = tokens.dim(0), d = tokens.dim(1);
  if (spec.head_dim <= 0 || spec.head_dim % 6 != 0) {
    shape_fail("rope3d", "head_dim " + std::to_string(spec.head_dim) + " must be a multiple of 6");
  }
  if (d % spec.head_dim != 0) {
    shape_fail("rope3d", "model dim " + std::to_string(d) + " not a multiple of head_dim " +
                             std::to_string(spec.head_dim));
  }
  if (static_cast<int64_t>(anchors.size()) != m) {
    shape_fail("rope3d", "anchor count " + std::to_string(anchors.size()) +
                             " does not match token count " + std::to_string(m));
  }
  const int64_t group = spec.head_dim / 3;  // channels per axis
  const int64_t pairs = group / 2;
  // per-pair frequency: base^(-2j/group)
  std::vector<double> freq(pairs);
  for (int64_t j = 0; j < pairs; ++j)
    freq[j] = std::pow(spec.base, -2.0 * static_cast<double>(j) / static_cast<double>(group));

  // precompute cos/sin per (token, axis, pair); reused exactly in backward
  auto cs = std::make_shared<std::vector<double>>(static_cast<size_t>(m * 3 * pairs * 2));
  for (int64_t t = 0; t < m; ++t) {
    for (int axis = 0; axis < 3; ++axis) {
      const double pos = anchors[t][axis] * spec.coord_scale;
      for (int64_t j = 0; j < pairs; ++j) {
        const double ang = pos * freq[j];
        const size_t at = static_cast<size_t>(((t * 3 + axis) * pairs + j) * 2);
        (*cs)[at] = std::cos(ang);
        (*cs)[at + 1] = std::sin(ang);
      }
    }
  }

  const int64_t heads = d / spec.head_dim;
  const auto& x = tokens.data();
  std::vector<double> out(x.size());
  auto apply = [&](const std::vector<double>& src, std::vector<double>& dst, bool inverse) {
    for (int64_t t = 0; t < m; ++t) {
      for (int64_t h = 0; h < heads; ++h) {
        const int64_t base_c = t * d + h * spec.head_dim;
        for (int axis = 0; axis < 3; ++axis) {
          for (int64_t j = 0; j < pairs; ++j) {
            const size_t at = static_cast<size_t>(((t * 3 + axis) * pairs + j) * 2);
            const double c = (*cs)[at];
            const double s = inverse ? -(*cs)[at + 1] : (*cs)[at + 1];
            const int64_t i0 = base_c + axis * group + 2 * j;
            const double a = src[i0], b = src[i0 + 1];
            dst[i0] = a * c - b * s;
            dst[i0 + 1] = a * s + b * c;
          }
        }
      }
    }
  };
  apply(x, out, false);
  return make_op_result("rope3d", tokens.shape(), std::move(out), {tokens},
                        [m, d, heads, group, pairs, cs, hd = spec.head_dim](detail::Node& n) {
                          auto& pg = node_of(n.parents[0]).grad_buffer();
                          // inverse rotation of the incoming gradient
                          for (int64_t t = 0; t < m; ++t) {
                            for (int64_t h = 0; h < heads; ++h) {
                              const int64_t base_c = t * d + h * hd;
                              for (int axis = 0; axis < 3; ++axis) {
                                for (int64_t j = 0; j < pairs; ++j) {
                                  const size_t at =
                                      static_cast<size_t>(((t * 3 + axis) * pairs + j) * 2);
                                  const double c = (*cs)[at];
                                  const double s = -(*cs)[at + 1];
                                  const int64_t i0 = base_c + axis * group + 2 * j;
                                  const double a = n.grad[i0], b = n.grad[i0 + 1];
                                  pg[i0] += a * c - b * s;
                                  pg[i0 + 1] += a * s + b * c;
                                }
                              }
                            }
                          }
                        });
}

}  // namespace vx
