#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "vx/rng.hpp"

namespace vx {

struct TensorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : TensorError {
  using TensorError::TensorError;
};
struct NumericError : TensorError {
  using TensorError::TensorError;
};

using Dims = std::vector<int64_t>;
using Coords = std::vector<std::array<double, 3>>;

std::string shape_str(const Dims& s);
int64_t shape_numel(const Dims& s);

namespace detail {
struct Node;
}

// Dense 64-bit float tensor participating in a reverse-mode gradient tape.
// Value-like handle: copies share the underlying node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Dims shape, bool requires_grad = false);
  static Tensor full(Dims shape, double value, bool requires_grad = false);
  static Tensor from_vector(Dims shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Dims shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);
  static Tensor rand_uniform(Dims shape, Rng& rng, double lo, double hi,
                             bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Dims& shape() const;
  int64_t ndim() const;
  int64_t dim(size_t axis) const;
  int64_t numel() const;
  bool requires_grad() const;

  const std::vector<double>& data() const;
  // direct mutation; valid only for leaves (optimizer updates)
  std::vector<double>& leaf_data();
  double item() const;

  const std::vector<double>& grad() const;  // zeros when untouched by backward
  void zero_grad();
  void backward() const;  // from a scalar; errors if run twice on the same node

  Tensor detach() const;  // constant copy, off the tape

  detail::Node* node() const { return node_.get(); }

 private:
  friend Tensor make_op_result(std::string, Dims, std::vector<double>, std::vector<Tensor>,
                               std::function<void(detail::Node&)>);
  std::shared_ptr<detail::Node> node_;
};

namespace detail {
struct Node {
  Dims shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // allocated lazily
  std::vector<Tensor> parents;
  std::function<void(Node&)> backward_fn;  // null for leaves
  std::string op_name;
  bool backward_ran = false;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};
}  // namespace detail

// Disables tape recording in scope (inference paths).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_enabled();

// ---- primitive ops ------------------------------------------------------
// Shapes must conform exactly; the only implicit broadcast is the explicit
// *_rowvec family. Every op validates operands and checks outputs for
// non-finite values.

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor transpose(const Tensor& a);                // 2-D
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor add_rowvec(const Tensor& a, const Tensor& v);  // [m,n] + [n]
Tensor mul_rowvec(const Tensor& a, const Tensor& v);  // [m,n] * [n]
Tensor softmax_rows(const Tensor& a);                 // softmax over last axis
Tensor layer_norm(const Tensor& a, double eps = 1e-5);  // over last axis, no affine
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor gelu(const Tensor& a);  // exact erf form
Tensor exp(const Tensor& a);
Tensor reshape(const Tensor& a, Dims shape);
Tensor slice_rows(const Tensor& a, int64_t lo, int64_t hi);  // first axis
Tensor slice_cols(const Tensor& a, int64_t lo, int64_t hi);  // last axis of 2-D
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor sum(const Tensor& a);   // scalar
Tensor mean(const Tensor& a);  // scalar

// 3-D rotary embedding. tokens is [M, D] with D a multiple of head_dim and
// head_dim % 6 == 0; channels of each head split into x/y/z thirds, each
// third rotated pairwise with the standard geometric frequency schedule.
// Coordinates are mapped from the normalized domain to angular positions by
// coord_scale.
struct RopeSpec {
  int64_t head_dim = 0;
  double base = 10000.0;
  double coord_scale = 64.0;
};
Tensor rope3d(const Tensor& tokens, const Coords& anchors, const RopeSpec& spec);

}  // namespace vx
