// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace forma::gradcore {

using Shape = std::vector<int>;

namespace detail {

struct Node {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // allocated lazily, same size as data
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;  // pushes this->grad into parents

  int64_t numel() const { return int64_t(data.size()); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
  }
};

bool& grad_enabled_flag();

}  // namespace detail

/// Disables graph recording in scope (sampling / evaluation paths).
struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Dense float32 array with optional reverse-mode graph participation.
/// Copies are shallow (aliasing handles, like the usual tensor libraries).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, float value, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<float> data, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[size_t(i)]; }
  int ndim() const { return int(node_->shape.size()); }
  int64_t numel() const { return node_->numel(); }

  float* data() { return node_->data.data(); }
  const float* data() const { return node_->data.data(); }
  std::vector<float>& values() { return node_->data; }
  const std::vector<float>& values() const { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::vector<float>& grad();
  const std::vector<float>& grad() const;
  void zero_grad();

  /// Scalar tensors only.
  float item() const;

  /// Same values, detached from the graph (no copy of history).
  Tensor detach() const;
  Tensor clone() const;

  std::shared_ptr<detail::Node> node() const { return node_; }

  static Tensor wrap(std::shared_ptr<detail::Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Reverse-mode sweep from a scalar loss. Every requires_grad leaf reachable
/// from `loss` receives d(loss)/d(leaf); grads accumulate across calls.
void backward(const Tensor& loss);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, float s);
Tensor mul_scalar(const Tensor& a, float s);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh_(const Tensor& a);
Tensor exp_(const Tensor& a);
Tensor log_(const Tensor& a);
Tensor sqrt_(const Tensor& a);
Tensor abs_(const Tensor& a);
Tensor square(const Tensor& a);

// ---- shape / indexing ----
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor transpose(const Tensor& a);  // 2-D
Tensor gather_rows(const Tensor& a, const std::vector<int>& rows);
Tensor repeat_rows(const Tensor& row, int n);                // [1,d] -> [n,d]
Tensor repeat_interleave_rows(const Tensor& a, int k);       // [n,d] -> [n*k,d]
Tensor concat_rows(const std::vector<Tensor>& parts);

// ---- reductions ----
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [n,k]x[k,m]
Tensor add_rowvec(const Tensor& a, const Tensor& v);  // [n,d] + [d]
Tensor mul_rowvec(const Tensor& a, const Tensor& v);
Tensor mul_colvec(const Tensor& a, const Tensor& w);  // [n,d] * [n,1]

// ---- nn primitives ----
Tensor softmax_rows(const Tensor& a);
/// Row-wise standardization (x - mean) / sqrt(var + eps), before any affine.
Tensor layer_norm_rows(const Tensor& a, float eps = 1e-5f);
/// softmax(q k^T / sqrt(d)) v with q:[n,d], k:[m,d], v:[m,dv].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

// ---- token / image reindexing ----
/// [V*R*R, C] pixels (view-major, row-major) -> [V*(R/p)^2, p*p*C] patch tokens.
Tensor patchify(const Tensor& images, int views, int res, int patch);
/// Inverse of patchify.
Tensor unpatchify(const Tensor& tokens, int views, int res, int patch);

// ---- field sampling / rendering kernels ----
/// Tri-plane bilinear sample-and-sum. planes: [3*P*P, C], plane-major with
/// row = k*P*P + gy*P + gx. points: N*3 floats in [-1,1]^3 (not differentiated).
/// Out-of-range coordinates are clamped; *clamped_count (optional) reports them.
Tensor plane_sample(const Tensor& planes, const std::vector<float>& points, int P,
                    int* clamped_count = nullptr);

/// Alpha-compositing weights from per-sample density. sigma: [R*S,1] ray-major,
/// deltas: R*S segment lengths. w_i = T_i * (1 - exp(-sigma_i * delta_i)).
Tensor composite_weights(const Tensor& sigma, const std::vector<float>& deltas, int samples_per_ray);

/// Sums consecutive blocks of `seg` rows: [R*S, d] -> [R, d].
Tensor segment_sum(const Tensor& a, int seg);

/// VolSDF-style density: sigma = Psi_beta(-sdf)/beta with Psi the Laplace CDF.
Tensor laplace_density(const Tensor& sdf, float beta);
float laplace_density_value(float sdf, float beta);

// ---- losses ----
/// mean over rows of w_i * |a_i - b_i| summed over columns, / sum w (b, w constant).
Tensor l1_weighted(const Tensor& a, const std::vector<float>& b, const std::vector<float>& row_w);
Tensor mse_weighted(const Tensor& a, const std::vector<float>& b, const std::vector<float>& row_w);
/// Binary cross entropy, mean over weighted rows; pred in [0,1], target constant.
Tensor bce_weighted(const Tensor& pred, const std::vector<float>& target, const std::vector<float>& row_w);
/// mean over rows of w_i * (1 - cos(g_i, t_i)); g:[n,3] raw gradients, t unit rows.
Tensor one_minus_cos_rows(const Tensor& g, const std::vector<float>& target, const std::vector<float>& row_w);

}  // namespace forma::gradcore
