// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#include "forma/gradcore/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace forma::gradcore {

namespace detail {

bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

using detail::Node;

namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapC = Eigen::Map<const MatRM>;

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

std::shared_ptr<Node> make_node(Shape shape) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data.assign(size_t(shape_numel(n->shape)), 0.0f);
  return n;
}

void attach(const std::shared_ptr<Node>& out, std::vector<std::shared_ptr<Node>> parents,
            std::function<void(Node&)> fn) {
  bool any = false;
  for (auto& p : parents)
    if (p->requires_grad) any = true;
  if (!grad_enabled() || !any) return;
  out->requires_grad = true;
  out->parents = std::move(parents);
  out->backward = std::move(fn);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  check(a.shape() == b.shape(), std::string(op) + ": shape mismatch");
}

// rows/cols of a tensor viewed as a 2-D matrix (vectors count as one row)
int rows_of(const Tensor& t) { return t.ndim() >= 2 ? t.dim(0) : 1; }
int cols_of(const Tensor& t) { return t.ndim() >= 2 ? t.dim(1) : int(t.numel()); }

Tensor unary_op(const Tensor& a, const std::function<float(float)>& f,
                const std::function<float(float, float)>& dfdx_times_g) {
  auto pa = a.node();
  auto out = make_node(pa->shape);
  const size_t n = pa->data.size();
  for (size_t i = 0; i < n; ++i) out->data[i] = f(pa->data[i]);
  attach(out, {pa}, [pa, dfdx_times_g](Node& o) {
    pa->ensure_grad();
    for (size_t i = 0; i < o.data.size(); ++i)
      pa->grad[i] += dfdx_times_g(pa->data[i], o.grad[i]);
  });
  return Tensor::wrap(out);
}

}  // namespace

// ----------------------------------------------------------------------------
// Tensor basics
// ----------------------------------------------------------------------------

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  auto n = make_node(shape);
  n->requires_grad = requires_grad;
  return wrap(n);
}

Tensor Tensor::full(const Shape& shape, float value, bool requires_grad) {
  auto n = make_node(shape);
  std::fill(n->data.begin(), n->data.end(), value);
  n->requires_grad = requires_grad;
  return wrap(n);
}

Tensor Tensor::from(const Shape& shape, std::vector<float> data, bool requires_grad) {
  check(shape_numel(shape) == int64_t(data.size()), "Tensor::from: size mismatch");
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return wrap(n);
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

std::vector<float>& Tensor::grad() {
  node_->ensure_grad();
  return node_->grad;
}

const std::vector<float>& Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  node_->grad.assign(node_->data.size(), 0.0f);
}

float Tensor::item() const {
  check(numel() == 1, "item: tensor is not scalar");
  return node_->data[0];
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<Node>();
  n->shape = node_->shape;
  n->data = node_->data;
  return wrap(n);
}

Tensor Tensor::clone() const { return detach(); }

void backward(const Tensor& loss) {
  check(loss.numel() == 1, "backward: loss must be scalar");
  auto root = loss.node();
  if (!root->requires_grad) return;

  // iterative post-order DFS; reverse gives loss-to-leaves order
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() == n->data.size()) n->backward(*n);
  }
}

// ----------------------------------------------------------------------------
// elementwise
// ----------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  auto pa = a.node(), pb = b.node();
  auto out = make_node(pa->shape);
  for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = pa->data[i] + pb->data[i];
  attach(out, {pa, pb}, [pa, pb](Node& o) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) pb->grad[i] += o.grad[i];
    }
  });
  return Tensor::wrap(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  auto pa = a.node(), pb = b.node();
  auto out = make_node(pa->shape);
  for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = pa->data[i] - pb->data[i];
  attach(out, {pa, pb}, [pa, pb](Node& o) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) pb->grad[i] -= o.grad[i];
    }
  });
  return Tensor::wrap(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  auto pa = a.node(), pb = b.node();
  auto out = make_node(pa->shape);
  for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = pa->data[i] * pb->data[i];
  attach(out, {pa, pb}, [pa, pb](Node& o) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) pb->grad[i] += o.grad[i] * pa->data[i];
    }
  });
  return Tensor::wrap(out);
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  auto pa = a.node(), pb = b.node();
  auto out = make_node(pa->shape);
  for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = pa->data[i] / pb->data[i];
  attach(out, {pa, pb}, [pa, pb](Node& o) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i] / pb->data[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) {
        const float bi = pb->data[i];
        pb->grad[i] -= o.grad[i] * pa->data[i] / (bi * bi);
      }
    }
  });
  return Tensor::wrap(out);
}

Tensor add_scalar(const Tensor& a, float s) {
  return unary_op(a, [s](float x) { return x + s; }, [](float, float g) { return g; });
}

Tensor mul_scalar(const Tensor& a, float s) {
  return unary_op(a, [s](float x) { return x * s; }, [s](float, float g) { return g * s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0f); }

Tensor relu(const Tensor& a) {
  return unary_op(a, [](float x) { return x > 0 ? x : 0.0f; },
                  [](float x, float g) { return x > 0 ? g : 0.0f; });
}

Tensor gelu(const Tensor& a) {
  constexpr float kInvSqrt2 = 0.70710678118654752440f;
  constexpr float kInvSqrt2Pi = 0.39894228040143267794f;
  return unary_op(
      a, [](float x) { return 0.5f * x * (1.0f + std::erf(x * kInvSqrt2)); },
      [](float x, float g) {
        const float cdf = 0.5f * (1.0f + std::erf(x * kInvSqrt2));
        const float pdf = kInvSqrt2Pi * std::exp(-0.5f * x * x);
        return g * (cdf + x * pdf);
      });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, [](float x) { return 1.0f / (1.0f + std::exp(-x)); },
      [](float x, float g) {
        const float s = 1.0f / (1.0f + std::exp(-x));
        return g * s * (1.0f - s);
      });
}

Tensor tanh_(const Tensor& a) {
  return unary_op(a, [](float x) { return std::tanh(x); },
                  [](float x, float g) {
                    const float t = std::tanh(x);
                    return g * (1.0f - t * t);
                  });
}

Tensor exp_(const Tensor& a) {
  return unary_op(a, [](float x) { return std::exp(x); },
                  [](float x, float g) { return g * std::exp(x); });
}

Tensor log_(const Tensor& a) {
  return unary_op(a, [](float x) { return std::log(x); },
                  [](float x, float g) { return g / x; });
}

Tensor sqrt_(const Tensor& a) {
  return unary_op(a, [](float x) { return std::sqrt(x); },
                  [](float x, float g) { return 0.5f * g / std::sqrt(x); });
}

Tensor abs_(const Tensor& a) {
  return unary_op(a, [](float x) { return std::fabs(x); },
                  [](float x, float g) { return x > 0 ? g : (x < 0 ? -g : 0.0f); });
}

Tensor square(const Tensor& a) {
  return unary_op(a, [](float x) { return x * x; },
                  [](float x, float g) { return 2.0f * x * g; });
}

// ----------------------------------------------------------------------------
// shape / indexing
// ----------------------------------------------------------------------------

Tensor reshape(const Tensor& a, const Shape& shape) {
  check(shape_numel(shape) == a.numel(), "reshape: numel mismatch");
  auto pa = a.node();
  auto out = make_node(shape);
  out->data = pa->data;
  attach(out, {pa}, [pa](Node& o) {
    pa->ensure_grad();
    for (size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i];
  });
  return Tensor::wrap(out);
}

Tensor transpose(const Tensor& a) {
  check(a.ndim() == 2, "transpose: 2-D only");
  const int n = a.dim(0), m = a.dim(1);
  auto pa = a.node();
  auto out = make_node({m, n});
  MapC A(pa->data.data(), n, m);
  MapM O(out->data.data(), m, n);
  O = A.transpose();
  attach(out, {pa}, [pa, n, m](Node& o) {
    pa->ensure_grad();
    MapM GA(pa->grad.data(), n, m);
    MapC GO(o.grad.data(), m, n);
    GA += GO.transpose();
  });
  return Tensor::wrap(out);
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& rows) {
  check(a.ndim() == 2, "gather_rows: 2-D only");
  const int n = a.dim(0), d = a.dim(1);
  for (int r : rows) check(r >= 0 && r < n, "gather_rows: index out of range");
  auto pa = a.node();
  auto out = make_node({int(rows.size()), d});
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy_n(pa->data.data() + size_t(rows[i]) * d, d, out->data.data() + i * d);
  attach(out, {pa}, [pa, rows, d](Node& o) {
    pa->ensure_grad();
    for (size_t i = 0; i < rows.size(); ++i) {
      float* dst = pa->grad.data() + size_t(rows[i]) * d;
      const float* src = o.grad.data() + i * size_t(d);
      for (int c = 0; c < d; ++c) dst[c] += src[c];
    }
  });
  return Tensor::wrap(out);
}

Tensor repeat_rows(const Tensor& row, int n) {
  const int d = cols_of(row);
  check(rows_of(row) == 1, "repeat_rows: input must be a single row");
  auto pa = row.node();
  auto out = make_node({n, d});
  for (int i = 0; i < n; ++i) std::copy_n(pa->data.data(), d, out->data.data() + size_t(i) * d);
  attach(out, {pa}, [pa, n, d](Node& o) {
    pa->ensure_grad();
    for (int i = 0; i < n; ++i) {
      const float* src = o.grad.data() + size_t(i) * d;
      for (int c = 0; c < d; ++c) pa->grad[size_t(c)] += src[c];
    }
  });
  return Tensor::wrap(out);
}

Tensor repeat_interleave_rows(const Tensor& a, int k) {
  check(a.ndim() == 2, "repeat_interleave_rows: 2-D only");
  const int n = a.dim(0), d = a.dim(1);
  auto pa = a.node();
  auto out = make_node({n * k, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j)
      std::copy_n(pa->data.data() + size_t(i) * d, d,
                  out->data.data() + (size_t(i) * k + j) * d);
  attach(out, {pa}, [pa, n, k, d](Node& o) {
    pa->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) {
        const float* src = o.grad.data() + (size_t(i) * k + j) * d;
        float* dst = pa->grad.data() + size_t(i) * d;
        for (int c = 0; c < d; ++c) dst[c] += src[c];
      }
  });
  return Tensor::wrap(out);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_rows: empty input");
  const int d = parts[0].dim(1);
  int n = 0;
  for (const auto& p : parts) {
    check(p.ndim() == 2 && p.dim(1) == d, "concat_rows: column mismatch");
    n += p.dim(0);
  }
  auto out = make_node({n, d});
  std::vector<std::shared_ptr<Node>> parents;
  size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.node()->data.begin(), p.node()->data.end(), out->data.begin() + off);
    off += p.node()->data.size();
    parents.push_back(p.node());
  }
  attach(out, parents, [parents](Node& o) {
    size_t off = 0;
    for (auto& p : parents) {
      if (p->requires_grad) {
        p->ensure_grad();
        for (size_t i = 0; i < p->data.size(); ++i) p->grad[i] += o.grad[off + i];
      }
      off += p->data.size();
    }
  });
  return Tensor::wrap(out);
}

// ----------------------------------------------------------------------------
// reductions
// ----------------------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
  auto pa = a.node();
  auto out = make_node({1});
  double s = 0.0;
  for (float v : pa->data) s += v;
  out->data[0] = float(s);
  attach(out, {pa}, [pa](Node& o) {
    pa->ensure_grad();
    const float g = o.grad[0];
    for (size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += g;
  });
  return Tensor::wrap(out);
}

Tensor mean_all(const Tensor& a) {
  return mul_scalar(sum_all(a), 1.0f / float(a.numel()));
}

// ----------------------------------------------------------------------------
// linear algebra
// ----------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.ndim() == 2 && b.ndim() == 2, "matmul: 2-D only");
  check(a.dim(1) == b.dim(0), "matmul: inner dimension mismatch");
  const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
  auto pa = a.node(), pb = b.node();
  auto out = make_node({n, m});
  {
    MapC A(pa->data.data(), n, k), B(pb->data.data(), k, m);
    MapM O(out->data.data(), n, m);
    O.noalias() = A * B;
  }
  attach(out, {pa, pb}, [pa, pb, n, k, m](Node& o) {
    MapC GO(o.grad.data(), n, m);
    if (pa->requires_grad) {
      pa->ensure_grad();
      MapC B(pb->data.data(), k, m);
      MapM GA(pa->grad.data(), n, k);
      GA.noalias() += GO * B.transpose();
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      MapC A(pa->data.data(), n, k);
      MapM GB(pb->grad.data(), k, m);
      GB.noalias() += A.transpose() * GO;
    }
  });
  return Tensor::wrap(out);
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  check(a.ndim() == 2, "add_rowvec: 2-D only");
  const int n = a.dim(0), d = a.dim(1);
  check(int(v.numel()) == d, "add_rowvec: width mismatch");
  auto pa = a.node(), pv = v.node();
  auto out = make_node(pa->shape);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c)
      out->data[size_t(i) * d + c] = pa->data[size_t(i) * d + c] + pv->data[size_t(c)];
  attach(out, {pa, pv}, [pa, pv, n, d](Node& o) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i];
    }
    if (pv->requires_grad) {
      pv->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int c = 0; c < d; ++c) pv->grad[size_t(c)] += o.grad[size_t(i) * d + c];
    }
  });
  return Tensor::wrap(out);
}

Tensor mul_rowvec(const Tensor& a, const Tensor& v) {
  check(a.ndim() == 2, "mul_rowvec: 2-D only");
  const int n = a.dim(0), d = a.dim(1);
  check(int(v.numel()) == d, "mul_rowvec: width mismatch");
  auto pa = a.node(), pv = v.node();
  auto out = make_node(pa->shape);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c)
      out->data[size_t(i) * d + c] = pa->data[size_t(i) * d + c] * pv->data[size_t(c)];
  attach(out, {pa, pv}, [pa, pv, n, d](Node& o) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int c = 0; c < d; ++c)
          pa->grad[size_t(i) * d + c] += o.grad[size_t(i) * d + c] * pv->data[size_t(c)];
    }
    if (pv->requires_grad) {
      pv->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int c = 0; c < d; ++c)
          pv->grad[size_t(c)] += o.grad[size_t(i) * d + c] * pa->data[size_t(i) * d + c];
    }
  });
  return Tensor::wrap(out);
}

Tensor mul_colvec(const Tensor& a, const Tensor& w) {
  check(a.ndim() == 2, "mul_colvec: 2-D only");
  const int n = a.dim(0), d = a.dim(1);
  check(int(w.numel()) == n, "mul_colvec: height mismatch");
  auto pa = a.node(), pw = w.node();
  auto out = make_node(pa->shape);
  for (int i = 0; i < n; ++i) {
    const float wi = pw->data[size_t(i)];
    for (int c = 0; c < d; ++c) out->data[size_t(i) * d + c] = pa->data[size_t(i) * d + c] * wi;
  }
  attach(out, {pa, pw}, [pa, pw, n, d](Node& o) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (int i = 0; i < n; ++i) {
        const float wi = pw->data[size_t(i)];
        for (int c = 0; c < d; ++c) pa->grad[size_t(i) * d + c] += o.grad[size_t(i) * d + c] * wi;
      }
    }
    if (pw->requires_grad) {
      pw->ensure_grad();
      for (int i = 0; i < n; ++i) {
        float acc = 0.0f;
        for (int c = 0; c < d; ++c) acc += o.grad[size_t(i) * d + c] * pa->data[size_t(i) * d + c];
        pw->grad[size_t(i)] += acc;
      }
    }
  });
  return Tensor::wrap(out);
}

// ----------------------------------------------------------------------------
// nn primitives
// ----------------------------------------------------------------------------

Tensor softmax_rows(const Tensor& a) {
  check(a.ndim() == 2, "softmax_rows: 2-D only");
  const int n = a.dim(0), d = a.dim(1);
  auto pa = a.node();
  auto out = make_node(pa->shape);
  for (int i = 0; i < n; ++i) {
    const float* x = pa->data.data() + size_t(i) * d;
    float* y = out->data.data() + size_t(i) * d;
    float mx = x[0];
    for (int c = 1; c < d; ++c) mx = std::max(mx, x[c]);
    float s = 0.0f;
    for (int c = 0; c < d; ++c) {
      y[c] = std::exp(x[c] - mx);
      s += y[c];
    }
    const float inv = 1.0f / s;
    for (int c = 0; c < d; ++c) y[c] *= inv;
  }
  attach(out, {pa}, [pa, n, d](Node& o) {
    pa->ensure_grad();
    for (int i = 0; i < n; ++i) {
      const float* p = o.data.data() + size_t(i) * d;
      const float* g = o.grad.data() + size_t(i) * d;
      float dot = 0.0f;
      for (int c = 0; c < d; ++c) dot += p[c] * g[c];
      float* gx = pa->grad.data() + size_t(i) * d;
      for (int c = 0; c < d; ++c) gx[c] += p[c] * (g[c] - dot);
    }
  });
  return Tensor::wrap(out);
}

Tensor layer_norm_rows(const Tensor& a, float eps) {
  check(a.ndim() == 2, "layer_norm_rows: 2-D only");
  const int n = a.dim(0), d = a.dim(1);
  auto pa = a.node();
  auto out = make_node(pa->shape);
  auto inv_std = std::make_shared<std::vector<float>>(size_t(n));
  for (int i = 0; i < n; ++i) {
    const float* x = pa->data.data() + size_t(i) * d;
    float* y = out->data.data() + size_t(i) * d;
    float mu = 0.0f;
    for (int c = 0; c < d; ++c) mu += x[c];
    mu /= float(d);
    float var = 0.0f;
    for (int c = 0; c < d; ++c) var += (x[c] - mu) * (x[c] - mu);
    var /= float(d);
    const float is = 1.0f / std::sqrt(var + eps);
    (*inv_std)[size_t(i)] = is;
    for (int c = 0; c < d; ++c) y[c] = (x[c] - mu) * is;
  }
  attach(out, {pa}, [pa, inv_std, n, d](Node& o) {
    pa->ensure_grad();
    for (int i = 0; i < n; ++i) {
      const float* xh = o.data.data() + size_t(i) * d;
      const float* g = o.grad.data() + size_t(i) * d;
      const float is = (*inv_std)[size_t(i)];
      float mg = 0.0f, mgx = 0.0f;
      for (int c = 0; c < d; ++c) {
        mg += g[c];
        mgx += g[c] * xh[c];
      }
      mg /= float(d);
      mgx /= float(d);
      float* gx = pa->grad.data() + size_t(i) * d;
      for (int c = 0; c < d; ++c) gx[c] += is * (g[c] - mg - xh[c] * mgx);
    }
  });
  return Tensor::wrap(out);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  check(q.ndim() == 2 && k.ndim() == 2 && v.ndim() == 2, "attention: 2-D inputs");
  check(q.dim(1) == k.dim(1), "attention: q/k feature dimension mismatch");
  check(k.dim(0) == v.dim(0), "attention: k/v row count mismatch");
  const float scale = 1.0f / std::sqrt(float(q.dim(1)));
  Tensor scores = mul_scalar(matmul(q, transpose(k)), scale);
  return matmul(softmax_rows(scores), v);
}

// ----------------------------------------------------------------------------
// token / image reindexing
// ----------------------------------------------------------------------------

Tensor patchify(const Tensor& images, int views, int res, int patch) {
  check(images.ndim() == 2, "patchify: expect [V*R*R, C]");
  check(res % patch == 0, "patchify: patch must divide resolution");
  const int C = images.dim(1);
  check(images.dim(0) == views * res * res, "patchify: row count mismatch");
  const int g = res / patch;            // patches per side
  const int tpv = g * g;                // tokens per view
  const int fd = patch * patch * C;     // token feature width
  auto pa = images.node();
  auto out = make_node({views * tpv, fd});
  auto scatter = [=](const float* src, float* dst, bool forward_dir) {
    for (int vi = 0; vi < views; ++vi)
      for (int pi = 0; pi < g; ++pi)
        for (int pj = 0; pj < g; ++pj) {
          const size_t tok = (size_t(vi) * tpv + size_t(pi) * g + pj) * fd;
          for (int di = 0; di < patch; ++di)
            for (int dj = 0; dj < patch; ++dj) {
              const size_t pix =
                  (size_t(vi) * res * res + size_t(pi * patch + di) * res + (pj * patch + dj)) * C;
              const size_t f = tok + (size_t(di) * patch + dj) * C;
              for (int c = 0; c < C; ++c) {
                if (forward_dir)
                  dst[f + c] = src[pix + c];
                else
                  dst[pix + c] += src[f + c];
              }
            }
        }
  };
  scatter(pa->data.data(), out->data.data(), true);
  attach(out, {pa}, [pa, scatter](Node& o) {
    pa->ensure_grad();
    scatter(o.grad.data(), pa->grad.data(), false);
  });
  return Tensor::wrap(out);
}

Tensor unpatchify(const Tensor& tokens, int views, int res, int patch) {
  check(tokens.ndim() == 2, "unpatchify: expect [V*T, p*p*C]");
  check(res % patch == 0, "unpatchify: patch must divide resolution");
  const int g = res / patch;
  const int tpv = g * g;
  check(tokens.dim(0) == views * tpv, "unpatchify: token count mismatch");
  check(tokens.dim(1) % (patch * patch) == 0, "unpatchify: feature width mismatch");
  const int C = tokens.dim(1) / (patch * patch);
  const int fd = patch * patch * C;
  auto pa = tokens.node();
  auto out = make_node({views * res * res, C});
  auto move = [=](const float* src, float* dst, bool forward_dir) {
    for (int vi = 0; vi < views; ++vi)
      for (int pi = 0; pi < g; ++pi)
        for (int pj = 0; pj < g; ++pj) {
          const size_t tok = (size_t(vi) * tpv + size_t(pi) * g + pj) * fd;
          for (int di = 0; di < patch; ++di)
            for (int dj = 0; dj < patch; ++dj) {
              const size_t pix =
                  (size_t(vi) * res * res + size_t(pi * patch + di) * res + (pj * patch + dj)) * C;
              const size_t f = tok + (size_t(di) * patch + dj) * C;
              for (int c = 0; c < C; ++c) {
                if (forward_dir)
                  dst[pix + c] = src[f + c];
                else
                  dst[f + c] += src[pix + c];
              }
            }
        }
  };
  move(pa->data.data(), out->data.data(), true);
  attach(out, {pa}, [pa, move](Node& o) {
    pa->ensure_grad();
    move(o.grad.data(), pa->grad.data(), false);
  });
  return Tensor::wrap(out);
}

// ----------------------------------------------------------------------------
// field sampling / rendering kernels
// ----------------------------------------------------------------------------

namespace {

// Bilinear footprint of one point on one plane: 4 (row, weight) pairs.
struct PlaneTap {
  int row[4];
  float w[4];
};

inline PlaneTap plane_tap(float a, float b, int plane, int P, bool* clamped) {
  float u = (a + 1.0f) * 0.5f * float(P - 1);
  float v = (b + 1.0f) * 0.5f * float(P - 1);
  if (u < 0.0f || u > float(P - 1) || v < 0.0f || v > float(P - 1)) *clamped = true;
  u = std::min(std::max(u, 0.0f), float(P - 1));
  v = std::min(std::max(v, 0.0f), float(P - 1));
  int x0 = std::min(int(u), P - 2);
  int y0 = std::min(int(v), P - 2);
  const float fx = u - float(x0);
  const float fy = v - float(y0);
  PlaneTap t;
  const int base = plane * P * P;
  t.row[0] = base + y0 * P + x0;
  t.row[1] = base + y0 * P + x0 + 1;
  t.row[2] = base + (y0 + 1) * P + x0;
  t.row[3] = base + (y0 + 1) * P + x0 + 1;
  t.w[0] = (1 - fx) * (1 - fy);
  t.w[1] = fx * (1 - fy);
  t.w[2] = (1 - fx) * fy;
  t.w[3] = fx * fy;
  return t;
}

}  // namespace

Tensor plane_sample(const Tensor& planes, const std::vector<float>& points, int P,
                    int* clamped_count) {
  check(planes.ndim() == 2 && planes.dim(0) == 3 * P * P, "plane_sample: planes must be [3*P*P, C]");
  check(points.size() % 3 == 0, "plane_sample: points must be N*3");
  const int C = planes.dim(1);
  const int N = int(points.size() / 3);
  auto pp = planes.node();
  auto out = make_node({N, C});
  auto taps = std::make_shared<std::vector<PlaneTap>>(size_t(N) * 3);
  int clamped = 0;
  for (int i = 0; i < N; ++i) {
    const float x = points[size_t(i) * 3], y = points[size_t(i) * 3 + 1], z = points[size_t(i) * 3 + 2];
    bool cl = false;
    (*taps)[size_t(i) * 3 + 0] = plane_tap(x, y, 0, P, &cl);  // XY
    (*taps)[size_t(i) * 3 + 1] = plane_tap(x, z, 1, P, &cl);  // XZ
    (*taps)[size_t(i) * 3 + 2] = plane_tap(y, z, 2, P, &cl);  // YZ
    if (cl) ++clamped;
    float* o = out->data.data() + size_t(i) * C;
    for (int k = 0; k < 3; ++k) {
      const PlaneTap& t = (*taps)[size_t(i) * 3 + k];
      for (int j = 0; j < 4; ++j) {
        const float* row = pp->data.data() + size_t(t.row[j]) * C;
        const float w = t.w[j];
        for (int c = 0; c < C; ++c) o[c] += w * row[c];
      }
    }
  }
  if (clamped_count) *clamped_count = clamped;
  attach(out, {pp}, [pp, taps, N, C](Node& o) {
    pp->ensure_grad();
    for (int i = 0; i < N; ++i) {
      const float* g = o.grad.data() + size_t(i) * C;
      for (int k = 0; k < 3; ++k) {
        const PlaneTap& t = (*taps)[size_t(i) * 3 + k];
        for (int j = 0; j < 4; ++j) {
          float* row = pp->grad.data() + size_t(t.row[j]) * C;
          const float w = t.w[j];
          for (int c = 0; c < C; ++c) row[c] += w * g[c];
        }
      }
    }
  });
  return Tensor::wrap(out);
}

Tensor composite_weights(const Tensor& sigma, const std::vector<float>& deltas,
                         int samples_per_ray) {
  check(sigma.ndim() == 2 && sigma.dim(1) == 1, "composite_weights: sigma must be [N,1]");
  const int N = sigma.dim(0);
  check(N % samples_per_ray == 0, "composite_weights: N not divisible by samples_per_ray");
  check(int(deltas.size()) == N, "composite_weights: deltas size mismatch");
  const int rays = N / samples_per_ray;
  auto ps = sigma.node();
  auto out = make_node({N, 1});
  auto alpha = std::make_shared<std::vector<float>>(size_t(N));
  auto trans = std::make_shared<std::vector<float>>(size_t(N));
  for (int r = 0; r < rays; ++r) {
    float T = 1.0f;
    for (int s = 0; s < samples_per_ray; ++s) {
      const size_t i = size_t(r) * samples_per_ray + s;
      float a = 1.0f - std::exp(-ps->data[i] * deltas[i]);
      a = std::min(a, 1.0f - 1e-7f);
      (*alpha)[i] = a;
      (*trans)[i] = T;
      out->data[i] = T * a;
      T *= (1.0f - a);
    }
  }
  attach(out, {ps}, [ps, alpha, trans, deltas, rays, samples_per_ray](Node& o) {
    ps->ensure_grad();
    for (int r = 0; r < rays; ++r) {
      // dL/da_i = g_i T_i - (sum_{k>i} g_k w_k) / (1 - a_i)
      float suffix = 0.0f;
      for (int s = samples_per_ray - 1; s >= 0; --s) {
        const size_t i = size_t(r) * samples_per_ray + s;
        const float a = (*alpha)[i];
        const float da = o.grad[i] * (*trans)[i] - suffix / (1.0f - a);
        suffix += o.grad[i] * o.data[i];
        ps->grad[i] += da * deltas[i] * (1.0f - a);
      }
    }
  });
  return Tensor::wrap(out);
}

Tensor segment_sum(const Tensor& a, int seg) {
  check(a.ndim() == 2, "segment_sum: 2-D only");
  const int n = a.dim(0), d = a.dim(1);
  check(n % seg == 0, "segment_sum: rows not divisible by segment");
  const int m = n / seg;
  auto pa = a.node();
  auto out = make_node({m, d});
  for (int i = 0; i < m; ++i)
    for (int s = 0; s < seg; ++s) {
      const float* src = pa->data.data() + (size_t(i) * seg + s) * d;
      float* dst = out->data.data() + size_t(i) * d;
      for (int c = 0; c < d; ++c) dst[c] += src[c];
    }
  attach(out, {pa}, [pa, m, seg, d](Node& o) {
    pa->ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int s = 0; s < seg; ++s) {
        float* dst = pa->grad.data() + (size_t(i) * seg + s) * d;
        const float* src = o.grad.data() + size_t(i) * d;
        for (int c = 0; c < d; ++c) dst[c] += src[c];
      }
  });
  return Tensor::wrap(out);
}

float laplace_density_value(float sdf, float beta) {
  if (sdf >= 0.0f) return 0.5f / beta * std::exp(-sdf / beta);
  return (1.0f / beta) * (1.0f - 0.5f * std::exp(sdf / beta));
}

Tensor laplace_density(const Tensor& sdf, float beta) {
  check(beta > 0.0f, "laplace_density: beta must be positive");
  return unary_op(
      sdf, [beta](float s) { return laplace_density_value(s, beta); },
      [beta](float s, float g) {
        // d sigma / d s = -exp(-|s|/beta) / (2 beta^2), continuous at 0
        return g * (-0.5f / (beta * beta) * std::exp(-std::fabs(s) / beta));
      });
}

// ----------------------------------------------------------------------------
// losses
// ----------------------------------------------------------------------------

namespace {

float weight_total(const std::vector<float>& w) {
  double s = 0.0;
  for (float x : w) s += x;
  return float(std::max(s, 1e-8));
}

}  // namespace

Tensor l1_weighted(const Tensor& a, const std::vector<float>& b, const std::vector<float>& row_w) {
  const int n = rows_of(a), d = cols_of(a);
  check(int(b.size()) == n * d, "l1_weighted: target size mismatch");
  check(int(row_w.size()) == n, "l1_weighted: weight size mismatch");
  auto pa = a.node();
  auto out = make_node({1});
  const float denom = weight_total(row_w) * float(d);
  double acc = 0.0;
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c)
      acc += row_w[size_t(i)] * std::fabs(pa->data[size_t(i) * d + c] - b[size_t(i) * d + c]);
  out->data[0] = float(acc) / denom;
  attach(out, {pa}, [pa, b, row_w, n, d, denom](Node& o) {
    pa->ensure_grad();
    const float g = o.grad[0] / denom;
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < d; ++c) {
        const float diff = pa->data[size_t(i) * d + c] - b[size_t(i) * d + c];
        const float s = diff > 0 ? 1.0f : (diff < 0 ? -1.0f : 0.0f);
        pa->grad[size_t(i) * d + c] += g * row_w[size_t(i)] * s;
      }
  });
  return Tensor::wrap(out);
}

Tensor mse_weighted(const Tensor& a, const std::vector<float>& b, const std::vector<float>& row_w) {
  const int n = rows_of(a), d = cols_of(a);
  check(int(b.size()) == n * d, "mse_weighted: target size mismatch");
  check(int(row_w.size()) == n, "mse_weighted: weight size mismatch");
  auto pa = a.node();
  auto out = make_node({1});
  const float denom = weight_total(row_w) * float(d);
  double acc = 0.0;
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c) {
      const float diff = pa->data[size_t(i) * d + c] - b[size_t(i) * d + c];
      acc += row_w[size_t(i)] * diff * diff;
    }
  out->data[0] = float(acc) / denom;
  attach(out, {pa}, [pa, b, row_w, n, d, denom](Node& o) {
    pa->ensure_grad();
    const float g = o.grad[0] / denom;
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < d; ++c) {
        const float diff = pa->data[size_t(i) * d + c] - b[size_t(i) * d + c];
        pa->grad[size_t(i) * d + c] += g * row_w[size_t(i)] * 2.0f * diff;
      }
  });
  return Tensor::wrap(out);
}

Tensor bce_weighted(const Tensor& pred, const std::vector<float>& target,
                    const std::vector<float>& row_w) {
  const int n = rows_of(pred), d = cols_of(pred);
  check(d == 1, "bce_weighted: expect [n,1]");
  check(int(target.size()) == n, "bce_weighted: target size mismatch");
  check(int(row_w.size()) == n, "bce_weighted: weight size mismatch");
  constexpr float kEps = 1e-6f;
  auto pa = pred.node();
  auto out = make_node({1});
  const float denom = weight_total(row_w);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const float p = pa->data[size_t(i)];
    const float t = target[size_t(i)];
    acc += row_w[size_t(i)] * (-t * std::log(p + kEps) - (1.0f - t) * std::log(1.0f - p + kEps));
  }
  out->data[0] = float(acc) / denom;
  attach(out, {pa}, [pa, target, row_w, n, denom](Node& o) {
    pa->ensure_grad();
    const float g = o.grad[0] / denom;
    for (int i = 0; i < n; ++i) {
      const float p = pa->data[size_t(i)];
      const float t = target[size_t(i)];
      pa->grad[size_t(i)] += g * row_w[size_t(i)] * (-t / (p + kEps) + (1.0f - t) / (1.0f - p + kEps));
    }
  });
  return Tensor::wrap(out);
}

Tensor one_minus_cos_rows(const Tensor& g_in, const std::vector<float>& target,
                          const std::vector<float>& row_w) {
  const int n = rows_of(g_in), d = cols_of(g_in);
  check(d == 3, "one_minus_cos_rows: expect [n,3]");
  check(int(target.size()) == n * 3, "one_minus_cos_rows: target size mismatch");
  check(int(row_w.size()) == n, "one_minus_cos_rows: weight size mismatch");
  constexpr float kEps = 1e-8f;
  auto pa = g_in.node();
  auto out = make_node({1});
  const float denom = weight_total(row_w);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const float* g = pa->data.data() + size_t(i) * 3;
    const float* t = target.data() + size_t(i) * 3;
    const float r = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
    const float c = g[0] * t[0] + g[1] * t[1] + g[2] * t[2];
    acc += row_w[size_t(i)] * (1.0f - c / (r + kEps));
  }
  out->data[0] = float(acc) / denom;
  attach(out, {pa}, [pa, target, row_w, n, denom](Node& o) {
    pa->ensure_grad();
    const float gl = o.grad[0] / denom;
    for (int i = 0; i < n; ++i) {
      const float* g = pa->data.data() + size_t(i) * 3;
      const float* t = target.data() + size_t(i) * 3;
      const float r = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
      const float s = r + kEps;
      const float c = g[0] * t[0] + g[1] * t[1] + g[2] * t[2];
      float* gg = pa->grad.data() + size_t(i) * 3;
      for (int k = 0; k < 3; ++k) {
        float term = -t[k] / s;
        if (r > 1e-12f) term += c * g[k] / (r * s * s);
        gg[k] += gl * row_w[size_t(i)] * term;
      }
    }
  });
  return Tensor::wrap(out);
}

}  // namespace forma::gradcore
