// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#include "forma/gradcore/nn.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace forma::gradcore {

Tensor ParamStore::create(const std::string& name, const Shape& shape, Rng& rng, float scale) {
  Tensor t = Tensor::zeros(shape, true);
  for (auto& x : t.values()) x = rng.uniform(-scale, scale);
  return add(name, t);
}

Tensor ParamStore::create_zeros(const std::string& name, const Shape& shape) {
  return add(name, Tensor::zeros(shape, true));
}

Tensor ParamStore::create_const(const std::string& name, const Shape& shape, float value) {
  return add(name, Tensor::full(shape, value, true));
}

Tensor ParamStore::add(const std::string& name, Tensor t) {
  if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
  index_[name] = items_.size();
  items_.emplace_back(name, t);
  return t;
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown name " + name);
  return items_[it->second].second;
}

int64_t ParamStore::numel() const {
  int64_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [name, t] : items_)
    if (t.requires_grad()) t.zero_grad();
}

void ParamStore::set_requires_grad(bool on) {
  for (auto& [name, t] : items_) t.node()->requires_grad = on;
}

uint64_t ParamStore::checksum() const {
  uint64_t h = 1469598103934665603ull;  // FNV-1a offset basis
  auto mix = [&h](const void* p, size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, t] : items_) {
    mix(name.data(), name.size());
    mix(t.values().data(), t.values().size() * sizeof(float));
  }
  return h;
}

void ema_update(ParamStore& store, float decay) {
  if (!(decay >= 0.0f && decay < 1.0f)) throw std::invalid_argument("ema_update: decay outside [0,1)");
  if (store.ema_.empty()) {
    for (const auto& [name, t] : store.items()) store.ema_[name] = t.values();
    return;
  }
  for (const auto& [name, t] : store.items()) {
    auto it = store.ema_.find(name);
    if (it == store.ema_.end()) throw std::logic_error("ema_update: shadow missing " + name);
    auto& s = it->second;
    const auto& p = t.values();
    for (size_t i = 0; i < s.size(); ++i) s[i] = decay * s[i] + (1.0f - decay) * p[i];
  }
}

float clip_grad_norm(ParamStore& store, float max_norm) {
  double sq = 0.0;
  for (const auto& [name, t] : store.items())
    for (float g : t.node()->grad) sq += double(g) * double(g);
  const float norm = float(std::sqrt(sq));
  if (max_norm > 0.0f && norm > max_norm) {
    const float s = max_norm / (norm + 1e-12f);
    for (const auto& [name, t] : store.items())
      for (float& g : t.node()->grad) g *= s;
  }
  return norm;
}

EmaScope::EmaScope(ParamStore& store) : store_(store) {
  if (!store.has_ema()) return;  // nothing to swap; evaluate raw weights
  for (auto& [name, t] : store.items()) t.node()->data.swap(store.ema_.at(name));
  active_ = true;
}

EmaScope::~EmaScope() {
  if (!active_) return;
  for (auto& [name, t] : store_.items()) t.node()->data.swap(store_.ema_.at(name));
}

Linear::Linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng,
               bool zero_init) {
  if (zero_init) {
    w = ps.create_zeros(name + ".w", {in, out});
    b = ps.create_zeros(name + ".b", {out});
  } else {
    const float scale = 1.0f / std::sqrt(float(in));
    w = ps.create(name + ".w", {in, out}, rng, scale);
    b = ps.create_zeros(name + ".b", {out});
  }
}

Tensor Linear::operator()(const Tensor& x) const { return add_rowvec(matmul(x, w), b); }

Mlp::Mlp(ParamStore& ps, const std::string& name, int dim, int hidden, Rng& rng)
    : fc1(ps, name + ".fc1", dim, hidden, rng), fc2(ps, name + ".fc2", hidden, dim, rng) {}

Tensor Mlp::operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }

AttentionLayer::AttentionLayer(ParamStore& ps, const std::string& name, int dim, Rng& rng)
    : q(ps, name + ".q", dim, dim, rng),
      k(ps, name + ".k", dim, dim, rng),
      v(ps, name + ".v", dim, dim, rng),
      o(ps, name + ".o", dim, dim, rng) {}

Tensor AttentionLayer::operator()(const Tensor& x_q, const Tensor& x_kv) const {
  return o(attention(q(x_q), k(x_kv), v(x_kv)));
}

Block::Block(ParamStore& ps, const std::string& name, int dim, int hidden, bool with_cross,
             Rng& rng)
    : attn(ps, name + ".attn", dim, rng), mlp(ps, name + ".mlp", dim, hidden, rng) {
  if (with_cross) cross.emplace(ps, name + ".cross", dim, rng);
}

Tensor Block::operator()(const Tensor& x, const Tensor* context) const {
  Tensor h = x;
  {
    Tensor n = layer_norm_rows(h);
    h = add(h, attn(n, n));
  }
  if (cross && context) {
    Tensor n = layer_norm_rows(h);
    h = add(h, (*cross)(n, *context));
  }
  h = add(h, mlp(layer_norm_rows(h)));
  return h;
}

}  // namespace forma::gradcore
