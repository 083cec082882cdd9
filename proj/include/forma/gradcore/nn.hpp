// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "forma/gradcore/rng.hpp"
#include "forma/gradcore/tensor.hpp"

#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace forma::gradcore {

/// Ordered, named registry of learnable tensors. Iteration order is
/// registration order, which makes checksums and checkpoints stable.
class ParamStore {
 public:
  Tensor create(const std::string& name, const Shape& shape, Rng& rng, float scale);
  Tensor create_zeros(const std::string& name, const Shape& shape);
  Tensor create_const(const std::string& name, const Shape& shape, float value);
  Tensor add(const std::string& name, Tensor t);

  Tensor get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  int64_t numel() const;

  void zero_grads();
  void set_requires_grad(bool on);
  uint64_t checksum() const;  // FNV-1a 64 over raw float32 bytes, registration order

  bool has_ema() const { return !ema_.empty(); }
  std::unordered_map<std::string, std::vector<float>> ema_;
  int64_t step_count = 0;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, size_t> index_;
};

/// shadow <- decay*shadow + (1-decay)*param; first call copies params.
void ema_update(ParamStore& store, float decay);

/// Scales all grads so their global L2 norm is at most max_norm (no-op when
/// max_norm <= 0). Returns the pre-clip norm.
float clip_grad_norm(ParamStore& store, float max_norm);

/// Swaps EMA shadows into the live parameters for the scope's lifetime.
class EmaScope {
 public:
  explicit EmaScope(ParamStore& store);
  ~EmaScope();
  EmaScope(const EmaScope&) = delete;
  EmaScope& operator=(const EmaScope&) = delete;

 private:
  ParamStore& store_;
  bool active_ = false;
};

struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [out]
  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng,
         bool zero_init = false);
  Tensor operator()(const Tensor& x) const;
};

struct Mlp {
  Linear fc1, fc2;
  Mlp() = default;
  Mlp(ParamStore& ps, const std::string& name, int dim, int hidden, Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

/// Single-head attention with q/k/v/out projections.
struct AttentionLayer {
  Linear q, k, v, o;
  AttentionLayer() = default;
  AttentionLayer(ParamStore& ps, const std::string& name, int dim, Rng& rng);
  Tensor operator()(const Tensor& x_q, const Tensor& x_kv) const;
};

/// Pre-norm transformer block; optional cross-attention to a context sequence.
struct Block {
  AttentionLayer attn;
  std::optional<AttentionLayer> cross;
  Mlp mlp;
  Block() = default;
  Block(ParamStore& ps, const std::string& name, int dim, int hidden, bool with_cross, Rng& rng);
  Tensor operator()(const Tensor& x, const Tensor* context = nullptr) const;
};

}  // namespace forma::gradcore
