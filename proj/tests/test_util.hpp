// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "forma/gradcore/rng.hpp"
#include "forma/gradcore/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace forma::testutil {

using gradcore::Rng;
using gradcore::Tensor;

inline Tensor random_tensor(const gradcore::Shape& shape, Rng& rng, float lo = -1.0f,
                            float hi = 1.0f) {
  Tensor t = Tensor::zeros(shape);
  for (auto& x : t.values()) x = rng.uniform(lo, hi);
  return t;
}

struct FdReport {
  // worst probe's |fd - grad| / (atol + rtol * max(|fd|, |grad|)); < 1 passes
  float max_ratio = 0.0f;
  int probes = 0;
};

// Central-difference check of d loss/d x for a tensor-valued op.
//
// The op output is reduced to a scalar through sum((op(x) - op(x0)) * c) with
// a fixed random c, so untouched elements cancel exactly in float32 and the
// difference quotient keeps its precision at h = 1e-3. What remains is the
// quantization of the stored float32 outputs, which bounds what the quotient
// can resolve: atol ~ eps32 * max|y*c| / h. Probes pass the usual gradcheck
// condition |fd - g| <= atol + rtol * max(|fd|, |g|).
inline FdReport fd_check(Tensor x, const std::function<Tensor(const Tensor&)>& op, int probes,
                         uint64_t seed, float h = 1e-3f, float rtol = 1e-4f) {
  using namespace gradcore;
  x.set_requires_grad(true);
  Rng rng(seed);

  Tensor y0 = op(x).detach();
  Tensor c = Tensor::zeros(y0.shape());
  for (auto& v : c.values()) v = (rng.uniform() < 0.5f ? -1.0f : 1.0f) * rng.uniform(0.75f, 1.25f);

  float ymax = 0.1f;
  for (int64_t i = 0; i < y0.numel(); ++i)
    ymax = std::max(ymax, std::fabs(y0.data()[i] * c.data()[i]));
  const float eps32 = 1.2e-7f;
  const float atol = 8.0f * eps32 * ymax / h;

  auto loss_of = [&](const Tensor& t) { return sum_all(mul(sub(op(t), y0), c)); };

  x.zero_grad();
  backward(loss_of(x));
  std::vector<float> g = x.grad();

  FdReport rep;
  const int64_t n = x.numel();
  for (int p = 0; p < probes; ++p) {
    const int i = rng.uniform_int(int(n));
    float* xi = x.data() + i;
    const float orig = *xi;
    float lp, lm;
    {
      NoGradGuard ng;
      *xi = orig + h;
      lp = loss_of(x).item();
      *xi = orig - h;
      lm = loss_of(x).item();
      *xi = orig;
    }
    const float fd = (lp - lm) / (2.0f * h);
    const float err = std::fabs(fd - g[size_t(i)]);
    const float ratio = err / (atol + rtol * std::max(std::fabs(fd), std::fabs(g[size_t(i)])));
    rep.max_ratio = std::max(rep.max_ratio, ratio);
    ++rep.probes;
  }
  return rep;
}

}  // namespace forma::testutil
