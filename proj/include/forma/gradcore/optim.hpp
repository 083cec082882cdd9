// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "forma/gradcore/nn.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace forma::gradcore {

/// Adaptive-moment optimizer with bias correction. Grads are left untouched;
/// callers zero them explicitly each step.
class Adam {
 public:
  explicit Adam(float lr = 1e-3f, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f)
      : lr(lr), beta1(beta1), beta2(beta2), eps(eps) {}

  void step(ParamStore& store);

  float lr;
  float beta1;
  float beta2;
  float eps;

 private:
  struct Moments {
    std::vector<float> m, v;
  };
  std::unordered_map<std::string, Moments> state_;
};

}  // namespace forma::gradcore
