// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#include "forma/gradcore/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace forma::gradcore {

void Adam::step(ParamStore& store) {
  const int64_t t = store.step_count + 1;
  const float bc1 = 1.0f - std::pow(beta1, float(t));
  const float bc2 = 1.0f - std::pow(beta2, float(t));
  for (auto& [name, p] : store.items()) {
    if (!p.requires_grad()) continue;
    auto* node = p.node().get();
    if (node->grad.size() != node->data.size())
      throw std::runtime_error("Adam::step: missing grad on " + name);
    auto& st = state_[name];
    if (st.m.empty()) {
      st.m.assign(node->data.size(), 0.0f);
      st.v.assign(node->data.size(), 0.0f);
    }
    for (size_t i = 0; i < node->data.size(); ++i) {
      const float g = node->grad[i];
      st.m[i] = beta1 * st.m[i] + (1.0f - beta1) * g;
      st.v[i] = beta2 * st.v[i] + (1.0f - beta2) * g * g;
      const float mhat = st.m[i] / bc1;
      const float vhat = st.v[i] / bc2;
      node->data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
  store.step_count = t;
}

}  // namespace forma::gradcore
