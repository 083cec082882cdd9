// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "forma/mvdiff/mvdiff.hpp"
#include "forma/promptgen/prompt.hpp"

namespace forma::mvdiff {

using gradcore::Tensor;

// ----------------------------------------------------------------------------
// schedule
// ----------------------------------------------------------------------------

DiffusionSchedule cosine_schedule(int T) {
  if (T < 2) throw std::invalid_argument("cosine_schedule: T must be >= 2");
  constexpr double s = 0.008;
  auto f = [&](double u) {
    const double a = std::cos((u + s) / (1.0 + s) * 1.5707963267948966);
    return a * a;
  };
  DiffusionSchedule sched;
  sched.T = T;
  sched.alpha_bar.resize(size_t(T));
  const double f0 = f(0.0);
  for (int k = 0; k < T; ++k) {
    const double ab = f(double(k + 1) / double(T)) / f0;
    sched.alpha_bar[size_t(k)] = float(std::min(std::max(ab, 1e-5), 1.0 - 1e-5));
  }
  return sched;
}

// ----------------------------------------------------------------------------
// model
// ----------------------------------------------------------------------------

namespace {

// Transformer-style sinusoidal features of the integer noise level.
Tensor time_features(int k, int freqs) {
  std::vector<float> row(size_t(freqs) * 2);
  for (int i = 0; i < freqs; ++i) {
    const double div = std::pow(10000.0, double(i) / double(freqs));
    row[size_t(i) * 2] = float(std::sin(double(k) / div));
    row[size_t(i) * 2 + 1] = float(std::cos(double(k) / div));
  }
  return Tensor::from({1, freqs * 2}, std::move(row));
}

}  // namespace

MVModel::MVModel(const MVConfig& cfg) : cfg_(cfg) {
  if (cfg.image_res < 1 || cfg.patch < 1 || cfg.image_res % cfg.patch != 0)
    throw std::invalid_argument("MVModel: image_res must be a multiple of patch");
  if (cfg.channels < 1 || cfg.dim < 1 || cfg.blocks < 1 || cfg.time_freqs < 1)
    throw std::invalid_argument("MVModel: dims must be positive");
  schedule_ = cosine_schedule(cfg.T);

  gradcore::Rng rng(cfg.seed);
  const int tpv = (cfg.image_res / cfg.patch) * (cfg.image_res / cfg.patch);
  const int pdim = cfg.patch * cfg.patch * cfg.channels;
  pos_embed_ = params_.create("pos_embed", {tpv, cfg.dim}, rng, 0.02f);
  patch_embed_ = gradcore::Linear(params_, "patch_embed", pdim, cfg.dim, rng);
  time_fc1_ = gradcore::Linear(params_, "time_mlp.fc1", cfg.time_freqs * 2, cfg.dim, rng);
  time_fc2_ = gradcore::Linear(params_, "time_mlp.fc2", cfg.dim, cfg.dim, rng);
  pose_fc1_ = gradcore::Linear(params_, "pose_mlp.fc1", 12, cfg.dim, rng);
  pose_fc2_ = gradcore::Linear(params_, "pose_mlp.fc2", cfg.dim, cfg.dim, rng);
  prompt_proj_ = gradcore::Linear(params_, "prompt_proj", promptgen::kPromptDim, cfg.dim, rng);
  for (int i = 0; i < cfg.blocks; ++i)
    blocks_.emplace_back(params_, "block" + std::to_string(i), cfg.dim, cfg.dim * 2, false, rng);
  unembed_ = gradcore::Linear(params_, "unembed", cfg.dim, pdim, rng);
}

Tensor MVModel::embed_tokens(const MVBatch& batch, const std::vector<float>& views) const {
  const int R = cfg_.image_res, V = batch.V;
  const int tpv = (R / cfg_.patch) * (R / cfg_.patch);

  Tensor imgs = Tensor::from({V * R * R, cfg_.channels}, views);
  Tensor tok = patch_embed_(gradcore::patchify(imgs, V, R, cfg_.patch));

  std::vector<int> tile(size_t(V) * size_t(tpv));
  for (int v = 0; v < V; ++v)
    for (int p = 0; p < tpv; ++p) tile[size_t(v) * size_t(tpv) + size_t(p)] = p;
  Tensor pos = gradcore::gather_rows(pos_embed_, tile);

  Tensor temb = time_fc2_(gradcore::gelu(time_fc1_(time_features(batch.timestep, cfg_.time_freqs))));
  Tensor prom = prompt_proj_(Tensor::from({1, promptgen::kPromptDim}, batch.prompt));
  Tensor pemb = pose_fc2_(gradcore::gelu(pose_fc1_(Tensor::from({V, 12}, batch.pose_feats))));
  Tensor cond = gradcore::add(pemb, gradcore::repeat_rows(gradcore::add(temb, prom), V));

  return gradcore::add(tok, gradcore::add(pos, gradcore::repeat_interleave_rows(cond, tpv)));
}

Tensor MVModel::denoise(const MVBatch& batch, const std::vector<float>* control_views) const {
  const int R = cfg_.image_res;
  if (batch.V < 1) throw std::invalid_argument("denoise: V must be >= 1");
  const size_t need = size_t(batch.V) * size_t(R) * size_t(R) * size_t(cfg_.channels);
  if (batch.views.size() != need) throw std::invalid_argument("denoise: views size mismatch");
  if (batch.pose_feats.size() != size_t(batch.V) * 12)
    throw std::invalid_argument("denoise: pose_feats size mismatch");
  if (int(batch.prompt.size()) != promptgen::kPromptDim)
    throw std::invalid_argument("denoise: prompt embedding size mismatch");
  if (batch.timestep < 0 || batch.timestep >= cfg_.T)
    throw std::invalid_argument("denoise: timestep outside [0,T)");
  if (control_views) {
    if (!has_control()) throw std::invalid_argument("denoise: model has no control branch");
    if (control_views->size() != need)
      throw std::invalid_argument("denoise: control views size mismatch");
  }

  Tensor x = embed_tokens(batch, batch.views);
  const bool use_ctrl = control_views != nullptr;
  Tensor c;
  if (use_ctrl) {
    Tensor hint = Tensor::from({batch.V * R * R, cfg_.channels}, *control_views);
    c = gradcore::add(x, ctrl_embed_(gradcore::patchify(hint, batch.V, R, cfg_.patch)));
  }
  for (size_t i = 0; i < blocks_.size(); ++i) {
    x = blocks_[i](x);
    if (use_ctrl) {
      c = ctrl_blocks_[i](c);
      x = gradcore::add(x, ctrl_proj_[i](c));
    }
  }
  x = gradcore::layer_norm_rows(x);
  return gradcore::unpatchify(unembed_(x), batch.V, R, cfg_.patch);
}

void MVModel::add_control_branch() {
  if (has_control()) throw std::logic_error("add_control_branch: branch already exists");
  gradcore::Rng rng(cfg_.seed + 1);
  const int pdim = cfg_.patch * cfg_.patch * cfg_.channels;
  ctrl_embed_ = gradcore::Linear(ctrl_params_, "ctrl_embed", pdim, cfg_.dim, rng);
  for (int i = 0; i < cfg_.blocks; ++i) {
    ctrl_blocks_.emplace_back(ctrl_params_, "block" + std::to_string(i), cfg_.dim, cfg_.dim * 2,
                              false, rng);
    ctrl_proj_.emplace_back(ctrl_params_, "ctrl_proj" + std::to_string(i), cfg_.dim, cfg_.dim,
                            rng, /*zero_init=*/true);
  }
  // The trainable stack starts as an exact copy of the frozen base blocks.
  for (const auto& [name, t] : ctrl_params_.items())
    if (name.rfind("block", 0) == 0) {
      Tensor dst = t;
      dst.node()->data = params_.get(name).values();
    }
}

// ----------------------------------------------------------------------------
// sampling
// ----------------------------------------------------------------------------

std::vector<float> sample(const MVModel& model, const camgeom::PoseSet& poses,
                          const std::vector<float>& prompt, uint64_t seed,
                          const std::vector<float>* reference,
                          const std::vector<float>* control_views) {
  const MVConfig& cfg = model.config();
  const int V = int(poses.poses.size());
  const int R = cfg.image_res, C = cfg.channels;
  if (V < 1) throw std::invalid_argument("sample: need at least one pose");
  const size_t per_view = size_t(R) * size_t(R) * size_t(C);
  if (reference && reference->size() != per_view)
    throw std::invalid_argument("sample: reference resolution mismatch");

  gradcore::NoGradGuard ng;
  gradcore::Rng rng(seed);
  const DiffusionSchedule& sched = model.schedule();

  MVBatch batch;
  batch.V = V;
  batch.prompt = prompt;
  batch.pose_feats.resize(size_t(V) * 12);
  for (int v = 0; v < V; ++v) {
    const auto f = camgeom::pose_features(poses.poses[size_t(v)]);
    std::copy(f.begin(), f.end(), batch.pose_feats.begin() + size_t(v) * 12);
  }

  std::vector<float> x(size_t(V) * per_view);
  for (float& e : x) e = rng.gauss();

  for (int k = sched.T - 1; k >= 0; --k) {
    const float ab = sched.alpha_bar[size_t(k)];
    if (reference)
      for (size_t i = 0; i < per_view; ++i)
        x[i] = std::sqrt(ab) * (*reference)[i] + std::sqrt(1.0f - ab) * rng.gauss();

    batch.views = x;
    batch.timestep = k;
    const std::vector<float>& x0 = model.denoise(batch, control_views).values();

    if (k == 0) {
      for (size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x0[i], -1.0f, 1.0f);
      break;
    }
    const float ab_prev = sched.alpha_bar[size_t(k - 1)];
    const float alpha_k = ab / ab_prev;
    const float beta_k = 1.0f - alpha_k;
    const float c0 = std::sqrt(ab_prev) * beta_k / (1.0f - ab);
    const float c1 = std::sqrt(alpha_k) * (1.0f - ab_prev) / (1.0f - ab);
    const float sig = std::sqrt((1.0f - ab_prev) / (1.0f - ab) * beta_k);
    for (size_t i = 0; i < x.size(); ++i) {
      const float x0c = std::clamp(x0[i], -1.0f, 1.0f);
      x[i] = c0 * x0c + c1 * x[i] + sig * rng.gauss();
    }
  }
  if (reference)
    for (size_t i = 0; i < per_view; ++i) x[i] = (*reference)[i];
  return x;
}

}  // namespace forma::mvdiff
