// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "forma/camgeom/camera.hpp"
#include "forma/gradcore/nn.hpp"
#include "forma/reconstruct/recon.hpp"

namespace forma::mvdiff {

// ----------------------------------------------------------------------------
// diffusion schedule
// ----------------------------------------------------------------------------

/// Cosine noise schedule over T discrete levels. alpha_bar[k] is the squared
/// clean-signal scale of level k in [0,T): near 1 at k=0, near 0 at k=T-1,
/// with signal-to-noise alpha_bar/(1-alpha_bar) strictly decreasing.
struct DiffusionSchedule {
  int T = 0;
  std::vector<float> alpha_bar;  // size T

  float snr(int k) const { return alpha_bar[size_t(k)] / (1.0f - alpha_bar[size_t(k)]); }
};

DiffusionSchedule cosine_schedule(int T);

// ----------------------------------------------------------------------------
// model
// ----------------------------------------------------------------------------

struct MVConfig {
  int image_res = 32;  // patch must divide image_res
  int patch = 4;
  int channels = 3;
  int dim = 64;
  int blocks = 4;
  int time_freqs = 8;  // sinusoidal time features = 2*time_freqs
  int T = 200;
  uint64_t seed = 0;
};

/// One denoiser invocation: V views flattened to [V*R*R, C] rows in the
/// model's [-1,1] domain, their pose features, the prompt one-hot, and the
/// noise level the views were corrupted to.
struct MVBatch {
  std::vector<float> views;       // V*R*R*C
  std::vector<float> pose_feats;  // V*12
  std::vector<float> prompt;      // promptgen::kPromptDim
  int V = 0;
  int timestep = 0;  // in [0, T)
};

/// Patch-token transformer denoiser whose self-attention runs over the tokens
/// of all views jointly; per-view conditioning (time + pose + prompt) is added
/// to the patch tokens. Optional control branch: a trainable copy of the block
/// stack fed the conditioning images, injected through zero-init projections.
class MVModel {
 public:
  explicit MVModel(const MVConfig& cfg);

  /// x0 prediction, [V*R*R, C] in [-1,1]. `control_views` (same layout as
  /// batch.views, clean) routes through the control branch when present.
  gradcore::Tensor denoise(const MVBatch& batch,
                           const std::vector<float>* control_views = nullptr) const;

  /// Copies the block stack into a control branch with zero-init projections.
  void add_control_branch();
  bool has_control() const { return !ctrl_blocks_.empty(); }

  bool trained() const { return trained_; }
  void set_trained(bool on) { trained_ = on; }

  gradcore::ParamStore& params() { return params_; }
  const gradcore::ParamStore& params() const { return params_; }
  gradcore::ParamStore& control_params() { return ctrl_params_; }
  const MVConfig& config() const { return cfg_; }
  const DiffusionSchedule& schedule() const { return schedule_; }

 private:
  MVConfig cfg_;
  DiffusionSchedule schedule_;
  gradcore::ParamStore params_, ctrl_params_;
  gradcore::Tensor pos_embed_;  // [(R/p)^2, dim], shared across views
  gradcore::Linear patch_embed_, unembed_, prompt_proj_;
  gradcore::Linear time_fc1_, time_fc2_, pose_fc1_, pose_fc2_;  // feature MLPs into dim
  std::vector<gradcore::Block> blocks_;
  gradcore::Linear ctrl_embed_;
  std::vector<gradcore::Block> ctrl_blocks_;
  std::vector<gradcore::Linear> ctrl_proj_;
  bool trained_ = false;

  gradcore::Tensor embed_tokens(const MVBatch& batch, const std::vector<float>& views) const;
};

// ----------------------------------------------------------------------------
// training
// ----------------------------------------------------------------------------

struct TrainMVOptions {
  std::vector<std::pair<int, float>> view_sampling = {{8, 1.0f}};  // (V, weight)
  int steps = 2000;
  float lr = 2e-3f;
  float lr_end = 0.0f;     // > 0: cosine decay from lr to lr_end
  int lr_warmup = 100;     // linear warmup steps (capped at steps/10)
  float grad_clip = 1.0f;  // global grad-norm clip; <= 0 disables
  float ema_decay = 0.999f;
  bool normal_channel = false;  // denoise camera normals instead of RGB
  float bg_weight = 0.1f;       // x0-loss weight on background pixels
  uint64_t seed = 0;
  std::string csv_path;  // step,loss,views,timestep when set
};

/// DDPM training with the x0 parametrization: corrupt V sampled views to a
/// random level, predict the clean images, mask-weighted MSE.
MVModel train_mvdiff(const std::vector<reconstruct::ReconAsset>& dataset, const MVConfig& cfg,
                     const TrainMVOptions& opt);

struct TrainControlOptions {
  int views = 8;
  int steps = 1500;
  float lr = 2e-3f;
  float lr_end = 0.0f;
  int lr_warmup = 100;
  float grad_clip = 1.0f;
  float ema_decay = 0.999f;
  float bg_weight = 0.1f;
  uint64_t seed = 0;
  std::string csv_path;
};

/// RGB->normal ControlNet: the base (trained on normal images) is bit-frozen;
/// only the control branch, fed the clean RGB views, receives gradient.
void train_normal_controlnet(MVModel& base, const std::vector<reconstruct::ReconAsset>& dataset,
                             const TrainControlOptions& opt);

// ----------------------------------------------------------------------------
// sampling
// ----------------------------------------------------------------------------

/// Ancestral DDPM sampling from pure noise; returns [V*R*R, C] in [-1,1],
/// deterministic given the seed. `reference` (R*R*C, [-1,1]) pins view 0: it
/// is re-noised to the current level before every denoise and replaces view 0
/// exactly at the final step. `control_views` feed the control branch.
std::vector<float> sample(const MVModel& model, const camgeom::PoseSet& poses,
                          const std::vector<float>& prompt, uint64_t seed,
                          const std::vector<float>* reference = nullptr,
                          const std::vector<float>* control_views = nullptr);

}  // namespace forma::mvdiff
