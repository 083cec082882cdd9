// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "forma/camgeom/camera.hpp"
#include "forma/gradcore/nn.hpp"
#include "forma/gradcore/tensor.hpp"
#include "forma/render/render.hpp"

namespace forma::reconstruct {

struct ReconConfig {
  int plane_res = 32;      // P, feature plane resolution
  int plane_channels = 8;  // C
  int plane_patch = 8;     // plane tokens are p*p patches: 3*(P/p)^2 tokens
  int image_res = 64;      // expected input view resolution
  int image_patch = 8;
  int dim = 64;    // transformer width
  int blocks = 2;  // self+cross blocks
  int head_hidden = 32;
  float beta_init = 0.1f;
  uint64_t seed = 0;
};

/// Triplane feature volume plus the shared field heads. The planes tensor
/// stays attached to the encoder graph, so losses backpropagate end to end.
struct TriplaneField {
  gradcore::Tensor planes;  // [3*P*P, C]; XY, XZ, YZ; query = sum of bilinears
  int P = 0;
  int C = 0;
  gradcore::Linear sdf1, sdf2;  // feature -> 1
  gradcore::Linear alb1, alb2;  // feature -> 3, sigmoid
  gradcore::Linear mat1, mat2;  // feature -> 2 (roughness, metallic), sigmoid
  float beta = 0.1f;            // SDF-to-density sharpness, > 0
};

struct FieldSample {
  float sdf = 0;
  std::array<float, 3> albedo = {0, 0, 0};
  float roughness = 0;
  float metallic = 0;
  bool clamped = false;  // p was outside [-1,1]^3
};

/// Point query through the heads (no graph). Out-of-range p is clamped and
/// flagged.
FieldSample query_field(const TriplaneField& field, const std::array<float, 3>& p);

/// Analytic spatial gradient of the sdf head output: bilinear plane
/// derivatives chained through the MLP jacobian.
std::vector<std::array<float, 3>> field_sdf_gradient(
    const TriplaneField& field, const std::vector<std::array<float, 3>>& points);

/// What volume rendering needs from a field: batched graph-tensor queries.
/// `sphere_query` bypasses the network with the analytic unit-sphere SDF.
struct FieldQuery {
  std::function<gradcore::Tensor(const std::vector<float>&)> sdf;       // [N,1]
  std::function<gradcore::Tensor(const std::vector<float>&)> albedo;    // [N,3]
  std::function<gradcore::Tensor(const std::vector<float>&)> material;  // [N,2]
  float beta = 0.1f;
};

FieldQuery field_query(const TriplaneField& field);
FieldQuery sphere_query(float radius, const std::array<float, 3>& albedo, float roughness,
                        float metallic, float beta);

struct RenderOptions {
  int n_samples = 64;       // >= 16; eval default 128
  bool jitter = true;       // stratified jitter; false = midpoint rule
  uint64_t seed = 0;        // jitter stream, reproducible per step
  float normal_eps = 5e-3f;  // central-difference step for surface normals
  float mask_floor = 0.05f;  // minimum opacity for a ray to get a normal
};

/// Rendered channels for a pixel subset (rows follow `pixels`). normal_cam is
/// the raw (unnormalized) camera-frame SDF gradient at the expected surface
/// point, zero where no normal was evaluated.
struct PredStack {
  int res = 0;
  std::vector<int> pixels;       // row -> pixel index i*res+j
  gradcore::Tensor mask;         // [R,1]
  gradcore::Tensor depth;        // [R,1] expected depth along the ray
  gradcore::Tensor albedo;       // [R,3]
  gradcore::Tensor material;     // [R,2]
  gradcore::Tensor normal_cam;   // [R,3]
};

/// SDF volume rendering: stratified samples inside the [-1.2,1.2]^3 box,
/// Laplace-CDF density, alpha compositing. Normals are computed only at the
/// expected surface point of rays in `normal_rows` (or opacity > mask_floor
/// when null). Throws when beta <= 0 or n_samples < 16.
PredStack volume_render(const FieldQuery& field, const camgeom::CameraPose& pose, int resolution,
                        const RenderOptions& opt = {}, const std::vector<int>* pixels = nullptr,
                        const std::vector<float>* normal_rows = nullptr);

struct LossWeights {
  float mask = 1.0f;
  float depth = 1.0f;
  float albedo = 1.0f;
  float material = 0.5f;
  float normal = 0.5f;
};

struct LossBreakdown {
  gradcore::Tensor total;
  float mask = 0, depth = 0, albedo = 0, material = 0, normal = 0;
};

/// Five-channel loss against a rendered target stack. Every term skips pixels
/// set in the target's edge bitmap; depth/albedo/material/normal additionally
/// restrict to the target mask interior.
LossBreakdown recon_loss(const PredStack& pred, const render::ChannelImage& target,
                         const LossWeights& weights = {});

struct ReconView {
  camgeom::CameraPose pose;
  render::ChannelImage img;
};

struct ReconAsset {
  std::vector<ReconView> views;
  std::string prompt;
  uint64_t seed = 0;
};

class ReconModel {
 public:
  explicit ReconModel(const ReconConfig& cfg);

  /// Triplane tokens cross-attend to patch+pose tokens of the input views.
  TriplaneField encode(const std::vector<ReconView>& inputs) const;

  gradcore::ParamStore& params() { return params_; }
  const gradcore::ParamStore& params() const { return params_; }
  const ReconConfig& config() const { return cfg_; }
  float beta() const { return beta_; }
  void set_beta(float b);

 private:
  ReconConfig cfg_;
  gradcore::ParamStore params_;
  gradcore::Tensor tokens_;   // learned triplane tokens [3*(P/p)^2, dim]
  gradcore::Tensor img_pos_;  // learned per-patch position embedding [(R/p)^2, dim]
  gradcore::Linear img_embed_, pose_embed_, out_proj_;
  std::vector<gradcore::Block> blocks_;
  gradcore::Linear sdf1_, sdf2_, alb1_, alb2_, mat1_, mat2_;
  float beta_ = 0.1f;
};

struct TrainReconOptions {
  int n_input_views = 8;
  int steps = 1000;
  int rays_per_step = 128;
  int n_samples = 48;
  float lr = 3e-3f;
  float lr_end = 0.0f;        // > 0: cosine decay from lr to lr_end
  int lr_warmup = 100;        // linear warmup steps (capped at steps/10)
  float grad_clip = 1.0f;     // global grad-norm clip; <= 0 disables
  float eikonal_weight = 0.1f;  // keeps the SDF metric so beta stays calibrated
  int eikonal_points = 64;
  float ema_decay = 0.999f;
  float beta_start = 0.1f;
  float beta_end = 0.0f;     // <= 0: derived as h_pix/2 from radius/fov/res
  float fov_y_deg = 50.0f;   // matches the dataset cameras
  float radius = 2.7f;
  uint64_t seed = 0;
  std::string csv_path;  // optional per-step metrics
};

/// Velocity loop: per step one asset, n input views, one target view, a random
/// ray batch; Adam + EMA(decay); beta annealed geometrically from beta_start
/// to beta_end. Returns the trained model (EMA shadows inside params()).
ReconModel train_recon(const std::vector<ReconAsset>& dataset, const ReconConfig& cfg,
                       const TrainReconOptions& opt);

/// Reads one rendered asset directory (view_* stacks) back into memory.
ReconAsset load_recon_asset(const std::string& asset_dir);
std::vector<ReconAsset> load_recon_dataset(const std::string& dataset_dir);

/// Full-frame evaluation render into the channel-stack layout (values only,
/// no graph). Normals are normalized camera-frame vectors at mask > 0.5.
render::ChannelImage render_stack(const TriplaneField& field, const camgeom::CameraPose& pose,
                                  int resolution,
                                  const RenderOptions& opt = {.n_samples = 128, .jitter = false});

}  // namespace forma::reconstruct
