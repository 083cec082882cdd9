// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "forma/camgeom/camera.hpp"
#include "forma/promptgen/prompt.hpp"

namespace forma::render {

inline constexpr float kDepthScale = 4096.0f;  // uint16 = round(depth * scale)
inline constexpr int kMaxSteps = 128;
inline constexpr float kHitEps = 1e-4f;
inline constexpr float kFarClip = 40.0f;

// Per-view supervision channels. Row-major, i*res+j; 3-channel buffers are
// interleaved. Background pixels are exactly zero everywhere.
struct ChannelImage {
  int res = 0;
  std::vector<float> rgb;        // shaded, [0,1]
  std::vector<float> albedo;     // [0,1]
  std::vector<float> normal;     // camera-frame unit vectors at mask=1
  std::vector<float> depth;      // metric distance along the ray
  std::vector<float> mask;       // {0,1}
  std::vector<float> roughness;  // [0,1]
  std::vector<float> metallic;   // [0,1]
  std::vector<uint8_t> edge;     // mask boundary, 1-px dilated
};

ChannelImage render_channels(const promptgen::SceneSpec& scene, const camgeom::CameraPose& pose,
                             int resolution);

// Camera distance at which the largest projected bbox dimension over a
// 20-degree ring covers `frame_frac` of the frame.
float auto_frame_radius(const promptgen::SceneSpec& scene, int ring_n, float elev_deg,
                        float fov_y_deg, float frame_frac);

// Bounding box of mask=1 pixels; returns max dimension as a fraction of res.
float silhouette_fraction(const ChannelImage& img);

void save_channels(const std::string& stem, const ChannelImage& img,
                   const camgeom::CameraPose& pose);
ChannelImage load_channels(const std::string& stem);
camgeom::CameraPose load_channel_pose(const std::string& stem);

struct DatasetOptions {
  int resolution = 64;
  int ring_views = 16;
  float ring_elevation_deg = 20.0f;
  float fov_y_deg = camgeom::kDefaultFovYDeg;
  float frame_frac = 0.7f;
  int random_views = 0;  // the randomized-pose half, k per asset
  uint64_t seed = 0;
};

// Renders every accepted asset into out_dir/asset_NNNN/view_VV_*.png.
// Returns the number of channel stacks written.
int render_dataset(const std::vector<promptgen::AssetRecord>& manifest,
                   const std::string& out_dir, const DatasetOptions& opts);

}  // namespace forma::render
