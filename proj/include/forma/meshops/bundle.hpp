// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "forma/camgeom/camera.hpp"
#include "forma/meshops/mesh.hpp"

namespace forma::meshops {

inline constexpr int kDefaultTextureW = 256;
inline constexpr float kGutterTexels = 2.0f;
inline constexpr float kVisibilityEps = 1e-2f;

// Charts faces by dominant-axis normal (6 bins) + connectivity, projects
// each chart along its axis at uniform texel density, and shelf-packs with
// 2-texel gutters. Throws std::runtime_error naming a chart that cannot fit.
QuadMesh uv_atlas(const QuadMesh& mesh, int texture_w);

struct Texture {
  int w = 0;
  std::vector<float> px;  // w*w*3, [0,1]

  float& at(int i, int j, int c) { return px[(size_t(i) * size_t(w) + size_t(j)) * 3 + size_t(c)]; }
  float at(int i, int j, int c) const {
    return px[(size_t(i) * size_t(w) + size_t(j)) * 3 + size_t(c)];
  }
};

struct AssetBundle {
  QuadMesh mesh;
  Texture albedo;
  Texture material;  // R = roughness, G = metallic
  // texel-space geometry kept for back-projection
  std::vector<float> texel_pos;      // w*w*3
  std::vector<float> texel_normal;   // w*w*3
  std::vector<uint8_t> texel_valid;  // interior texels, pre-dilation
  // provenance
  std::string prompt;
  uint64_t seed = 0;
  std::vector<std::pair<std::string, uint64_t>> checksums;
};

using AlbedoFn = std::function<std::array<float, 3>(float, float, float)>;
using MaterialFn = std::function<std::array<float, 2>(float, float, float)>;  // (rough, metal)

// Texture-space rasterization of the fields; 2-texel gutter dilation.
AssetBundle bake_textures(const AlbedoFn& albedo, const MaterialFn& material, const QuadMesh& mesh,
                          int texture_w = kDefaultTextureW);

// Bilinear texture lookup at the uv of (face, canonical-split barycentrics).
std::array<float, 3> sample_albedo(const AssetBundle& bundle, int face, int tri,
                                   const std::array<float, 3>& bary);

struct ViewSample {
  camgeom::CameraPose pose;
  int res = 0;
  std::vector<float> rgb;    // res*res*3
  std::vector<float> depth;  // res*res, 0 = background
};

// Projects every interior texel into each view, tests visibility against the
// view depth buffer, and blends visible colors with weights max(0, n.v)^3.
// Texels with no visible sample keep their baked values.
void backproject_refine(AssetBundle& bundle, const std::vector<ViewSample>& views,
                        float depth_tol = kVisibilityEps);

// stem.obj + stem.mtl + stem_albedo.png + stem_material.png + stem.json
void export_obj(const AssetBundle& bundle, const std::string& stem);

struct ObjData {
  std::vector<std::array<float, 3>> vertices;
  std::vector<std::array<float, 2>> uvs;
  std::vector<std::vector<int>> face_vertices;  // 0-based
  std::vector<std::vector<int>> face_uvs;
};

ObjData import_obj(const std::string& obj_path);

}  // namespace forma::meshops
