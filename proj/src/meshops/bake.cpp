// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "forma/meshops/bundle.hpp"

namespace forma::meshops {

namespace {

struct SplitTri {
  int face;
  std::array<int, 3> corner;  // indices into Face.v / uv row
};

std::vector<SplitTri> split_tris(const QuadMesh& mesh) {
  std::vector<SplitTri> tris;
  for (size_t f = 0; f < mesh.faces.size(); ++f) {
    tris.push_back({int(f), {0, 1, 2}});
    if (mesh.faces[f].corners == 4) tris.push_back({int(f), {0, 2, 3}});
  }
  return tris;
}

// gutter dilation: fill invalid texels adjacent to valid ones with the mean
// of their valid 8-neighbours; `passes` rounds, each from the previous front
void dilate(Texture& albedo, Texture& material, std::vector<uint8_t>& valid, int passes) {
  const int w = albedo.w;
  for (int pass = 0; pass < passes; ++pass) {
    std::vector<std::pair<int, std::array<float, 6>>> front;
    for (int i = 0; i < w; ++i)
      for (int j = 0; j < w; ++j) {
        if (valid[size_t(i) * size_t(w) + size_t(j)] != 0) continue;
        float acc[6] = {0, 0, 0, 0, 0, 0};
        int cnt = 0;
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj) {
            const int ni = i + di, nj = j + dj;
            if (ni < 0 || nj < 0 || ni >= w || nj >= w) continue;
            if (valid[size_t(ni) * size_t(w) + size_t(nj)] == 0) continue;
            for (int c = 0; c < 3; ++c) {
              acc[c] += albedo.at(ni, nj, c);
              acc[c + 3] += material.at(ni, nj, c);
            }
            ++cnt;
          }
        if (cnt == 0) continue;
        std::array<float, 6> v;
        for (int c = 0; c < 6; ++c) v[size_t(c)] = acc[c] / float(cnt);
        front.emplace_back(i * w + j, v);
      }
    for (const auto& [idx, v] : front) {
      const int i = idx / w, j = idx % w;
      for (int c = 0; c < 3; ++c) {
        albedo.at(i, j, c) = v[size_t(c)];
        material.at(i, j, c) = v[size_t(c + 3)];
      }
      valid[size_t(idx)] = 2;  // gutter
    }
  }
}

}  // namespace

AssetBundle bake_textures(const AlbedoFn& albedo, const MaterialFn& material, const QuadMesh& mesh,
                          int texture_w) {
  if (mesh.uv.size() != mesh.faces.size())
    throw std::invalid_argument("bake_textures: mesh has no uv atlas");
  if (texture_w < 1 || (texture_w & (texture_w - 1)) != 0)
    throw std::invalid_argument("bake_textures: texture_w must be a power of two");
  const int w = texture_w;

  AssetBundle bundle;
  bundle.mesh = mesh;
  bundle.albedo.w = w;
  bundle.albedo.px.assign(size_t(w) * size_t(w) * 3, 0.0f);
  bundle.material.w = w;
  bundle.material.px.assign(size_t(w) * size_t(w) * 3, 0.0f);
  bundle.texel_pos.assign(size_t(w) * size_t(w) * 3, 0.0f);
  bundle.texel_normal.assign(size_t(w) * size_t(w) * 3, 0.0f);
  bundle.texel_valid.assign(size_t(w) * size_t(w), 0);

  for (const auto& tri : split_tris(mesh)) {
    const Face& face = mesh.faces[size_t(tri.face)];
    std::array<float, 2> q[3];
    std::array<float, 3> p[3];
    for (int k = 0; k < 3; ++k) {
      const auto& uv = mesh.uv[size_t(tri.face)][size_t(tri.corner[size_t(k)])];
      q[k] = {uv[0] * float(w), uv[1] * float(w)};
      p[k] = mesh.vertices[size_t(face.v[size_t(tri.corner[size_t(k)])])];
    }
    const float det =
        (q[1][0] - q[0][0]) * (q[2][1] - q[0][1]) - (q[2][0] - q[0][0]) * (q[1][1] - q[0][1]);
    if (std::fabs(det) < 1e-12f) continue;
    std::array<float, 3> nrm = {
        (p[1][1] - p[0][1]) * (p[2][2] - p[0][2]) - (p[1][2] - p[0][2]) * (p[2][1] - p[0][1]),
        (p[1][2] - p[0][2]) * (p[2][0] - p[0][0]) - (p[1][0] - p[0][0]) * (p[2][2] - p[0][2]),
        (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0])};
    const float nlen = std::sqrt(nrm[0] * nrm[0] + nrm[1] * nrm[1] + nrm[2] * nrm[2]);
    if (nlen > 0)
      for (float& x : nrm) x /= nlen;

    const int j0 = std::max(0, int(std::floor(std::min({q[0][0], q[1][0], q[2][0]}) - 1)));
    const int j1 = std::min(w - 1, int(std::ceil(std::max({q[0][0], q[1][0], q[2][0]}) + 1)));
    const int i0 = std::max(0, int(std::floor(std::min({q[0][1], q[1][1], q[2][1]}) - 1)));
    const int i1 = std::min(w - 1, int(std::ceil(std::max({q[0][1], q[1][1], q[2][1]}) + 1)));
    for (int i = i0; i <= i1; ++i)
      for (int j = j0; j <= j1; ++j) {
        if (bundle.texel_valid[size_t(i) * size_t(w) + size_t(j)] != 0) continue;
        const float sx = float(j) + 0.5f, sy = float(i) + 0.5f;
        const float b1 = ((sx - q[0][0]) * (q[2][1] - q[0][1]) -
                          (q[2][0] - q[0][0]) * (sy - q[0][1])) / det;
        const float b2 = ((q[1][0] - q[0][0]) * (sy - q[0][1]) -
                          (sx - q[0][0]) * (q[1][1] - q[0][1])) / det;
        const float b0 = 1.0f - b1 - b2;
        if (b0 < -1e-5f || b1 < -1e-5f || b2 < -1e-5f) continue;
        std::array<float, 3> pos;
        for (int c = 0; c < 3; ++c)
          pos[size_t(c)] = b0 * p[0][size_t(c)] + b1 * p[1][size_t(c)] + b2 * p[2][size_t(c)];
        const auto col = albedo(pos[0], pos[1], pos[2]);
        const auto mat = material(pos[0], pos[1], pos[2]);
        for (int c = 0; c < 3; ++c) {
          bundle.albedo.at(i, j, c) = std::clamp(col[size_t(c)], 0.0f, 1.0f);
          bundle.texel_pos[(size_t(i) * size_t(w) + size_t(j)) * 3 + size_t(c)] = pos[size_t(c)];
          bundle.texel_normal[(size_t(i) * size_t(w) + size_t(j)) * 3 + size_t(c)] = nrm[size_t(c)];
        }
        bundle.material.at(i, j, 0) = std::clamp(mat[0], 0.0f, 1.0f);
        bundle.material.at(i, j, 1) = std::clamp(mat[1], 0.0f, 1.0f);
        bundle.texel_valid[size_t(i) * size_t(w) + size_t(j)] = 1;
      }
  }

  dilate(bundle.albedo, bundle.material, bundle.texel_valid, int(kGutterTexels));
  return bundle;
}

std::array<float, 3> sample_albedo(const AssetBundle& bundle, int face, int tri,
                                   const std::array<float, 3>& bary) {
  const int corner[2][3] = {{0, 1, 2}, {0, 2, 3}};
  const auto& uvrow = bundle.mesh.uv[size_t(face)];
  float u = 0, v = 0;
  for (int k = 0; k < 3; ++k) {
    u += bary[size_t(k)] * uvrow[size_t(corner[tri][k])][0];
    v += bary[size_t(k)] * uvrow[size_t(corner[tri][k])][1];
  }
  const int w = bundle.albedo.w;
  const float x = std::clamp(u * float(w) - 0.5f, 0.0f, float(w - 1));
  const float y = std::clamp(v * float(w) - 0.5f, 0.0f, float(w - 1));
  const int j = std::min(int(x), w - 2 < 0 ? 0 : w - 2);
  const int i = std::min(int(y), w - 2 < 0 ? 0 : w - 2);
  const float fx = x - float(j), fy = y - float(i);
  std::array<float, 3> out;
  for (int c = 0; c < 3; ++c) {
    const float top = bundle.albedo.at(i, j, c) * (1 - fx) + bundle.albedo.at(i, std::min(j + 1, w - 1), c) * fx;
    const float bot = bundle.albedo.at(std::min(i + 1, w - 1), j, c) * (1 - fx) +
                      bundle.albedo.at(std::min(i + 1, w - 1), std::min(j + 1, w - 1), c) * fx;
    out[size_t(c)] = top * (1 - fy) + bot * fy;
  }
  return out;
}

void backproject_refine(AssetBundle& bundle, const std::vector<ViewSample>& views,
                        float depth_tol) {
  const int w = bundle.albedo.w;
  for (const auto& view : views)
    if (view.res <= 0 || view.depth.size() != size_t(view.res) * size_t(view.res) ||
        view.rgb.size() != size_t(view.res) * size_t(view.res) * 3)
      throw std::invalid_argument("backproject_refine: view missing rgb or depth buffer");
  for (int i = 0; i < w; ++i)
    for (int j = 0; j < w; ++j) {
      if (bundle.texel_valid[size_t(i) * size_t(w) + size_t(j)] != 1) continue;
      std::array<float, 3> pos, nrm;
      for (int c = 0; c < 3; ++c) {
        pos[size_t(c)] = bundle.texel_pos[(size_t(i) * size_t(w) + size_t(j)) * 3 + size_t(c)];
        nrm[size_t(c)] = bundle.texel_normal[(size_t(i) * size_t(w) + size_t(j)) * 3 + size_t(c)];
      }
      float acc[3] = {0, 0, 0};
      float acc_w = 0;
      for (const auto& view : views) {
        const auto cam = view.pose.position();
        std::array<float, 3> to_cam = {cam[0] - pos[0], cam[1] - pos[1], cam[2] - pos[2]};
        const float dist = std::sqrt(to_cam[0] * to_cam[0] + to_cam[1] * to_cam[1] +
                                     to_cam[2] * to_cam[2]);
        if (dist <= 0) continue;
        const float cosv =
            (nrm[0] * to_cam[0] + nrm[1] * to_cam[1] + nrm[2] * to_cam[2]) / dist;
        if (cosv <= 0) continue;
        const float weight = cosv * cosv * cosv;

        float px = 0, py = 0;
        if (!view.pose.project(pos, &px, &py)) continue;
        const int res = view.res;
        const int jj = int(std::lround(px)), ii = int(std::lround(py));
        if (jj < 0 || ii < 0 || jj >= res || ii >= res) continue;
        const float zbuf = view.depth[size_t(ii) * size_t(res) + size_t(jj)];
        if (std::fabs(zbuf - dist) >= depth_tol) continue;

        // bilinear color fetch
        const float x = std::clamp(px, 0.0f, float(res - 1));
        const float y = std::clamp(py, 0.0f, float(res - 1));
        const int j0 = std::min(int(x), res - 2 < 0 ? 0 : res - 2);
        const int i0 = std::min(int(y), res - 2 < 0 ? 0 : res - 2);
        const float fx = x - float(j0), fy = y - float(i0);
        for (int c = 0; c < 3; ++c) {
          auto texel = [&](int ii2, int jj2) {
            return view.rgb[(size_t(ii2) * size_t(res) + size_t(jj2)) * 3 + size_t(c)];
          };
          const int i1v = std::min(i0 + 1, res - 1), j1v = std::min(j0 + 1, res - 1);
          const float top = texel(i0, j0) * (1 - fx) + texel(i0, j1v) * fx;
          const float bot = texel(i1v, j0) * (1 - fx) + texel(i1v, j1v) * fx;
          acc[c] += weight * (top * (1 - fy) + bot * fy);
        }
        acc_w += weight;
      }
      if (acc_w > 1e-8f)
        for (int c = 0; c < 3; ++c)
          bundle.albedo.at(i, j, c) = std::clamp(acc[c] / acc_w, 0.0f, 1.0f);
    }

  // refresh gutters from the updated interior
  for (auto& v : bundle.texel_valid)
    if (v == 2) v = 0;
  for (int i = 0; i < w; ++i)
    for (int j = 0; j < w; ++j)
      if (bundle.texel_valid[size_t(i) * size_t(w) + size_t(j)] == 0)
        for (int c = 0; c < 3; ++c) bundle.albedo.at(i, j, c) = 0;
  dilate(bundle.albedo, bundle.material, bundle.texel_valid, int(kGutterTexels));
}

}  // namespace forma::meshops
