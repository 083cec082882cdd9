// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "forma/meshops/bundle.hpp"

namespace forma::meshops {

namespace {

struct Dsu {
  std::vector<int> parent;
  explicit Dsu(size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[size_t(x)] != x) {
      parent[size_t(x)] = parent[size_t(parent[size_t(x)])];
      x = parent[size_t(x)];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[size_t(a)] = b;
  }
};

std::array<float, 3> newell_normal(const QuadMesh& mesh, const Face& f) {
  std::array<float, 3> n = {0, 0, 0};
  for (int e = 0; e < f.corners; ++e) {
    const auto& a = mesh.vertices[size_t(f.v[size_t(e)])];
    const auto& b = mesh.vertices[size_t(f.v[size_t((e + 1) % f.corners)])];
    n[0] += (a[1] - b[1]) * (a[2] + b[2]);
    n[1] += (a[2] - b[2]) * (a[0] + b[0]);
    n[2] += (a[0] - b[0]) * (a[1] + b[1]);
  }
  return n;
}

float tri_area3d(const std::array<float, 3>& a, const std::array<float, 3>& b,
                 const std::array<float, 3>& c) {
  const float u[3] = {b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  const float v[3] = {c[0] - a[0], c[1] - a[1], c[2] - a[2]};
  const float nx = u[1] * v[2] - u[2] * v[1];
  const float ny = u[2] * v[0] - u[0] * v[2];
  const float nz = u[0] * v[1] - u[1] * v[0];
  return 0.5f * std::sqrt(nx * nx + ny * ny + nz * nz);
}

float tri_area2d(const std::array<float, 2>& a, const std::array<float, 2>& b,
                 const std::array<float, 2>& c) {
  return 0.5f * std::fabs((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]));
}

int64_t undirected_key(int a, int b) {
  if (a > b) std::swap(a, b);
  return (int64_t(a) << 32) | uint32_t(b);
}

}  // namespace

QuadMesh uv_atlas(const QuadMesh& mesh, int texture_w) {
  const size_t nf = mesh.faces.size();
  QuadMesh out = mesh;
  out.uv.assign(nf, {});
  out.charts.assign(nf, -1);
  if (nf == 0) return out;

  // 1. bin faces by dominant normal axis and sign
  std::vector<int> bin(nf);
  for (size_t f = 0; f < nf; ++f) {
    const auto n = newell_normal(mesh, mesh.faces[f]);
    int axis = 0;
    for (int c = 1; c < 3; ++c)
      if (std::fabs(n[size_t(c)]) > std::fabs(n[size_t(axis)])) axis = c;
    bin[f] = axis * 2 + (n[size_t(axis)] < 0 ? 1 : 0);
  }

  // 2. charts = connected components within a bin
  std::unordered_map<int64_t, std::vector<int>> edge_faces;
  for (size_t f = 0; f < nf; ++f) {
    const Face& face = mesh.faces[f];
    for (int e = 0; e < face.corners; ++e)
      edge_faces[undirected_key(face.v[size_t(e)], face.v[size_t((e + 1) % face.corners)])]
          .push_back(int(f));
  }
  Dsu dsu(nf);
  for (size_t f = 0; f < nf; ++f) {
    const Face& face = mesh.faces[f];
    for (int e = 0; e < face.corners; ++e) {
      const auto& adj =
          edge_faces[undirected_key(face.v[size_t(e)], face.v[size_t((e + 1) % face.corners)])];
      for (int g : adj)
        if (bin[size_t(g)] == bin[f]) dsu.unite(int(f), g);
    }
  }
  std::unordered_map<int, int> chart_of_root;
  int n_charts = 0;
  for (size_t f = 0; f < nf; ++f) {
    const int r = dsu.find(int(f));
    if (chart_of_root.emplace(r, n_charts).second) ++n_charts;
    out.charts[f] = chart_of_root[r];
  }

  // 3. per-chart planar projection at unit world density
  struct Chart {
    std::vector<int> faces;
    float area3d = 0;
    std::array<float, 2> lo = {1e30f, 1e30f};
    std::array<float, 2> hi = {-1e30f, -1e30f};
    float scale = 1;  // world -> chart plane, equalizes uv and 3d area
    float w = 0, h = 0;
    float box_x = 0, box_y = 0;  // packed texel offset of the padded box
  };
  std::vector<Chart> charts(static_cast<size_t>(n_charts));
  std::vector<std::array<std::array<float, 2>, 4>> raw(nf);
  for (size_t f = 0; f < nf; ++f) charts[size_t(out.charts[f])].faces.push_back(int(f));

  for (auto& ch : charts) {
    float area_uv = 0;
    for (int fi : ch.faces) {
      const Face& face = mesh.faces[size_t(fi)];
      const int axis = bin[size_t(fi)] / 2;
      const bool neg = bin[size_t(fi)] % 2 == 1;
      const int ua = (axis + 1) % 3, va = (axis + 2) % 3;
      for (int e = 0; e < face.corners; ++e) {
        const auto& p = mesh.vertices[size_t(face.v[size_t(e)])];
        raw[size_t(fi)][size_t(e)] = {neg ? -p[size_t(ua)] : p[size_t(ua)], p[size_t(va)]};
      }
      const auto& q = raw[size_t(fi)];
      const auto& vs = face.v;
      ch.area3d += tri_area3d(mesh.vertices[size_t(vs[0])], mesh.vertices[size_t(vs[1])],
                              mesh.vertices[size_t(vs[2])]);
      area_uv += tri_area2d(q[0], q[1], q[2]);
      if (face.corners == 4) {
        ch.area3d += tri_area3d(mesh.vertices[size_t(vs[0])], mesh.vertices[size_t(vs[2])],
                                mesh.vertices[size_t(vs[3])]);
        area_uv += tri_area2d(q[0], q[2], q[3]);
      }
    }
    ch.scale = std::sqrt(ch.area3d / std::max(area_uv, 1e-20f));
    for (int fi : ch.faces) {
      const Face& face = mesh.faces[size_t(fi)];
      for (int e = 0; e < face.corners; ++e) {
        auto& q = raw[size_t(fi)][size_t(e)];
        q[0] *= ch.scale;
        q[1] *= ch.scale;
        ch.lo[0] = std::min(ch.lo[0], q[0]);
        ch.lo[1] = std::min(ch.lo[1], q[1]);
        ch.hi[0] = std::max(ch.hi[0], q[0]);
        ch.hi[1] = std::max(ch.hi[1], q[1]);
      }
    }
    ch.w = ch.hi[0] - ch.lo[0];
    ch.h = ch.hi[1] - ch.lo[1];
  }

  // 4. shelf packing with a shrink-retry loop; boxes carry the gutter
  const float g = kGutterTexels;
  const float wlim = float(texture_w);
  float total3d = 0;
  for (const auto& ch : charts) total3d += ch.area3d;
  float density = std::sqrt(0.45f * wlim * wlim / std::max(total3d, 1e-20f));

  std::vector<int> order(charts.size());
  std::iota(order.begin(), order.end(), 0);

  bool packed = false;
  for (int attempt = 0; attempt < 48 && !packed; ++attempt) {
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return charts[size_t(a)].h * density > charts[size_t(b)].h * density;
    });
    float x = 0, y = 0, shelf_h = 0;
    packed = true;
    for (int ci : order) {
      auto& ch = charts[size_t(ci)];
      const float bw = ch.w * density + 2 * g;
      const float bh = ch.h * density + 2 * g;
      if (x + bw > wlim) {  // next shelf
        y += shelf_h;
        x = 0;
        shelf_h = 0;
      }
      if (bw > wlim || y + bh > wlim) {
        packed = false;
        break;
      }
      ch.box_x = x;
      ch.box_y = y;
      x += bw;
      shelf_h = std::max(shelf_h, bh);
    }
    if (!packed) density *= 0.85f;
  }
  if (!packed) {
    int largest = 0;
    for (size_t c = 1; c < charts.size(); ++c)
      if (charts[c].area3d > charts[size_t(largest)].area3d) largest = int(c);
    throw std::runtime_error("uv_atlas: chart " + std::to_string(largest) + " (" +
                             std::to_string(charts[size_t(largest)].faces.size()) +
                             " faces) does not fit a " + std::to_string(texture_w) + "^2 texture");
  }

  // 5. final normalized uv
  for (size_t f = 0; f < nf; ++f) {
    const auto& ch = charts[size_t(out.charts[f])];
    const Face& face = mesh.faces[f];
    for (int e = 0; e < face.corners; ++e) {
      const auto& q = raw[f][size_t(e)];
      out.uv[f][size_t(e)] = {(ch.box_x + g + (q[0] - ch.lo[0]) * density) / wlim,
                              (ch.box_y + g + (q[1] - ch.lo[1]) * density) / wlim};
    }
  }
  return out;
}

}  // namespace forma::meshops
