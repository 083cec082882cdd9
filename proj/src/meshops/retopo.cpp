// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "forma/meshops/mesh.hpp"

namespace forma::meshops {

namespace {

constexpr float kPi = 3.14159265358979323846f;

float angle_at(const std::array<float, 3>& p, const std::array<float, 3>& a,
               const std::array<float, 3>& b) {
  const float u[3] = {a[0] - p[0], a[1] - p[1], a[2] - p[2]};
  const float v[3] = {b[0] - p[0], b[1] - p[1], b[2] - p[2]};
  const float dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
  const float lu = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
  const float lv = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  if (lu == 0 || lv == 0) return 0;
  return std::acos(std::clamp(dot / (lu * lv), -1.0f, 1.0f)) * 180.0f / kPi;
}

}  // namespace

// Merges triangle pairs across shared edges into quads, greedily by a score
// that prefers coplanar pairs with near-right corner angles. The merged quad
// (a, d, b, c) keeps the removed shared edge as its 0-2 diagonal, so the
// canonical split reproduces the input triangles exactly.
QuadMesh tris_to_quads(const TriMesh& mesh, float angle_tol_deg) {
  const size_t nt = mesh.triangles.size();

  // directed edge -> (triangle, corner of edge start)
  std::unordered_map<int64_t, std::pair<int, int>> directed;
  directed.reserve(nt * 3);
  auto dir_key = [](int u, int v) { return (int64_t(u) << 32) | uint32_t(v); };
  for (size_t t = 0; t < nt; ++t) {
    for (int e = 0; e < 3; ++e) {
      const int u = mesh.triangles[t][size_t(e)];
      const int v = mesh.triangles[t][size_t((e + 1) % 3)];
      if (!directed.emplace(dir_key(u, v), std::make_pair(int(t), e)).second)
        throw std::runtime_error("tris_to_quads: non-manifold edge");
    }
  }

  struct Cand {
    float score;
    int t1, t2;
    int a, b, c, d;  // t1 = (a,b,c), t2 = (b,a,d)
  };
  std::vector<Cand> cands;

  for (const auto& [key, loc] : directed) {
    const int u = int(uint32_t(key >> 32));
    const int v = int(uint32_t(key));
    if (u > v) continue;  // visit each undirected edge once
    const auto it = directed.find(dir_key(v, u));
    if (it == directed.end()) continue;

    const auto [t1, e1] = loc;
    const auto [t2, e2] = it->second;
    const auto n1 = triangle_normal(mesh, t1);
    const auto n2 = triangle_normal(mesh, t2);
    const float cosd =
        std::clamp(n1[0] * n2[0] + n1[1] * n2[1] + n1[2] * n2[2], -1.0f, 1.0f);
    const float dihedral = std::acos(cosd) * 180.0f / kPi;
    if (dihedral > angle_tol_deg + 1e-4f) continue;

    const int a = u, b = v;
    const int c = mesh.triangles[size_t(t1)][size_t((e1 + 2) % 3)];
    const int d = mesh.triangles[size_t(t2)][size_t((e2 + 2) % 3)];

    // corner angles of quad (a, d, b, c)
    const auto& pa = mesh.vertices[size_t(a)];
    const auto& pb = mesh.vertices[size_t(b)];
    const auto& pc = mesh.vertices[size_t(c)];
    const auto& pd = mesh.vertices[size_t(d)];
    float square = 0;
    square += std::fabs(angle_at(pa, pc, pd) - 90.0f);
    square += std::fabs(angle_at(pd, pa, pb) - 90.0f);
    square += std::fabs(angle_at(pb, pd, pc) - 90.0f);
    square += std::fabs(angle_at(pc, pb, pa) - 90.0f);
    cands.push_back({dihedral + square * 0.25f, t1, t2, a, b, c, d});
  }

  std::stable_sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) {
    if (x.score != y.score) return x.score < y.score;
    if (x.t1 != y.t1) return x.t1 < y.t1;
    return x.t2 < y.t2;
  });

  QuadMesh out;
  out.vertices = mesh.vertices;
  std::vector<char> used(nt, 0);
  for (const auto& cd : cands) {
    if (used[size_t(cd.t1)] || used[size_t(cd.t2)]) continue;
    used[size_t(cd.t1)] = used[size_t(cd.t2)] = 1;
    Face f;
    f.corners = 4;
    f.v = {cd.a, cd.d, cd.b, cd.c};
    out.faces.push_back(f);
  }
  for (size_t t = 0; t < nt; ++t) {
    if (used[t]) continue;
    Face f;
    f.corners = 3;
    f.v = {mesh.triangles[t][0], mesh.triangles[t][1], mesh.triangles[t][2], -1};
    out.faces.push_back(f);
  }
  return out;
}

}  // namespace forma::meshops
