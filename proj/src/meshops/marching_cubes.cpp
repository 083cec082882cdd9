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

// Corner bit layout: index = x | y<<1 | z<<2 over the unit cube.
// A cube edge is identified globally by (base grid point, axis), so shared
// vertices are created exactly once and the mesh is watertight by
// construction.

struct CellContext {
  int n = 0;
  std::array<float, 3> lo;
  std::array<float, 3> step;

  std::array<float, 3> point(int i, int j, int k) const {
    return {lo[0] + step[0] * float(i), lo[1] + step[1] * float(j), lo[2] + step[2] * float(k)};
  }
};

int64_t edge_key(int i, int j, int k, int axis, int n) {
  return ((int64_t(i) * n + j) * n + k) * 3 + axis;
}

}  // namespace

TriMesh marching_cubes(const SdfFn& sdf, int grid_n, float iso, std::array<float, 3> lo,
                       std::array<float, 3> hi) {
  if (grid_n < 8) throw std::invalid_argument("marching_cubes: grid_n must be >= 8");
  const int n = grid_n;
  CellContext ctx;
  ctx.n = n;
  ctx.lo = lo;
  for (int c = 0; c < 3; ++c) ctx.step[size_t(c)] = (hi[size_t(c)] - lo[size_t(c)]) / float(n - 1);

  std::vector<float> grid(size_t(n) * size_t(n) * size_t(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        const auto p = ctx.point(i, j, k);
        float w = sdf(p[0], p[1], p[2]) - iso;
        if (w == 0.0f) w = -1e-7f;  // break exact-zero ties consistently
        grid[(size_t(i) * size_t(n) + size_t(j)) * size_t(n) + size_t(k)] = w;
      }
  auto value = [&](int i, int j, int k) {
    return grid[(size_t(i) * size_t(n) + size_t(j)) * size_t(n) + size_t(k)];
  };

  TriMesh mesh;
  std::unordered_map<int64_t, int> edge_vertex;

  // vertex on the cut edge starting at (i,j,k) along axis
  auto cut_vertex = [&](int i, int j, int k, int axis) {
    const int64_t key = edge_key(i, j, k, axis, n);
    const auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    const int di = axis == 0 ? 1 : 0, dj = axis == 1 ? 1 : 0, dk = axis == 2 ? 1 : 0;
    const float w0 = value(i, j, k);
    const float w1 = value(i + di, j + dj, k + dk);
    const float t = w0 / (w0 - w1);
    const auto a = ctx.point(i, j, k);
    const auto b = ctx.point(i + di, j + dj, k + dk);
    const int idx = int(mesh.vertices.size());
    mesh.vertices.push_back({a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t,
                             a[2] + (b[2] - a[2]) * t});
    edge_vertex.emplace(key, idx);
    return idx;
  };

  // cube edges: (corner bit pattern of the lower end, axis)
  struct CubeEdge {
    int corner;  // lower corner bits
    int axis;
  };

  for (int ci = 0; ci + 1 < n; ++ci)
    for (int cj = 0; cj + 1 < n; ++cj)
      for (int ck = 0; ck + 1 < n; ++ck) {
        float w[8];
        bool inside_any = false, outside_any = false;
        for (int m = 0; m < 8; ++m) {
          w[m] = value(ci + (m & 1), cj + ((m >> 1) & 1), ck + ((m >> 2) & 1));
          (w[m] < 0 ? inside_any : outside_any) = true;
        }
        if (!inside_any || !outside_any) continue;

        auto corner_pos = [&](int m) {
          return ctx.point(ci + (m & 1), cj + ((m >> 1) & 1), ck + ((m >> 2) & 1));
        };
        auto edge_vert = [&](const CubeEdge& e) {
          return cut_vertex(ci + (e.corner & 1), cj + ((e.corner >> 1) & 1),
                            ck + ((e.corner >> 2) & 1), e.axis);
        };

        // Directed chords: (from, to) global vertex ids. Oriented so loops
        // wind with outward normals (SDF gradient side).
        std::unordered_map<int, int> next;
        next.reserve(12);

        for (int axis = 0; axis < 3; ++axis) {
          const int ubit = axis == 0 ? 1 : 0;           // first in-face axis (bit index)
          const int vbit = axis == 2 ? 1 : 2;           // second in-face axis
          for (int side = 0; side <= 1; ++side) {
            // face corners as cube-corner bit patterns
            const int base = side << axis;
            const int c00 = base;
            const int c10 = base | (1 << ubit);
            const int c01 = base | (1 << vbit);
            const int c11 = base | (1 << ubit) | (1 << vbit);
            // face boundary edges: (lower corner, axis)
            const CubeEdge e_u0 = {c00, ubit};  // c00 - c10
            const CubeEdge e_u1 = {c01, ubit};  // c01 - c11
            const CubeEdge e_v0 = {c00, vbit};  // c00 - c01
            const CubeEdge e_v1 = {c10, vbit};  // c10 - c11
            const CubeEdge face_edges[4] = {e_u0, e_u1, e_v0, e_v1};
            const int ends[4][2] = {{c00, c10}, {c01, c11}, {c00, c01}, {c10, c11}};

            int cut_idx[4];
            int cuts = 0;
            for (int e = 0; e < 4; ++e)
              if ((w[ends[e][0]] < 0) != (w[ends[e][1]] < 0)) cut_idx[cuts++] = e;
            if (cuts == 0) continue;

            float nf[3] = {0, 0, 0};
            nf[axis] = side ? 1.0f : -1.0f;

            auto add_chord = [&](int ea, int eb, const std::array<float, 3>& ref_inside) {
              const int va = edge_vert(face_edges[ea]);
              const int vb = edge_vert(face_edges[eb]);
              const auto& pa = mesh.vertices[size_t(va)];
              const auto& pb = mesh.vertices[size_t(vb)];
              const float d[3] = {pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]};
              const float mid[3] = {(pa[0] + pb[0]) * 0.5f, (pa[1] + pb[1]) * 0.5f,
                                    (pa[2] + pb[2]) * 0.5f};
              const float cx = nf[1] * d[2] - nf[2] * d[1];
              const float cy = nf[2] * d[0] - nf[0] * d[2];
              const float cz = nf[0] * d[1] - nf[1] * d[0];
              const float toward = cx * (ref_inside[0] - mid[0]) + cy * (ref_inside[1] - mid[1]) +
                                   cz * (ref_inside[2] - mid[2]);
              if (toward > 0)
                next[vb] = va;
              else
                next[va] = vb;
            };

            if (cuts == 2) {
              std::array<float, 3> ref = {0, 0, 0};
              int inside_count = 0;
              for (int m : {c00, c10, c01, c11})
                if (w[m] < 0) {
                  const auto p = corner_pos(m);
                  for (int c = 0; c < 3; ++c) ref[size_t(c)] += p[size_t(c)];
                  ++inside_count;
                }
              for (int c = 0; c < 3; ++c) ref[size_t(c)] /= float(inside_count);
              add_chord(cut_idx[0], cut_idx[1], ref);
            } else if (cuts == 4) {
              // ambiguous: both diagonals inside; isolate each inside corner
              for (int m : {c00, c10, c01, c11}) {
                if (w[m] >= 0) continue;
                int adj[2];
                int na = 0;
                for (int e = 0; e < 4; ++e)
                  if (ends[e][0] == m || ends[e][1] == m) adj[na++] = e;
                add_chord(adj[0], adj[1], corner_pos(m));
              }
            }
          }
        }

        // assemble loops and fan-triangulate
        std::unordered_map<int, int> start_of = next;
        while (!start_of.empty()) {
          const int start = start_of.begin()->first;
          std::vector<int> loop;
          int cur = start;
          while (true) {
            loop.push_back(cur);
            const auto it = start_of.find(cur);
            if (it == start_of.end()) break;  // defensive: open chain, drop it
            const int nxt = it->second;
            start_of.erase(it);
            if (nxt == start) break;
            cur = nxt;
          }
          if (loop.size() < 3) continue;
          for (size_t t = 1; t + 1 < loop.size(); ++t)
            mesh.triangles.push_back({loop[0], loop[t], loop[t + 1]});
        }
      }
  return mesh;
}

std::array<float, 3> triangle_normal(const TriMesh& mesh, int t) {
  const auto& a = mesh.vertices[size_t(mesh.triangles[size_t(t)][0])];
  const auto& b = mesh.vertices[size_t(mesh.triangles[size_t(t)][1])];
  const auto& c = mesh.vertices[size_t(mesh.triangles[size_t(t)][2])];
  const float u[3] = {b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  const float v[3] = {c[0] - a[0], c[1] - a[1], c[2] - a[2]};
  std::array<float, 3> n = {u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2],
                            u[0] * v[1] - u[1] * v[0]};
  const float len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
  if (len > 0)
    for (float& x : n) x /= len;
  return n;
}

namespace {

int64_t pair_key(int a, int b) {
  if (a > b) std::swap(a, b);
  return (int64_t(a) << 32) | uint32_t(b);
}

}  // namespace

bool is_edge_manifold(const TriMesh& mesh) {
  std::unordered_map<int64_t, int> count;
  for (const auto& t : mesh.triangles)
    for (int e = 0; e < 3; ++e) ++count[pair_key(t[size_t(e)], t[size_t((e + 1) % 3)])];
  for (const auto& [k, c] : count)
    if (c != 2) return false;
  return true;
}

int euler_characteristic(const TriMesh& mesh) {
  std::unordered_map<int64_t, int> edges;
  for (const auto& t : mesh.triangles)
    for (int e = 0; e < 3; ++e) ++edges[pair_key(t[size_t(e)], t[size_t((e + 1) % 3)])];
  return int(mesh.vertices.size()) - int(edges.size()) + int(mesh.triangles.size());
}

int connected_components(const TriMesh& mesh) {
  std::vector<int> parent(mesh.vertices.size());
  for (size_t i = 0; i < parent.size(); ++i) parent[i] = int(i);
  std::function<int(int)> find = [&](int x) {
    while (parent[size_t(x)] != x) {
      parent[size_t(x)] = parent[size_t(parent[size_t(x)])];
      x = parent[size_t(x)];
    }
    return x;
  };
  for (const auto& t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      const int a = find(t[size_t(e)]);
      const int b = find(t[size_t((e + 1) % 3)]);
      if (a != b) parent[size_t(a)] = b;
    }
  }
  std::vector<char> used(mesh.vertices.size(), 0);
  for (const auto& t : mesh.triangles)
    for (int e = 0; e < 3; ++e) used[size_t(t[size_t(e)])] = 1;
  int comps = 0;
  for (size_t i = 0; i < parent.size(); ++i)
    if (used[i] && find(int(i)) == int(i)) ++comps;
  return comps;
}

std::vector<std::array<int, 3>> split_faces(const QuadMesh& mesh) {
  std::vector<std::array<int, 3>> out;
  for (const auto& f : mesh.faces) {
    out.push_back({f.v[0], f.v[1], f.v[2]});
    if (f.corners == 4) out.push_back({f.v[0], f.v[2], f.v[3]});
  }
  return out;
}

}  // namespace forma::meshops
