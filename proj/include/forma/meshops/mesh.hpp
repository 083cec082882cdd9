// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <functional>
#include <vector>

namespace forma::meshops {

using SdfFn = std::function<float(float, float, float)>;

struct TriMesh {
  std::vector<std::array<float, 3>> vertices;
  std::vector<std::array<int, 3>> triangles;
};

// 256-case marching cubes with linear edge interpolation. Ambiguous faces
// are resolved by isolating the lexicographically smallest inside corner,
// a rule both cubes sharing the face evaluate identically, so the result
// is watertight. Outward orientation: triangle normals follow the SDF
// gradient (inside = negative).
TriMesh marching_cubes(const SdfFn& sdf, int grid_n, float iso = 0.0f,
                       std::array<float, 3> lo = {-1.2f, -1.2f, -1.2f},
                       std::array<float, 3> hi = {1.2f, 1.2f, 1.2f});

struct Face {
  std::array<int, 4> v = {-1, -1, -1, -1};
  int corners = 3;
};

struct QuadMesh {
  std::vector<std::array<float, 3>> vertices;
  std::vector<Face> faces;
  // per-corner uv, aligned with faces[i].v
  std::vector<std::array<std::array<float, 2>, 4>> uv;
  std::vector<int> charts;  // face -> chart id
};

// Greedy pairing of adjacent triangles whose dihedral angle is within
// angle_tol. Quads are ordered so the 0-2 diagonal is the removed shared
// edge: splitting there reproduces the input triangles exactly.
QuadMesh tris_to_quads(const TriMesh& mesh, float angle_tol_deg);

// helpers shared by tests and tools
std::array<float, 3> triangle_normal(const TriMesh& mesh, int t);
bool is_edge_manifold(const TriMesh& mesh);          // every edge on exactly 2 faces
int euler_characteristic(const TriMesh& mesh);       // V - E + F
int connected_components(const TriMesh& mesh);
std::vector<std::array<int, 3>> split_faces(const QuadMesh& mesh);  // quads -> 0-2 diagonal

}  // namespace forma::meshops
