// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#include "forma/camgeom/camera.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace forma::camgeom {

namespace {

using Vec3 = std::array<float, 3>;

Vec3 sub3(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 cross3(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
float norm3(const Vec3& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); }
Vec3 normalize3(const Vec3& a) {
  const float n = norm3(a);
  return {a[0] / n, a[1] / n, a[2] / n};
}

}  // namespace

std::array<float, 3> CameraPose::position() const {
  // C = -R^T t
  const auto& r = rotation;
  const auto& t = translation;
  return {-(r[0] * t[0] + r[3] * t[1] + r[6] * t[2]),
          -(r[1] * t[0] + r[4] * t[1] + r[7] * t[2]),
          -(r[2] * t[0] + r[5] * t[1] + r[8] * t[2])};
}

std::array<float, 3> CameraPose::to_camera(const std::array<float, 3>& p) const {
  const auto& r = rotation;
  return {r[0] * p[0] + r[1] * p[1] + r[2] * p[2] + translation[0],
          r[3] * p[0] + r[4] * p[1] + r[5] * p[2] + translation[1],
          r[6] * p[0] + r[7] * p[1] + r[8] * p[2] + translation[2]};
}

std::array<float, 3> CameraPose::dir_to_world(const std::array<float, 3>& v) const {
  const auto& r = rotation;
  return {r[0] * v[0] + r[3] * v[1] + r[6] * v[2], r[1] * v[0] + r[4] * v[1] + r[7] * v[2],
          r[2] * v[0] + r[5] * v[1] + r[8] * v[2]};
}

std::array<float, 3> CameraPose::dir_to_camera(const std::array<float, 3>& v) const {
  const auto& r = rotation;
  return {r[0] * v[0] + r[1] * v[1] + r[2] * v[2], r[3] * v[0] + r[4] * v[1] + r[5] * v[2],
          r[6] * v[0] + r[7] * v[1] + r[8] * v[2]};
}

bool CameraPose::project(const std::array<float, 3>& p, float* px, float* py) const {
  const Vec3 c = to_camera(p);
  if (c[2] <= 1e-8f) return false;
  const float half = std::tan(fov_y * 0.5f);
  const float u = c[0] / c[2] / half;  // [-1,1] across the sensor
  const float v = c[1] / c[2] / half;
  *px = (u + 1.0f) * 0.5f * float(image_size - 1);
  *py = (v + 1.0f) * 0.5f * float(image_size - 1);
  return true;
}

CameraPose look_at_origin(const std::array<float, 3>& pos, float fov_y_deg, int image_size) {
  CameraPose pose;
  pose.fov_y = deg2rad(fov_y_deg);
  pose.image_size = image_size;
  const Vec3 fwd = normalize3(sub3({0, 0, 0}, pos));
  Vec3 up{0, 0, 1};
  Vec3 right = cross3(fwd, up);
  if (norm3(right) < 1e-6f) right = cross3(fwd, Vec3{1, 0, 0});  // looking straight up/down
  right = normalize3(right);
  const Vec3 down = cross3(fwd, right);
  pose.rotation = {right[0], right[1], right[2], down[0], down[1], down[2], fwd[0], fwd[1], fwd[2]};
  // t = -R * C
  pose.translation = {-(right[0] * pos[0] + right[1] * pos[1] + right[2] * pos[2]),
                      -(down[0] * pos[0] + down[1] * pos[1] + down[2] * pos[2]),
                      -(fwd[0] * pos[0] + fwd[1] * pos[1] + fwd[2] * pos[2])};
  return pose;
}

PoseSet pose_ring(int n, float elevation_deg, float azimuth_offset_deg, float radius,
                  float fov_y_deg, int image_size) {
  if (n < 1) throw std::invalid_argument("pose_ring: n must be >= 1");
  if (radius <= 0.0f) throw std::invalid_argument("pose_ring: radius must be positive");
  PoseSet set;
  set.label = "custom";
  const float e = deg2rad(elevation_deg);
  for (int k = 0; k < n; ++k) {
    const float a = deg2rad(azimuth_offset_deg + 360.0f * float(k) / float(n));
    const Vec3 pos = {radius * std::cos(e) * std::cos(a), radius * std::cos(e) * std::sin(a),
                      radius * std::sin(e)};
    set.poses.push_back(look_at_origin(pos, fov_y_deg, image_size));
  }
  return set;
}

PoseSet standard_set(const std::string& label, float radius, float fov_y_deg, int image_size) {
  PoseSet set;
  if (label == "4")
    set = pose_ring(4, 20.0f, 0.0f, radius, fov_y_deg, image_size);
  else if (label == "4-diagonal")
    set = pose_ring(4, 20.0f, 45.0f, radius, fov_y_deg, image_size);
  else if (label == "8")
    set = pose_ring(8, 20.0f, 0.0f, radius, fov_y_deg, image_size);
  else if (label == "16")
    set = pose_ring(16, 20.0f, 0.0f, radius, fov_y_deg, image_size);
  else
    throw std::invalid_argument("standard_set: unknown label " + label);
  set.label = label;
  return set;
}

RayField generate_rays(const CameraPose& pose, int resolution) {
  if (resolution < 1) throw std::invalid_argument("generate_rays: resolution must be >= 1");
  RayField rf;
  rf.res = resolution;
  rf.origins.resize(size_t(resolution) * resolution * 3);
  rf.directions.resize(size_t(resolution) * resolution * 3);
  const Vec3 c = pose.position();
  const float half = std::tan(pose.fov_y * 0.5f);
  for (int i = 0; i < resolution; ++i) {
    for (int j = 0; j < resolution; ++j) {
      // inclusive edge-to-edge grid: corner pixels sit on the frustum boundary
      const float x = resolution == 1 ? 0.0f : (2.0f * float(j) / float(resolution - 1) - 1.0f) * half;
      const float y = resolution == 1 ? 0.0f : (2.0f * float(i) / float(resolution - 1) - 1.0f) * half;
      const Vec3 d = normalize3(pose.dir_to_world({x, y, 1.0f}));
      const size_t idx = (size_t(i) * resolution + j) * 3;
      for (int k = 0; k < 3; ++k) {
        rf.origins[idx + k] = c[size_t(k)];
        rf.directions[idx + k] = d[size_t(k)];
      }
    }
  }
  return rf;
}

std::array<float, 12> pose_features(const CameraPose& pose) {
  std::array<float, 12> f{};
  for (int i = 0; i < 9; ++i) f[size_t(i)] = pose.rotation[size_t(i)];
  for (int i = 0; i < 3; ++i) f[size_t(9 + i)] = pose.translation[size_t(i)];
  return f;
}

void save_pose_set(const std::string& path, const PoseSet& set) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_pose_set: cannot open " + path);
  f << "# label " << set.label << "\n";
  for (const auto& p : set.poses) {
    char buf[512];
    const auto feat = pose_features(p);
    int off = 0;
    for (int i = 0; i < 12; ++i) off += std::snprintf(buf + off, sizeof(buf) - size_t(off), "%.8f ", double(feat[size_t(i)]));
    std::snprintf(buf + off, sizeof(buf) - size_t(off), "%.8f %d", double(p.fov_y), p.image_size);
    f << buf << "\n";
  }
}

PoseSet load_pose_set(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_pose_set: cannot open " + path);
  PoseSet set;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::stringstream ss(line);
      std::string hash, key;
      ss >> hash >> key >> set.label;
      continue;
    }
    std::stringstream ss(line);
    CameraPose p;
    for (int i = 0; i < 9; ++i) ss >> p.rotation[size_t(i)];
    for (int i = 0; i < 3; ++i) ss >> p.translation[size_t(i)];
    ss >> p.fov_y >> p.image_size;
    if (!ss) throw std::runtime_error("load_pose_set: malformed line in " + path);
    set.poses.push_back(p);
  }
  return set;
}

}  // namespace forma::camgeom
