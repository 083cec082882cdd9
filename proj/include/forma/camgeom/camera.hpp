// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string>
#include <vector>

namespace forma::camgeom {

constexpr float kPi = 3.14159265358979323846f;
constexpr float kDefaultRadius = 2.7f;     // unit-radius object fills ~70% of frame
constexpr float kDefaultFovYDeg = 40.0f;
constexpr int kDefaultImageSize = 64;

inline float deg2rad(float d) { return d * kPi / 180.0f; }

/// World->camera rigid transform plus square pinhole intrinsics.
/// Camera frame: x right, y down, z forward. World up is +z.
struct CameraPose {
  std::array<float, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
  std::array<float, 3> translation{0, 0, 0};
  float fov_y = deg2rad(kDefaultFovYDeg);
  int image_size = kDefaultImageSize;

  std::array<float, 3> position() const;  // camera center C = -R^T t
  /// world point -> camera frame
  std::array<float, 3> to_camera(const std::array<float, 3>& p) const;
  /// camera-frame direction -> world frame (R^T v)
  std::array<float, 3> dir_to_world(const std::array<float, 3>& v) const;
  /// world direction -> camera frame (R v)
  std::array<float, 3> dir_to_camera(const std::array<float, 3>& v) const;
  /// project world point to pixel coordinates (j, i) = (x, y); z > 0 required
  bool project(const std::array<float, 3>& p, float* px, float* py) const;
};

struct PoseSet {
  std::vector<CameraPose> poses;
  std::string label;  // "4" | "4-diagonal" | "8" | "16" | "custom"
};

/// Camera at `pos` looking at the origin, up = +z projected.
CameraPose look_at_origin(const std::array<float, 3>& pos, float fov_y_deg = kDefaultFovYDeg,
                          int image_size = kDefaultImageSize);

/// n cameras on a ring: azimuth offset + k*360/n, fixed elevation, look-at origin.
PoseSet pose_ring(int n, float elevation_deg, float azimuth_offset_deg, float radius,
                  float fov_y_deg = kDefaultFovYDeg, int image_size = kDefaultImageSize);

/// The four standard evaluation sets at 20 degrees elevation.
PoseSet standard_set(const std::string& label, float radius = kDefaultRadius,
                     float fov_y_deg = kDefaultFovYDeg, int image_size = kDefaultImageSize);

struct RayField {
  int res = 0;
  std::vector<float> origins;     // res*res*3, row-major pixels
  std::vector<float> directions;  // res*res*3, unit norm
};

RayField generate_rays(const CameraPose& pose, int resolution);

/// Flattened rotation (9) + translation (3), the pose MLP input.
std::array<float, 12> pose_features(const CameraPose& pose);

/// One line per camera: 12 pose floats, fov_y, image_size.
void save_pose_set(const std::string& path, const PoseSet& set);
PoseSet load_pose_set(const std::string& path);

}  // namespace forma::camgeom
