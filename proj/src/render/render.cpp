// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#include "forma/render/render.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "forma/render/image_io.hpp"

namespace forma::render {

namespace fs = std::filesystem;
using camgeom::CameraPose;
using promptgen::Primitive;
using promptgen::SceneSpec;
using promptgen::Shape;

namespace {

struct Vec3 {
  float x = 0, y = 0, z = 0;
};

Vec3 sub(const std::array<float, 3>& a, const std::array<float, 3>& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
float dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

// Projected tan-extent of a ball along image axis u (z = forward). The
// third camera axis drops out, so the 2D tangent-cone solution is exact.
void ball_tan_interval(const Vec3& rel, float rad, const Vec3& u_axis, const Vec3& f_axis,
                       float* lo, float* hi) {
  const float u = dot(rel, u_axis);
  const float z = dot(rel, f_axis);
  const float h = std::sqrt(u * u + z * z);
  const float alpha = std::asin(std::min(1.0f, rad / std::max(h, rad)));
  const float beta = std::atan2(u, z);
  *lo = std::min(*lo, std::tan(beta - alpha));
  *hi = std::max(*hi, std::tan(beta + alpha));
}

void point_tan_interval(const Vec3& rel, const Vec3& u_axis, const Vec3& f_axis, float* lo,
                        float* hi) {
  const float t = dot(rel, u_axis) / dot(rel, f_axis);
  *lo = std::min(*lo, t);
  *hi = std::max(*hi, t);
}

// Tight projected interval of one primitive. Cubes use their corners,
// curved shapes use exact ball unions (sampled along rims/rings).
void primitive_tan_interval(const Primitive& p, const std::array<float, 3>& cam,
                            const Vec3& u_axis, const Vec3& f_axis, float* lo, float* hi) {
  const Vec3 rel = sub(p.center, cam);
  const float s = p.scale;
  switch (p.shape) {
    case Shape::kSphere:
      ball_tan_interval(rel, s, u_axis, f_axis, lo, hi);
      break;
    case Shape::kCube:
      for (int m = 0; m < 8; ++m) {
        const Vec3 corner = {rel.x + (m & 1 ? s : -s), rel.y + (m & 2 ? s : -s),
                             rel.z + (m & 4 ? s : -s)};
        point_tan_interval(corner, u_axis, f_axis, lo, hi);
      }
      break;
    case Shape::kCylinder:
      for (int k = 0; k < 128; ++k) {
        const float t = 2.0f * camgeom::kPi * float(k) / 128.0f;
        for (float zs : {-s, s}) {
          const Vec3 q = {rel.x + 0.7f * s * std::cos(t), rel.y + 0.7f * s * std::sin(t),
                          rel.z + zs};
          point_tan_interval(q, u_axis, f_axis, lo, hi);
        }
      }
      break;
    case Shape::kTorus:
      // solid torus = union of balls centered on the ring
      for (int k = 0; k < 128; ++k) {
        const float t = 2.0f * camgeom::kPi * float(k) / 128.0f;
        const Vec3 q = {rel.x + 0.7f * s * std::cos(t), rel.y + 0.7f * s * std::sin(t), rel.z};
        ball_tan_interval(q, 0.3f * s, u_axis, f_axis, lo, hi);
      }
      break;
    case Shape::kCapsule:
      for (float zs : {-0.5f * s, 0.5f * s}) {
        const Vec3 q = {rel.x, rel.y, rel.z + zs};
        ball_tan_interval(q, 0.5f * s, u_axis, f_axis, lo, hi);
      }
      break;
  }
}

float projected_fraction(const SceneSpec& scene, float radius, int ring_n, float elev_deg,
                         float fov_y_deg) {
  const float tan_f = std::tan(camgeom::deg2rad(fov_y_deg) * 0.5f);
  float worst = 0;
  for (int v = 0; v < ring_n; ++v) {
    const float az = camgeom::deg2rad(360.0f * float(v) / float(ring_n));
    const float e = camgeom::deg2rad(elev_deg);
    const std::array<float, 3> cam = {radius * std::cos(e) * std::cos(az),
                                      radius * std::cos(e) * std::sin(az),
                                      radius * std::sin(e)};
    const Vec3 fwd = {-cam[0] / radius, -cam[1] / radius, -cam[2] / radius};
    const Vec3 right = {-std::sin(az), std::cos(az), 0};
    const Vec3 down = {std::sin(e) * std::cos(az), std::sin(e) * std::sin(az), -std::cos(e)};
    for (const Vec3& axis : {right, down}) {
      float lo = 1e30f, hi = -1e30f;
      for (const auto& p : scene.primitives)
        primitive_tan_interval(p, cam, axis, fwd, &lo, &hi);
      worst = std::max(worst, (hi - lo) / (2.0f * tan_f));
    }
  }
  return worst;
}

float circumscribed_radius(const SceneSpec& scene) {
  float r = 0;
  for (const auto& p : scene.primitives) {
    const auto he = p.half_extents();
    const float c = std::sqrt(p.center[0] * p.center[0] + p.center[1] * p.center[1] +
                              p.center[2] * p.center[2]);
    r = std::max(r, c + std::sqrt(he[0] * he[0] + he[1] * he[1] + he[2] * he[2]));
  }
  return r;
}

void write_pose_sidecar(const std::string& path, const CameraPose& pose) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write pose sidecar: " + path);
  const auto f = camgeom::pose_features(pose);
  out << "pose";
  char buf[32];
  for (float v : f) {
    std::snprintf(buf, sizeof buf, " %.8f", double(v));
    out << buf;
  }
  std::snprintf(buf, sizeof buf, " %.8f %d", double(pose.fov_y), pose.image_size);
  out << buf << "\ndepth_scale " << int(kDepthScale) << "\n";
}

}  // namespace

ChannelImage render_channels(const SceneSpec& scene, const CameraPose& pose, int resolution) {
  const camgeom::RayField rays = camgeom::generate_rays(pose, resolution);
  const size_t n = size_t(resolution) * size_t(resolution);
  ChannelImage img;
  img.res = resolution;
  img.rgb.assign(n * 3, 0.0f);
  img.albedo.assign(n * 3, 0.0f);
  img.normal.assign(n * 3, 0.0f);
  img.depth.assign(n, 0.0f);
  img.mask.assign(n, 0.0f);
  img.roughness.assign(n, 0.0f);
  img.metallic.assign(n, 0.0f);
  img.edge.assign(n, 0);

  for (size_t px = 0; px < n; ++px) {
    const float* o = rays.origins.data() + px * 3;
    const float* dir = rays.directions.data() + px * 3;
    float t = 0;
    bool hit = false;
    for (int step = 0; step < kMaxSteps; ++step) {
      const float d = scene.sdf(o[0] + t * dir[0], o[1] + t * dir[1], o[2] + t * dir[2]);
      if (d < kHitEps) {
        hit = true;
        break;
      }
      t += d;
      if (t > kFarClip) break;
    }
    if (!hit) continue;
    const float p[3] = {o[0] + t * dir[0], o[1] + t * dir[1], o[2] + t * dir[2]};
    const float h = 1e-4f;
    float nw[3] = {scene.sdf(p[0] + h, p[1], p[2]) - scene.sdf(p[0] - h, p[1], p[2]),
                   scene.sdf(p[0], p[1] + h, p[2]) - scene.sdf(p[0], p[1] - h, p[2]),
                   scene.sdf(p[0], p[1], p[2] + h) - scene.sdf(p[0], p[1], p[2] - h)};
    const float gn = std::sqrt(nw[0] * nw[0] + nw[1] * nw[1] + nw[2] * nw[2]);
    if (gn > 0)
      for (float& v : nw) v /= gn;
    const auto& prim = scene.primitives[size_t(std::max(0, scene.nearest(p[0], p[1], p[2])))];
    const float lambert = std::max(0.0f, -(nw[0] * dir[0] + nw[1] * dir[1] + nw[2] * dir[2]));
    const float shade = 0.2f + 0.8f * lambert;
    const auto nc = pose.dir_to_camera({nw[0], nw[1], nw[2]});
    for (int c = 0; c < 3; ++c) {
      img.rgb[px * 3 + size_t(c)] = std::clamp(prim.albedo[size_t(c)] * shade, 0.0f, 1.0f);
      img.albedo[px * 3 + size_t(c)] = prim.albedo[size_t(c)];
      img.normal[px * 3 + size_t(c)] = nc[size_t(c)];
    }
    img.depth[px] = t;
    img.mask[px] = 1.0f;
    img.roughness[px] = prim.roughness;
    img.metallic[px] = prim.metallic;
  }

  // mask boundary, then one dilation
  std::vector<uint8_t> boundary(n, 0);
  auto m = [&](int i, int j) {
    return img.mask[size_t(i) * size_t(resolution) + size_t(j)] > 0.5f;
  };
  for (int i = 0; i < resolution; ++i)
    for (int j = 0; j < resolution; ++j) {
      const bool c = m(i, j);
      for (int di = -1; di <= 1 && !boundary[size_t(i) * size_t(resolution) + size_t(j)]; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          const int ii = i + di, jj = j + dj;
          if (ii < 0 || jj < 0 || ii >= resolution || jj >= resolution) continue;
          if (m(ii, jj) != c) {
            boundary[size_t(i) * size_t(resolution) + size_t(j)] = 1;
            break;
          }
        }
    }
  for (int i = 0; i < resolution; ++i)
    for (int j = 0; j < resolution; ++j)
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          const int ii = i + di, jj = j + dj;
          if (ii < 0 || jj < 0 || ii >= resolution || jj >= resolution) continue;
          if (boundary[size_t(ii) * size_t(resolution) + size_t(jj)])
            img.edge[size_t(i) * size_t(resolution) + size_t(j)] = 1;
        }
  return img;
}

float auto_frame_radius(const SceneSpec& scene, int ring_n, float elev_deg, float fov_y_deg,
                        float frame_frac) {
  const float rb = circumscribed_radius(scene);
  float lo = rb * 1.05f + 0.05f;
  float hi = 1000.0f;
  if (projected_fraction(scene, lo, ring_n, elev_deg, fov_y_deg) < frame_frac) return lo;
  for (int it = 0; it < 60; ++it) {
    const float mid = 0.5f * (lo + hi);
    if (projected_fraction(scene, mid, ring_n, elev_deg, fov_y_deg) > frame_frac)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5f * (lo + hi);
}

float silhouette_fraction(const ChannelImage& img) {
  int imin = img.res, imax = -1, jmin = img.res, jmax = -1;
  for (int i = 0; i < img.res; ++i)
    for (int j = 0; j < img.res; ++j)
      if (img.mask[size_t(i) * size_t(img.res) + size_t(j)] > 0.5f) {
        imin = std::min(imin, i);
        imax = std::max(imax, i);
        jmin = std::min(jmin, j);
        jmax = std::max(jmax, j);
      }
  if (imax < 0) return 0;
  return float(std::max(imax - imin + 1, jmax - jmin + 1)) / float(img.res);
}

void save_channels(const std::string& stem, const ChannelImage& img, const CameraPose& pose) {
  const int res = img.res;
  const size_t n = size_t(res) * size_t(res);
  auto rgb8 = [&](const std::vector<float>& src) {
    ImageU8 out;
    out.width = out.height = res;
    out.channels = 3;
    out.px.resize(n * 3);
    for (size_t i = 0; i < n * 3; ++i) out.px[i] = to_u8(src[i]);
    return out;
  };
  auto gray8 = [&](const std::vector<float>& src) {
    ImageU8 out;
    out.width = out.height = res;
    out.channels = 1;
    out.px.resize(n);
    for (size_t i = 0; i < n; ++i) out.px[i] = to_u8(src[i]);
    return out;
  };
  write_png8(stem + "_rgb.png", rgb8(img.rgb));
  write_png8(stem + "_albedo.png", rgb8(img.albedo));
  ImageU8 nrm;
  nrm.width = nrm.height = res;
  nrm.channels = 3;
  nrm.px.resize(n * 3);
  for (size_t i = 0; i < n * 3; ++i) nrm.px[i] = to_u8(img.normal[i] * 0.5f + 0.5f);
  write_png8(stem + "_normal.png", nrm);
  ImageU16 dep;
  dep.width = dep.height = res;
  dep.px.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const float v = img.depth[i] * kDepthScale;
    dep.px[i] = uint16_t(std::clamp(v + 0.5f, 0.0f, 65535.0f));
  }
  write_png16(stem + "_depth.png", dep);
  write_png8(stem + "_mask.png", gray8(img.mask));
  write_png8(stem + "_rough.png", gray8(img.roughness));
  write_png8(stem + "_metal.png", gray8(img.metallic));
  ImageU8 edge;
  edge.width = edge.height = res;
  edge.channels = 1;
  edge.px.resize(n);
  for (size_t i = 0; i < n; ++i) edge.px[i] = img.edge[i] ? 255 : 0;
  write_png8(stem + "_edge.png", edge);
  write_pose_sidecar(stem + "_pose.txt", pose);
}

ChannelImage load_channels(const std::string& stem) {
  const ImageU8 rgb = read_png8(stem + "_rgb.png");
  const int res = rgb.width;
  const size_t n = size_t(res) * size_t(res);
  ChannelImage img;
  img.res = res;
  auto to_f3 = [&](const ImageU8& src) {
    std::vector<float> out(n * 3);
    for (size_t i = 0; i < n * 3; ++i) out[i] = float(src.px[i]) / 255.0f;
    return out;
  };
  auto to_f1 = [&](const ImageU8& src) {
    std::vector<float> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = float(src.px[i]) / 255.0f;
    return out;
  };
  img.rgb = to_f3(rgb);
  img.albedo = to_f3(read_png8(stem + "_albedo.png"));
  const ImageU8 nrm = read_png8(stem + "_normal.png");
  img.normal.resize(n * 3);
  for (size_t i = 0; i < n * 3; ++i) img.normal[i] = float(nrm.px[i]) / 255.0f * 2.0f - 1.0f;
  const ImageU16 dep = read_png16(stem + "_depth.png");
  img.depth.resize(n);
  for (size_t i = 0; i < n; ++i) img.depth[i] = float(dep.px[i]) / kDepthScale;
  img.mask = to_f1(read_png8(stem + "_mask.png"));
  for (float& v : img.mask) v = v > 0.5f ? 1.0f : 0.0f;
  img.roughness = to_f1(read_png8(stem + "_rough.png"));
  img.metallic = to_f1(read_png8(stem + "_metal.png"));
  const ImageU8 edge = read_png8(stem + "_edge.png");
  img.edge.resize(n);
  for (size_t i = 0; i < n; ++i) img.edge[i] = edge.px[i] > 127 ? 1 : 0;
  // background is zero by contract; undo quantization noise outside the mask
  for (size_t i = 0; i < n; ++i) {
    if (img.mask[i] > 0.5f) continue;
    for (int c = 0; c < 3; ++c) {
      img.rgb[i * 3 + size_t(c)] = 0;
      img.albedo[i * 3 + size_t(c)] = 0;
      img.normal[i * 3 + size_t(c)] = 0;
    }
    img.depth[i] = 0;
    img.roughness[i] = 0;
    img.metallic[i] = 0;
  }
  return img;
}

CameraPose load_channel_pose(const std::string& stem) {
  std::ifstream in(stem + "_pose.txt", std::ios::binary);
  if (!in) throw std::runtime_error("cannot read pose sidecar: " + stem + "_pose.txt");
  std::string tag;
  in >> tag;
  if (tag != "pose") throw std::runtime_error("bad pose sidecar: " + stem);
  CameraPose pose;
  for (int i = 0; i < 9; ++i) in >> pose.rotation[size_t(i)];
  for (int i = 0; i < 3; ++i) in >> pose.translation[size_t(i)];
  in >> pose.fov_y >> pose.image_size;
  if (!in) throw std::runtime_error("truncated pose sidecar: " + stem);
  return pose;
}

int render_dataset(const std::vector<promptgen::AssetRecord>& manifest,
                   const std::string& out_dir, const DatasetOptions& opts) {
  fs::create_directories(out_dir);
  gradcore::Rng root(opts.seed);
  int written = 0;
  for (size_t idx = 0; idx < manifest.size(); ++idx) {
    const auto& rec = manifest[idx];
    if (!rec.accepted) continue;
    const SceneSpec scene =
        promptgen::realize_scene(promptgen::parse_prompt(rec.prompt), rec.seed);
    const float radius = auto_frame_radius(scene, opts.ring_views, opts.ring_elevation_deg,
                                           opts.fov_y_deg, opts.frame_frac);
    char name[32];
    std::snprintf(name, sizeof name, "asset_%04zu", idx);
    const fs::path dir = fs::path(out_dir) / name;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create " + dir.string() + " for " + name);
    {
      std::ofstream meta(dir / "asset.json", std::ios::binary);
      meta << promptgen::manifest_line(rec) << '\n';
    }
    const camgeom::PoseSet ring =
        camgeom::pose_ring(opts.ring_views, opts.ring_elevation_deg, 0.0f, radius,
                           opts.fov_y_deg, opts.resolution);
    int view = 0;
    auto emit = [&](const CameraPose& pose) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "view_%02d", view);
      const ChannelImage img = render_channels(scene, pose, opts.resolution);
      save_channels((dir / stem).string(), img, pose);
      ++view;
      ++written;
    };
    for (const auto& pose : ring.poses) emit(pose);
    if (opts.random_views > 0) {
      gradcore::Rng rng = root.fork(uint64_t(idx) + 1);
      const float tan_f = std::tan(camgeom::deg2rad(opts.fov_y_deg) * 0.5f);
      for (int k = 0; k < opts.random_views; ++k) {
        const float elev = rng.uniform(-10.0f, 40.0f);
        const float fov = rng.uniform(30.0f, 50.0f);
        const float az = rng.uniform(0.0f, 360.0f);
        const float r_k = radius * tan_f / std::tan(camgeom::deg2rad(fov) * 0.5f);
        const camgeom::PoseSet one =
            camgeom::pose_ring(1, elev, az, r_k, fov, opts.resolution);
        emit(one.poses[0]);
      }
    }
  }
  return written;
}

}  // namespace forma::render
