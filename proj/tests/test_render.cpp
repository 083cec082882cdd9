// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#include "forma/render/render.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "forma/render/image_io.hpp"

using namespace forma;
using namespace forma::render;
using promptgen::parse_prompt;
using promptgen::realize_scene;
using promptgen::SceneSpec;

namespace {

namespace fs = std::filesystem;

fs::path test_dir(const char* name) {
  const auto dir = fs::temp_directory_path() / "forma_render_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("render_channels: center-pixel depth and normal of the unit sphere") {
  const SceneSpec scene = realize_scene(parse_prompt("a red sphere"), 1);
  const int res = 65;
  const auto ring = camgeom::pose_ring(16, 20.0f, 0.0f, 2.7f, camgeom::kDefaultFovYDeg, res);
  const ChannelImage img = render_channels(scene, ring.poses[0], res);
  const size_t center = size_t(res / 2) * size_t(res) + size_t(res / 2);
  CHECK(img.mask[center] == 1.0f);
  CHECK(std::fabs(img.depth[center] - 1.7f) < 1e-3f);
  // camera-frame normal points straight back at the camera
  CHECK(std::fabs(img.normal[center * 3 + 0]) < 1e-2f);
  CHECK(std::fabs(img.normal[center * 3 + 1]) < 1e-2f);
  CHECK(std::fabs(img.normal[center * 3 + 2] + 1.0f) < 1e-2f);
  // headlight shading: full lambert at the center pixel
  const auto albedo = promptgen::color_albedo(promptgen::Color::kRed);
  for (int c = 0; c < 3; ++c)
    CHECK(std::fabs(img.rgb[center * 3 + size_t(c)] - albedo[size_t(c)]) < 1e-2f);
}

TEST_CASE("render_channels: channel invariants") {
  const SceneSpec scene = realize_scene(parse_prompt("a glossy blue torus on a metal gray cube"), 4);
  const float radius = auto_frame_radius(scene, 16, 20.0f, 40.0f, 0.7f);
  const auto ring = camgeom::pose_ring(4, 20.0f, 30.0f, radius, 40.0f, 48);
  for (const auto& pose : ring.poses) {
    const ChannelImage img = render_channels(scene, pose, 48);
    for (size_t px = 0; px < img.mask.size(); ++px) {
      if (img.mask[px] == 0.0f) {
        CHECK(img.depth[px] == 0.0f);
        CHECK(img.normal[px * 3] == 0.0f);
        CHECK(img.normal[px * 3 + 1] == 0.0f);
        CHECK(img.normal[px * 3 + 2] == 0.0f);
        CHECK(img.rgb[px * 3] == 0.0f);
        CHECK(img.albedo[px * 3] == 0.0f);
        CHECK(img.roughness[px] == 0.0f);
        CHECK(img.metallic[px] == 0.0f);
      } else {
        const float nx = img.normal[px * 3], ny = img.normal[px * 3 + 1],
                    nz = img.normal[px * 3 + 2];
        CHECK(std::fabs(std::sqrt(nx * nx + ny * ny + nz * nz) - 1.0f) < 1e-3f);
        // attributes come verbatim from one of the primitives
        bool matched = false;
        for (const auto& prim : scene.primitives) {
          if (img.albedo[px * 3] == prim.albedo[0] && img.albedo[px * 3 + 1] == prim.albedo[1] &&
              img.albedo[px * 3 + 2] == prim.albedo[2] && img.roughness[px] == prim.roughness &&
              img.metallic[px] == prim.metallic)
            matched = true;
        }
        CHECK(matched);
      }
    }
  }
}

TEST_CASE("render_channels: sphere mask area matches the pinhole projection") {
  // exact tangent-cone area for the unit sphere at d = 2.7 (fov wide enough
  // for the silhouette to fit)
  const SceneSpec scene = realize_scene(parse_prompt("a red sphere"), 1);
  {
    const int res = 128;
    const float fov = 50.0f;
    const auto pose = camgeom::pose_ring(1, 0.0f, 0.0f, 2.7f, fov, res).poses[0];
    const ChannelImage img = render_channels(scene, pose, res);
    float area = 0;
    for (float v : img.mask) area += v;
    const float f = float(res - 1) / (2.0f * std::tan(camgeom::deg2rad(fov) * 0.5f));
    const float want = camgeom::kPi * std::pow(f * std::tan(std::asin(1.0f / 2.7f)), 2.0f);
    CHECK(std::fabs(area - want) / want < 0.03f);
  }
  // the flat-disc formula pi*(f*r/d)^2 holds in its small-angle regime
  {
    SceneSpec small;
    promptgen::Primitive p;
    p.shape = promptgen::Shape::kSphere;
    p.scale = 0.3f;
    small.primitives.push_back(p);
    small.recompute_bounds();
    const int res = 256;
    const float fov = 40.0f;
    const auto pose = camgeom::pose_ring(1, 10.0f, 0.0f, 2.7f, fov, res).poses[0];
    const ChannelImage img = render_channels(small, pose, res);
    float area = 0;
    for (float v : img.mask) area += v;
    const float f = float(res - 1) / (2.0f * std::tan(camgeom::deg2rad(fov) * 0.5f));
    const float want = camgeom::kPi * std::pow(f * 0.3f / 2.7f, 2.0f);
    CHECK(std::fabs(area - want) / want < 0.03f);
  }
}

TEST_CASE("render_channels: depth gradients agree with projected normals") {
  for (const char* text : {"a red sphere", "a green torus on a blue cylinder"}) {
    const SceneSpec scene = realize_scene(parse_prompt(text), 2);
    const float radius = auto_frame_radius(scene, 16, 20.0f, 40.0f, 0.7f);
    const int res = 64;
    const auto pose = camgeom::pose_ring(16, 20.0f, 0.0f, radius, 40.0f, res).poses[3];
    const ChannelImage img = render_channels(scene, pose, res);
    int total = 0, consistent = 0;
    auto at = [&](int i, int j) { return size_t(i) * size_t(res) + size_t(j); };
    for (int i = 1; i < res - 1; ++i)
      for (int j = 1; j < res - 1; ++j) {
        const size_t px = at(i, j);
        if (img.edge[px]) continue;
        bool interior = true;
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj)
            if (img.mask[at(i + di, j + dj)] == 0.0f) interior = false;
        if (!interior) continue;
        const float gx = img.depth[at(i, j + 1)] - img.depth[at(i, j - 1)];
        const float gy = img.depth[at(i + 1, j)] - img.depth[at(i - 1, j)];
        const float nx = img.normal[px * 3], ny = img.normal[px * 3 + 1];
        if (std::fabs(nx) > 0.05f && std::fabs(gx) > 1e-4f) {
          ++total;
          if ((gx > 0) == (nx > 0)) ++consistent;
        }
        if (std::fabs(ny) > 0.05f && std::fabs(gy) > 1e-4f) {
          ++total;
          if ((gy > 0) == (ny > 0)) ++consistent;
        }
      }
    REQUIRE(total > 100);
    CHECK(float(consistent) / float(total) >= 0.95f);
  }
}

TEST_CASE("render_channels: downsampled 128 render matches the native 64 render") {
  const SceneSpec scene = realize_scene(parse_prompt("a yellow sphere on a purple cube"), 6);
  const float radius = auto_frame_radius(scene, 16, 20.0f, 40.0f, 0.7f);
  const auto pose64 = camgeom::pose_ring(1, 20.0f, 40.0f, radius, 40.0f, 64).poses[0];
  const auto pose128 = camgeom::pose_ring(1, 20.0f, 40.0f, radius, 40.0f, 128).poses[0];
  const ChannelImage a = render_channels(scene, pose64, 64);
  const ChannelImage b = render_channels(scene, pose128, 128);
  double sum = 0;
  int count = 0;
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j) {
      const size_t px = size_t(i) * 64 + size_t(j);
      if (a.edge[px]) continue;
      bool edge128 = false;
      for (int di = 0; di < 2; ++di)
        for (int dj = 0; dj < 2; ++dj)
          if (b.edge[size_t(2 * i + di) * 128 + size_t(2 * j + dj)]) edge128 = true;
      if (edge128) continue;
      for (int c = 0; c < 3; ++c) {
        float avg = 0;
        for (int di = 0; di < 2; ++di)
          for (int dj = 0; dj < 2; ++dj)
            avg += b.rgb[(size_t(2 * i + di) * 128 + size_t(2 * j + dj)) * 3 + size_t(c)];
        avg *= 0.25f;
        sum += std::fabs(avg - a.rgb[px * 3 + size_t(c)]);
        ++count;
      }
    }
  REQUIRE(count > 1000);
  CHECK(sum / count < 0.02);
}

TEST_CASE("png round trips") {
  const auto dir = test_dir("png");
  ImageU8 rgb;
  rgb.width = 9;
  rgb.height = 7;
  rgb.channels = 3;
  rgb.px.resize(9 * 7 * 3);
  for (size_t i = 0; i < rgb.px.size(); ++i) rgb.px[i] = uint8_t((i * 37) & 0xff);
  write_png8((dir / "rgb.png").string(), rgb);
  const ImageU8 rgb2 = read_png8((dir / "rgb.png").string());
  CHECK(rgb2.width == 9);
  CHECK(rgb2.height == 7);
  CHECK(rgb2.channels == 3);
  CHECK(rgb2.px == rgb.px);

  ImageU16 dep;
  dep.width = 5;
  dep.height = 4;
  dep.px.resize(20);
  for (size_t i = 0; i < dep.px.size(); ++i) dep.px[i] = uint16_t(i * 3137);
  write_png16((dir / "dep.png").string(), dep);
  const ImageU16 dep2 = read_png16((dir / "dep.png").string());
  CHECK(dep2.px == dep.px);
}

TEST_CASE("save/load channel stacks") {
  const auto dir = test_dir("stack");
  const SceneSpec scene = realize_scene(parse_prompt("a metal orange cylinder"), 3);
  const float radius = auto_frame_radius(scene, 16, 20.0f, 40.0f, 0.7f);
  const auto pose = camgeom::pose_ring(8, 20.0f, 0.0f, radius, 40.0f, 32).poses[5];
  const ChannelImage img = render_channels(scene, pose, 32);
  const std::string stem = (dir / "view_00").string();
  save_channels(stem, img, pose);
  const ChannelImage back = load_channels(stem);
  REQUIRE(back.res == 32);
  float max_rgb = 0, max_depth = 0;
  for (size_t i = 0; i < img.rgb.size(); ++i)
    max_rgb = std::max(max_rgb, std::fabs(img.rgb[i] - back.rgb[i]));
  for (size_t i = 0; i < img.depth.size(); ++i)
    max_depth = std::max(max_depth, std::fabs(img.depth[i] - back.depth[i]));
  CHECK(max_rgb <= 0.5f / 255.0f + 1e-6f);
  CHECK(max_depth <= 0.5f / kDepthScale + 1e-6f);
  CHECK(back.mask == img.mask);
  CHECK(back.edge == img.edge);

  const auto pose2 = load_channel_pose(stem);
  for (int i = 0; i < 9; ++i)
    CHECK(pose2.rotation[size_t(i)] == doctest::Approx(pose.rotation[size_t(i)]).epsilon(1e-6));
  for (int i = 0; i < 3; ++i)
    CHECK(pose2.translation[size_t(i)] ==
          doctest::Approx(pose.translation[size_t(i)]).epsilon(1e-6));
  CHECK(pose2.image_size == 32);
}

TEST_CASE("render_dataset: counting, determinism, silhouette band") {
  using promptgen::AssetRecord;
  auto record = [](const char* text, uint64_t seed) {
    AssetRecord rec;
    rec.prompt = text;
    rec.seed = seed;
    const auto f = promptgen::quality_filter(realize_scene(parse_prompt(text), seed));
    rec.accepted = f.accepted;
    rec.reason = f.reason;
    rec.caption = promptgen::caption(parse_prompt(text));
    return rec;
  };

  SUBCASE("ten accepted assets, rings only, make 160 stacks") {
    std::vector<AssetRecord> manifest;
    const char* texts[] = {"a red sphere",
                           "a blue cube",
                           "a green cylinder",
                           "a yellow torus",
                           "a purple capsule",
                           "a small white sphere on a large gray cube",
                           "a metal red torus on a glossy blue cylinder",
                           "a green capsule beside a orange cube",
                           "a large glossy purple sphere",
                           "a small metal yellow cylinder"};
    for (int i = 0; i < 10; ++i) manifest.push_back(record(texts[i], uint64_t(i)));
    for (const auto& rec : manifest) REQUIRE(rec.accepted);

    const auto dir = test_dir("count");
    DatasetOptions opts;
    opts.resolution = 24;
    opts.seed = 5;
    const int written = render_dataset(manifest, dir.string(), opts);
    CHECK(written == 160);
    int stacks = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.path().filename().string().ends_with("_rgb.png")) ++stacks;
    CHECK(stacks == 160);
  }

  SUBCASE("same manifest and seed give bit-identical files") {
    std::vector<AssetRecord> manifest = {record("a red sphere on a blue cube", 3),
                                         record("a glossy green torus", 4)};
    const auto dir_a = test_dir("det_a");
    const auto dir_b = test_dir("det_b");
    DatasetOptions opts;
    opts.resolution = 16;
    opts.ring_views = 4;
    opts.random_views = 2;
    opts.seed = 11;
    render_dataset(manifest, dir_a.string(), opts);
    render_dataset(manifest, dir_b.string(), opts);
    int compared = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir_a)) {
      if (!e.is_regular_file()) continue;
      const auto rel = fs::relative(e.path(), dir_a);
      CHECK(slurp(e.path()) == slurp(dir_b / rel));
      ++compared;
    }
    CHECK(compared == 2 * 6 * 9 + 2);  // 6 views x (8 pngs + pose), plus asset.json
  }

  SUBCASE("silhouettes cover 55-85% of frame height over the fixed ring") {
    std::vector<AssetRecord> manifest = {
        record("a red sphere", 1),
        record("a blue cube", 2),
        record("a yellow torus", 3),
        record("a purple capsule", 4),
        record("a small white sphere on a large gray cube", 5),
        record("a green capsule beside a orange cube", 6)};
    const auto dir = test_dir("sil");
    DatasetOptions opts;
    opts.resolution = 64;
    opts.seed = 9;
    render_dataset(manifest, dir.string(), opts);
    for (const auto& asset_dir : fs::directory_iterator(dir)) {
      if (!asset_dir.is_directory()) continue;
      float best = 0;
      for (int v = 0; v < 16; ++v) {
        char stem[16];
        std::snprintf(stem, sizeof stem, "view_%02d", v);
        const ChannelImage img = load_channels((asset_dir.path() / stem).string());
        best = std::max(best, silhouette_fraction(img));
      }
      CHECK(best >= 0.55f);
      CHECK(best <= 0.85f);
    }
  }
}
