// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#include "forma/promptgen/prompt.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

using namespace forma::promptgen;
using forma::gradcore::Rng;

TEST_CASE("parse_prompt: defaults and full phrases") {
  PromptSpec s = parse_prompt("a red sphere");
  CHECK(s.first.shape == Shape::kSphere);
  CHECK(s.first.color == Color::kRed);
  CHECK(s.first.size == Size::kMedium);
  CHECK(s.first.material == Material::kMatte);
  CHECK(s.prep == Prep::kNone);

  PromptSpec t = parse_prompt("A Small METAL Torus on a large blue cube");
  CHECK(t.first.shape == Shape::kTorus);
  CHECK(t.first.size == Size::kSmall);
  CHECK(t.first.material == Material::kMetal);
  CHECK(t.prep == Prep::kOn);
  CHECK(t.second.shape == Shape::kCube);
  CHECK(t.second.size == Size::kLarge);
  CHECK(t.second.color == Color::kBlue);
  CHECK(t.second.material == Material::kMatte);

  PromptSpec b = parse_prompt("sphere beside the cylinder");
  CHECK(b.prep == Prep::kBeside);
  CHECK(b.second.shape == Shape::kCylinder);
}

TEST_CASE("parse_prompt: rejects tokens outside the vocabulary") {
  try {
    parse_prompt("a crimson blob");
    FAIL("expected a syntax error");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("crimson") != std::string::npos);
    CHECK(msg.find("byte 2") != std::string::npos);
  }
  CHECK_THROWS(parse_prompt(""));
  CHECK_THROWS(parse_prompt("a red"));
  CHECK_THROWS(parse_prompt("a red sphere under a cube"));
  CHECK_THROWS(parse_prompt("a red sphere on a cube extra"));
  CHECK_THROWS(parse_prompt("a matte small sphere"));  // order is fixed
}

TEST_CASE("unparse is a fixed point of parse and follows the caption template") {
  CHECK(caption(parse_prompt("a small metal torus on a large blue cube")) ==
        "small metal gray torus on large matte blue cube");
  Rng rng(99);
  for (int i = 0; i < 200; ++i) {
    PromptSpec s = sample_prompt(rng);
    const std::string text = unparse(s);
    PromptSpec back = parse_prompt(text);
    CHECK(back == s);
    CHECK(unparse(back) == text);
  }
}

TEST_CASE("encode_prompt: one-hot layout") {
  const auto v = encode_prompt(parse_prompt("a red sphere"));
  REQUIRE(int(v.size()) == kPromptDim);
  float ones = 0;
  for (float x : v) ones += x;
  CHECK(ones == 5);  // shape+color+size+material of NP1, plus the relation slot
  CHECK(v[size_t(2 * kPhraseDim + int(Prep::kNone))] == 1);

  const auto w = encode_prompt(parse_prompt("a red sphere on a blue cube"));
  ones = 0;
  for (float x : w) ones += x;
  CHECK(ones == 9);
  CHECK(w[size_t(2 * kPhraseDim + int(Prep::kOn))] == 1);
  CHECK(encode_prompt(parse_prompt("a red sphere")) !=
        encode_prompt(parse_prompt("a green sphere")));
}

TEST_CASE("realize_scene: single primitive is normalized to the unit ball") {
  SceneSpec scene = realize_scene(parse_prompt("a red sphere"), 7);
  REQUIRE(scene.primitives.size() == 1);
  const auto& p = scene.primitives[0];
  CHECK(std::fabs(p.center[0]) < 1e-6f);
  CHECK(std::fabs(p.center[1]) < 1e-6f);
  CHECK(std::fabs(p.center[2]) < 1e-6f);
  CHECK(p.scale == doctest::Approx(1.0f).epsilon(1e-6));
  CHECK(scene.sdf(0, 0, 0) == doctest::Approx(-1.0f).epsilon(1e-6));
  CHECK(scene.sdf(0, 0, 1) == doctest::Approx(0.0f).epsilon(1e-6));
}

TEST_CASE("realize_scene: stacking solves the contact equation") {
  SceneSpec scene = realize_scene(parse_prompt("a sphere on a cube"), 11);
  REQUIRE(scene.primitives.size() == 2);
  const auto& sph = scene.primitives[0];
  const auto& cube = scene.primitives[1];
  REQUIRE(sph.shape == Shape::kSphere);
  REQUIRE(cube.shape == Shape::kCube);
  // sphere center z = cube top z + sphere radius
  const float cube_top = cube.center[2] + cube.half_extents()[2];
  CHECK(std::fabs(sph.center[2] - (cube_top + sph.scale)) < 1e-6f);
  // both surfaces pass through the contact point
  CHECK(std::fabs(sph.sdf(0, 0, cube_top)) < 1e-5f);
  CHECK(std::fabs(cube.sdf(0, 0, cube_top)) < 1e-5f);
  CHECK(std::fabs(sph.center[0]) < 1e-6f);
  CHECK(std::fabs(sph.center[1]) < 1e-6f);
}

TEST_CASE("realize_scene: beside places along x with touching extents") {
  SceneSpec scene = realize_scene(parse_prompt("a red cylinder beside a blue cube"), 3);
  REQUIRE(scene.primitives.size() == 2);
  const auto& a = scene.primitives[0];
  const auto& b = scene.primitives[1];
  CHECK(a.center[0] < b.center[0]);
  const float gap = (b.center[0] - b.half_extents()[0]) - (a.center[0] + a.half_extents()[0]);
  CHECK(std::fabs(gap) < 1e-6f);
}

TEST_CASE("realize_scene: deterministic and idempotent under renormalization") {
  const PromptSpec spec = parse_prompt("a small metal torus on a large blue cube");
  SceneSpec x = realize_scene(spec, 42);
  SceneSpec y = realize_scene(spec, 42);
  REQUIRE(x.primitives.size() == y.primitives.size());
  for (size_t i = 0; i < x.primitives.size(); ++i)
    CHECK(std::memcmp(&x.primitives[i], &y.primitives[i], sizeof(Primitive)) == 0);

  // already unit half-extent and centered: renormalizing changes nothing
  float half = 0;
  for (int c = 0; c < 3; ++c) {
    CHECK(std::fabs(x.bounds_min[size_t(c)] + x.bounds_max[size_t(c)]) < 1e-5f);
    half = std::max(half, 0.5f * (x.bounds_max[size_t(c)] - x.bounds_min[size_t(c)]));
  }
  CHECK(half == doctest::Approx(1.0f).epsilon(1e-5));

  SceneSpec z = realize_scene(spec, 43);  // different seed jitters sizes
  CHECK(std::memcmp(&x.primitives[0], &z.primitives[0], sizeof(Primitive)) != 0);
}

TEST_CASE("realize_scene: SDF is 1-Lipschitz on random pairs") {
  Rng rng(5);
  const PromptSpec specs[] = {parse_prompt("a large glossy green torus on a small white capsule"),
                              parse_prompt("a metal cylinder beside a large yellow cube"),
                              parse_prompt("a purple capsule")};
  for (const auto& spec : specs) {
    SceneSpec scene = realize_scene(spec, 1);
    for (int i = 0; i < 1000; ++i) {
      float p[3], q[3];
      for (int c = 0; c < 3; ++c) {
        p[c] = rng.uniform(-1.5f, 1.5f);
        q[c] = rng.uniform(-1.5f, 1.5f);
      }
      const float dp = scene.sdf(p[0], p[1], p[2]);
      const float dq = scene.sdf(q[0], q[1], q[2]);
      const float dist = std::sqrt((p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                                   (p[2] - q[2]) * (p[2] - q[2]));
      CHECK(std::fabs(dp - dq) <= dist + 1e-5f);
    }
  }
}

TEST_CASE("realize_scene: mirror symmetry about x = 0") {
  Rng rng(17);
  for (const char* text : {"a red sphere on a blue cube", "a torus on a cylinder",
                           "a green sphere beside a green sphere"}) {
    SceneSpec scene = realize_scene(parse_prompt(text), 9);
    for (int i = 0; i < 200; ++i) {
      const float x = rng.uniform(-1.2f, 1.2f);
      const float y = rng.uniform(-1.2f, 1.2f);
      const float z = rng.uniform(-1.2f, 1.2f);
      CHECK(std::fabs(scene.sdf(x, y, z) - scene.sdf(-x, y, z)) < 1e-5f);
    }
  }
}

TEST_CASE("quality_filter: accepts thick scenes, rejects thin and textureless ones") {
  SceneSpec sphere = realize_scene(parse_prompt("a red sphere"), 1);
  auto r = quality_filter(sphere);
  CHECK(r.accepted);

  SceneSpec plate;  // squashed torus: interior depth = 0.3 * scale = 0.01
  Primitive thin;
  thin.shape = Shape::kTorus;
  thin.scale = 1.0f / 30.0f;
  plate.primitives.push_back(thin);
  plate.recompute_bounds();
  r = quality_filter(plate);
  CHECK_FALSE(r.accepted);
  CHECK(r.reason == "thin");

  SceneSpec stacked = realize_scene(parse_prompt("a red cube on a red cube"), 2);
  r = quality_filter(stacked);
  CHECK_FALSE(r.accepted);
  CHECK(r.reason == "textureless");

  SceneSpec mixed = realize_scene(parse_prompt("a red cube on a blue cube"), 2);
  CHECK(quality_filter(mixed).accepted);
}

TEST_CASE("quality_filter: interior depth of the unit sphere is near 1") {
  SceneSpec sphere = realize_scene(parse_prompt("a sphere"), 1);
  float depth = 0;
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j)
      for (int k = 0; k < 64; ++k) {
        const float x = -1.0f + 2.0f * float(i) / 63.0f;
        const float y = -1.0f + 2.0f * float(j) / 63.0f;
        const float z = -1.0f + 2.0f * float(k) / 63.0f;
        depth = std::max(depth, -sphere.sdf(x, y, z));
      }
  CHECK(depth > 0.95f);
}

TEST_CASE("manifest round trip") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "forma_manifest_test";
  fs::create_directories(dir);
  const std::string path = (dir / "manifest.jsonl").string();

  std::vector<AssetRecord> recs;
  Rng rng(2);
  for (int i = 0; i < 8; ++i) {
    PromptSpec spec = sample_prompt(rng);
    AssetRecord rec;
    rec.prompt = unparse(spec);
    rec.seed = uint64_t(i);
    const auto f = quality_filter(realize_scene(spec, rec.seed));
    rec.accepted = f.accepted;
    rec.reason = f.reason;
    rec.caption = caption(spec);
    recs.push_back(rec);
  }
  save_manifest(path, recs);
  const auto back = load_manifest(path);
  REQUIRE(back.size() == recs.size());
  for (size_t i = 0; i < recs.size(); ++i) {
    CHECK(back[i].prompt == recs[i].prompt);
    CHECK(back[i].seed == recs[i].seed);
    CHECK(back[i].accepted == recs[i].accepted);
    CHECK(back[i].reason == recs[i].reason);
    CHECK(back[i].caption == recs[i].caption);
  }
}
