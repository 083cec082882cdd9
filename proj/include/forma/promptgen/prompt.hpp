// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string>
#include <vector>

#include "forma/gradcore/rng.hpp"

namespace forma::promptgen {

// Closed vocabulary. Conditioning vectors are one-hot concatenations over
// these enums, so order is part of the file format.
enum class Shape { kSphere, kCube, kCylinder, kTorus, kCapsule };
enum class Color { kRed, kGreen, kBlue, kYellow, kOrange, kPurple, kWhite, kGray };
enum class Size { kSmall, kMedium, kLarge };
enum class Material { kMatte, kGlossy, kMetal };
enum class Prep { kNone, kOn, kBeside };

inline constexpr int kNumShapes = 5;
inline constexpr int kNumColors = 8;
inline constexpr int kNumSizes = 3;
inline constexpr int kNumMaterials = 3;
// per-phrase one-hots, two phrases, plus the relation
inline constexpr int kPhraseDim = kNumShapes + kNumColors + kNumSizes + kNumMaterials;
inline constexpr int kPromptDim = 2 * kPhraseDim + 3;

const char* shape_name(Shape s);
const char* color_name(Color c);
const char* size_name(Size s);
const char* material_name(Material m);

std::array<float, 3> color_albedo(Color c);
float size_scale(Size s);                       // {0.5, 0.75, 1.0}
std::array<float, 2> material_params(Material m);  // (roughness, metallic)

struct NounPhrase {
  Shape shape = Shape::kSphere;
  Color color = Color::kGray;
  Size size = Size::kMedium;
  Material material = Material::kMatte;
  bool operator==(const NounPhrase&) const = default;
};

struct PromptSpec {
  NounPhrase first;
  Prep prep = Prep::kNone;
  NounPhrase second;  // meaningful only when prep != kNone
  bool operator==(const PromptSpec&) const = default;
};

// Grammar: prompt := NP (PREP NP)? ; NP := ARTICLE? SIZE? MATERIAL? COLOR? SHAPE
// Case-insensitive; throws std::runtime_error naming the offending token and
// its byte offset.
PromptSpec parse_prompt(const std::string& text);

// Canonical rendering: "<size> <material> <color> <shape> [<prep> ...]".
// parse_prompt(unparse(spec)) == spec.
std::string unparse(const PromptSpec& spec);
std::string caption(const PromptSpec& spec);

std::vector<float> encode_prompt(const PromptSpec& spec);

PromptSpec sample_prompt(gradcore::Rng& rng);

struct Primitive {
  Shape shape = Shape::kSphere;
  float scale = 1.0f;  // uniform scale applied to the unit-size primitive
  std::array<float, 3> center = {0, 0, 0};
  std::array<float, 3> albedo = {0.5f, 0.5f, 0.5f};
  float roughness = 0.9f;
  float metallic = 0.0f;

  float sdf(float x, float y, float z) const;
  // tight half-extents of the scaled primitive along x/y/z
  std::array<float, 3> half_extents() const;
};

struct SceneSpec {
  std::vector<Primitive> primitives;
  std::array<float, 3> bounds_min = {-1, -1, -1};
  std::array<float, 3> bounds_max = {1, 1, 1};

  float sdf(float x, float y, float z) const;  // exact min-union
  int nearest(float x, float y, float z) const;
  void recompute_bounds();
};

// Deterministic in (spec, seed). "on" stacks along +z with touching surfaces,
// "beside" abuts along x; the composite is recentered and rescaled to unit
// half-extent. Canonical pose: front = -y, up = +z (constructive, no
// rotations are ever applied).
SceneSpec realize_scene(const PromptSpec& spec, uint64_t seed);

struct FilterResult {
  bool accepted = true;
  std::string reason;  // "thin" or "textureless" when rejected
};

// Rejects scenes whose deepest interior point over a 64^3 grid is shallower
// than 0.02, or multi-primitive scenes with zero albedo variance.
FilterResult quality_filter(const SceneSpec& scene);

struct AssetRecord {
  std::string prompt;
  uint64_t seed = 0;
  bool accepted = true;
  std::string reason;
  std::string caption;
};

std::string manifest_line(const AssetRecord& rec);
AssetRecord parse_manifest_line(const std::string& line);
void save_manifest(const std::string& path, const std::vector<AssetRecord>& records);
std::vector<AssetRecord> load_manifest(const std::string& path);

}  // namespace forma::promptgen
