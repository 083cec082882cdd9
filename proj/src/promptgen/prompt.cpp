// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#include "forma/promptgen/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace forma::promptgen {

namespace {

constexpr const char* kShapeNames[kNumShapes] = {"sphere", "cube", "cylinder", "torus", "capsule"};
constexpr const char* kColorNames[kNumColors] = {"red",    "green",  "blue",  "yellow",
                                                 "orange", "purple", "white", "gray"};
constexpr const char* kSizeNames[kNumSizes] = {"small", "medium", "large"};
constexpr const char* kMaterialNames[kNumMaterials] = {"matte", "glossy", "metal"};

constexpr float kColorTable[kNumColors][3] = {
    {0.80f, 0.10f, 0.10f}, {0.10f, 0.70f, 0.20f}, {0.15f, 0.30f, 0.85f}, {0.90f, 0.85f, 0.10f},
    {0.95f, 0.55f, 0.10f}, {0.55f, 0.15f, 0.70f}, {0.95f, 0.95f, 0.95f}, {0.50f, 0.50f, 0.50f}};

constexpr float kSizeScales[kNumSizes] = {0.5f, 0.75f, 1.0f};
constexpr float kMaterialTable[kNumMaterials][2] = {{0.9f, 0.0f}, {0.3f, 0.0f}, {0.4f, 1.0f}};

template <typename T>
int find_name(const char* const* names, int n, const std::string& tok) {
  for (int i = 0; i < n; ++i)
    if (tok == names[i]) return i;
  return -1;
}

struct Token {
  std::string text;
  size_t byte = 0;
};

std::vector<Token> tokenize(const std::string& text) {
  std::vector<Token> out;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= text.size()) break;
    const size_t start = i;
    std::string tok;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) {
      tok.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[i]))));
      ++i;
    }
    out.push_back({tok, start});
  }
  return out;
}

[[noreturn]] void syntax_error(const Token& tok) {
  std::ostringstream os;
  os << "syntax error at \"" << tok.text << "\" (byte " << tok.byte << ")";
  throw std::runtime_error(os.str());
}

bool is_article(const std::string& t) { return t == "a" || t == "an" || t == "the"; }

NounPhrase parse_np(const std::vector<Token>& toks, size_t& pos) {
  NounPhrase np;
  if (pos < toks.size() && is_article(toks[pos].text)) ++pos;
  auto expect_more = [&]() {
    if (pos >= toks.size())
      throw std::runtime_error("syntax error: expected a shape before end of input");
  };
  expect_more();
  if (int i = find_name<Size>(kSizeNames, kNumSizes, toks[pos].text); i >= 0) {
    np.size = Size(i);
    ++pos;
    expect_more();
  }
  if (int i = find_name<Material>(kMaterialNames, kNumMaterials, toks[pos].text); i >= 0) {
    np.material = Material(i);
    ++pos;
    expect_more();
  }
  if (int i = find_name<Color>(kColorNames, kNumColors, toks[pos].text); i >= 0) {
    np.color = Color(i);
    ++pos;
    expect_more();
  }
  if (int i = find_name<Shape>(kShapeNames, kNumShapes, toks[pos].text); i >= 0) {
    np.shape = Shape(i);
    ++pos;
    return np;
  }
  syntax_error(toks[pos]);
}

void append_np(std::string& out, const NounPhrase& np) {
  out += kSizeNames[int(np.size)];
  out += ' ';
  out += kMaterialNames[int(np.material)];
  out += ' ';
  out += kColorNames[int(np.color)];
  out += ' ';
  out += kShapeNames[int(np.shape)];
}

// Unit-size half-extents; primitives are authored so the largest axis is 1.
std::array<float, 3> unit_extents(Shape s) {
  switch (s) {
    case Shape::kSphere:
    case Shape::kCube:
      return {1, 1, 1};
    case Shape::kCylinder:
      return {0.7f, 0.7f, 1};
    case Shape::kTorus:
      return {1, 1, 0.3f};
    case Shape::kCapsule:
      return {0.5f, 0.5f, 1};
  }
  return {1, 1, 1};
}

uint64_t pack_np(const NounPhrase& np) {
  return uint64_t(int(np.shape)) | (uint64_t(int(np.color)) << 8) |
         (uint64_t(int(np.size)) << 16) | (uint64_t(int(np.material)) << 24);
}

Primitive make_primitive(const NounPhrase& np, uint64_t seed) {
  Primitive p;
  p.shape = np.shape;
  const float jitter =
      0.95f + 0.1f * float(gradcore::hash_unit(gradcore::splitmix64(seed) ^ pack_np(np)));
  p.scale = size_scale(np.size) * jitter;
  p.albedo = color_albedo(np.color);
  const auto mat = material_params(np.material);
  p.roughness = mat[0];
  p.metallic = mat[1];
  return p;
}

}  // namespace

const char* shape_name(Shape s) { return kShapeNames[int(s)]; }
const char* color_name(Color c) { return kColorNames[int(c)]; }
const char* size_name(Size s) { return kSizeNames[int(s)]; }
const char* material_name(Material m) { return kMaterialNames[int(m)]; }

std::array<float, 3> color_albedo(Color c) {
  const float* t = kColorTable[int(c)];
  return {t[0], t[1], t[2]};
}

float size_scale(Size s) { return kSizeScales[int(s)]; }

std::array<float, 2> material_params(Material m) {
  const float* t = kMaterialTable[int(m)];
  return {t[0], t[1]};
}

PromptSpec parse_prompt(const std::string& text) {
  const auto toks = tokenize(text);
  if (toks.empty()) throw std::runtime_error("syntax error: empty prompt");
  size_t pos = 0;
  PromptSpec spec;
  spec.first = parse_np(toks, pos);
  if (pos < toks.size()) {
    if (toks[pos].text == "on")
      spec.prep = Prep::kOn;
    else if (toks[pos].text == "beside")
      spec.prep = Prep::kBeside;
    else
      syntax_error(toks[pos]);
    ++pos;
    spec.second = parse_np(toks, pos);
  }
  if (pos < toks.size()) syntax_error(toks[pos]);
  return spec;
}

std::string unparse(const PromptSpec& spec) {
  std::string out;
  append_np(out, spec.first);
  if (spec.prep != Prep::kNone) {
    out += spec.prep == Prep::kOn ? " on " : " beside ";
    append_np(out, spec.second);
  }
  return out;
}

std::string caption(const PromptSpec& spec) { return unparse(spec); }

std::vector<float> encode_prompt(const PromptSpec& spec) {
  std::vector<float> v(size_t(kPromptDim), 0.0f);
  auto put = [&](const NounPhrase& np, int base) {
    v[size_t(base + int(np.shape))] = 1;
    v[size_t(base + kNumShapes + int(np.color))] = 1;
    v[size_t(base + kNumShapes + kNumColors + int(np.size))] = 1;
    v[size_t(base + kNumShapes + kNumColors + kNumSizes + int(np.material))] = 1;
  };
  put(spec.first, 0);
  if (spec.prep != Prep::kNone) put(spec.second, kPhraseDim);
  v[size_t(2 * kPhraseDim + int(spec.prep))] = 1;
  return v;
}

PromptSpec sample_prompt(gradcore::Rng& rng) {
  auto np = [&rng]() {
    NounPhrase n;
    n.shape = Shape(rng.uniform_int(kNumShapes));
    n.color = Color(rng.uniform_int(kNumColors));
    n.size = Size(rng.uniform_int(kNumSizes));
    n.material = Material(rng.uniform_int(kNumMaterials));
    return n;
  };
  PromptSpec spec;
  spec.first = np();
  if (rng.uniform() < 0.5) {
    spec.prep = rng.uniform() < 0.5 ? Prep::kOn : Prep::kBeside;
    spec.second = np();
  }
  return spec;
}

float Primitive::sdf(float x, float y, float z) const {
  const float inv = 1.0f / scale;
  const float px = (x - center[0]) * inv;
  const float py = (y - center[1]) * inv;
  const float pz = (z - center[2]) * inv;
  float d = 0;
  switch (shape) {
    case Shape::kSphere:
      d = std::sqrt(px * px + py * py + pz * pz) - 1.0f;
      break;
    case Shape::kCube: {
      const float qx = std::fabs(px) - 1.0f, qy = std::fabs(py) - 1.0f, qz = std::fabs(pz) - 1.0f;
      const float ox = std::max(qx, 0.0f), oy = std::max(qy, 0.0f), oz = std::max(qz, 0.0f);
      d = std::sqrt(ox * ox + oy * oy + oz * oz) +
          std::min(std::max(qx, std::max(qy, qz)), 0.0f);
      break;
    }
    case Shape::kCylinder: {
      const float dr = std::sqrt(px * px + py * py) - 0.7f;
      const float dz = std::fabs(pz) - 1.0f;
      const float orr = std::max(dr, 0.0f), oz = std::max(dz, 0.0f);
      d = std::min(std::max(dr, dz), 0.0f) + std::sqrt(orr * orr + oz * oz);
      break;
    }
    case Shape::kTorus: {
      const float q = std::sqrt(px * px + py * py) - 0.7f;
      d = std::sqrt(q * q + pz * pz) - 0.3f;
      break;
    }
    case Shape::kCapsule: {
      const float t = std::clamp(pz, -0.5f, 0.5f);
      const float dz = pz - t;
      d = std::sqrt(px * px + py * py + dz * dz) - 0.5f;
      break;
    }
  }
  return d * scale;
}

std::array<float, 3> Primitive::half_extents() const {
  auto e = unit_extents(shape);
  return {e[0] * scale, e[1] * scale, e[2] * scale};
}

float SceneSpec::sdf(float x, float y, float z) const {
  float d = 1e30f;
  for (const auto& p : primitives) d = std::min(d, p.sdf(x, y, z));
  return d;
}

int SceneSpec::nearest(float x, float y, float z) const {
  int best = -1;
  float bd = 1e30f;
  for (size_t i = 0; i < primitives.size(); ++i) {
    const float d = primitives[i].sdf(x, y, z);
    if (d < bd) {
      bd = d;
      best = int(i);
    }
  }
  return best;
}

void SceneSpec::recompute_bounds() {
  for (int c = 0; c < 3; ++c) {
    bounds_min[size_t(c)] = 1e30f;
    bounds_max[size_t(c)] = -1e30f;
  }
  for (const auto& p : primitives) {
    const auto he = p.half_extents();
    for (int c = 0; c < 3; ++c) {
      bounds_min[size_t(c)] = std::min(bounds_min[size_t(c)], p.center[size_t(c)] - he[size_t(c)]);
      bounds_max[size_t(c)] = std::max(bounds_max[size_t(c)], p.center[size_t(c)] + he[size_t(c)]);
    }
  }
}

SceneSpec realize_scene(const PromptSpec& spec, uint64_t seed) {
  SceneSpec scene;
  Primitive a = make_primitive(spec.first, seed);
  if (spec.prep == Prep::kNone) {
    scene.primitives.push_back(a);
  } else {
    Primitive b = make_primitive(spec.second, seed);
    if (spec.prep == Prep::kOn) {
      // first sits on second: touching surfaces along +z
      b.center = {0, 0, 0};
      a.center = {0, 0, b.half_extents()[2] + a.half_extents()[2]};
    } else {
      // side by side along x, touching at x = 0
      a.center = {-a.half_extents()[0], 0, 0};
      b.center = {b.half_extents()[0], 0, 0};
    }
    scene.primitives.push_back(a);
    scene.primitives.push_back(b);
  }
  scene.recompute_bounds();
  // recenter and rescale to unit half-extent
  float half = 0;
  std::array<float, 3> mid;
  for (int c = 0; c < 3; ++c) {
    mid[size_t(c)] = 0.5f * (scene.bounds_min[size_t(c)] + scene.bounds_max[size_t(c)]);
    half = std::max(half, 0.5f * (scene.bounds_max[size_t(c)] - scene.bounds_min[size_t(c)]));
  }
  const float k = half > 0 ? 1.0f / half : 1.0f;
  for (auto& p : scene.primitives) {
    for (int c = 0; c < 3; ++c)
      p.center[size_t(c)] = (p.center[size_t(c)] - mid[size_t(c)]) * k;
    p.scale *= k;
  }
  scene.recompute_bounds();
  return scene;
}

FilterResult quality_filter(const SceneSpec& scene) {
  constexpr int kGrid = 64;
  float depth = 0;
  for (int i = 0; i < kGrid; ++i) {
    const float x =
        scene.bounds_min[0] + (scene.bounds_max[0] - scene.bounds_min[0]) * float(i) / (kGrid - 1);
    for (int j = 0; j < kGrid; ++j) {
      const float y = scene.bounds_min[1] +
                      (scene.bounds_max[1] - scene.bounds_min[1]) * float(j) / (kGrid - 1);
      for (int k = 0; k < kGrid; ++k) {
        const float z = scene.bounds_min[2] +
                        (scene.bounds_max[2] - scene.bounds_min[2]) * float(k) / (kGrid - 1);
        depth = std::max(depth, -scene.sdf(x, y, z));
      }
    }
  }
  if (depth < 0.02f) return {false, "thin"};
  if (scene.primitives.size() > 1) {
    bool all_equal = true;
    for (size_t i = 1; i < scene.primitives.size(); ++i)
      if (scene.primitives[i].albedo != scene.primitives[0].albedo) all_equal = false;
    if (all_equal) return {false, "textureless"};
  }
  return {true, ""};
}

std::string manifest_line(const AssetRecord& rec) {
  nlohmann::json j;
  j["prompt"] = rec.prompt;
  j["seed"] = rec.seed;
  j["accepted"] = rec.accepted;
  j["reason"] = rec.reason;
  j["caption"] = rec.caption;
  return j.dump();
}

AssetRecord parse_manifest_line(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  AssetRecord rec;
  rec.prompt = j.at("prompt").get<std::string>();
  rec.seed = j.at("seed").get<uint64_t>();
  rec.accepted = j.at("accepted").get<bool>();
  rec.reason = j.value("reason", "");
  rec.caption = j.value("caption", "");
  return rec;
}

void save_manifest(const std::string& path, const std::vector<AssetRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open manifest for writing: " + path);
  for (const auto& rec : records) out << manifest_line(rec) << '\n';
}

std::vector<AssetRecord> load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  std::vector<AssetRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(parse_manifest_line(line));
  }
  return out;
}

}  // namespace forma::promptgen
