// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "forma/meshops/bundle.hpp"
#include "forma/render/image_io.hpp"

namespace forma::meshops {

namespace {

std::string basename_of(const std::string& stem) {
  const size_t slash = stem.find_last_of("/\\");
  return slash == std::string::npos ? stem : stem.substr(slash + 1);
}

std::string fmt_float(float v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", double(v));
  return buf;
}

void write_texture_png(const Texture& tex, const std::string& path) {
  render::ImageU8 img;
  img.width = tex.w;
  img.height = tex.w;
  img.channels = 3;
  img.px.resize(size_t(tex.w) * size_t(tex.w) * 3);
  for (int i = 0; i < tex.w; ++i)
    for (int j = 0; j < tex.w; ++j)
      for (int c = 0; c < 3; ++c)
        img.px[(size_t(i) * size_t(tex.w) + size_t(j)) * 3 + size_t(c)] =
            render::to_u8(tex.at(i, j, c));
  render::write_png8(path, img);
}

}  // namespace

void export_obj(const AssetBundle& bundle, const std::string& stem) {
  const std::string base = basename_of(stem);
  const QuadMesh& mesh = bundle.mesh;
  if (mesh.uv.size() != mesh.faces.size())
    throw std::invalid_argument("export_obj: mesh has no uv atlas");

  // deduplicate vt rows by exact bits, first-use order
  std::unordered_map<uint64_t, int> vt_index;
  std::vector<std::array<float, 2>> vts;
  std::vector<std::array<int, 4>> face_vt(mesh.faces.size());
  for (size_t f = 0; f < mesh.faces.size(); ++f) {
    for (int e = 0; e < mesh.faces[f].corners; ++e) {
      const auto& uv = mesh.uv[f][size_t(e)];
      uint32_t bits[2];
      std::memcpy(bits, uv.data(), sizeof(bits));
      const uint64_t key = (uint64_t(bits[0]) << 32) | bits[1];
      auto [it, fresh] = vt_index.emplace(key, int(vts.size()));
      if (fresh) vts.push_back(uv);
      face_vt[f][size_t(e)] = it->second;
    }
  }

  std::ofstream obj(stem + ".obj", std::ios::binary);
  if (!obj) throw std::runtime_error("export_obj: cannot write " + stem + ".obj");
  obj << "mtllib " << base << ".mtl\n";
  obj << "o " << base << "\n";
  for (const auto& v : mesh.vertices)
    obj << "v " << fmt_float(v[0]) << " " << fmt_float(v[1]) << " " << fmt_float(v[2]) << "\n";
  for (const auto& uv : vts) obj << "vt " << fmt_float(uv[0]) << " " << fmt_float(uv[1]) << "\n";
  obj << "usemtl " << base << "\n";
  for (size_t f = 0; f < mesh.faces.size(); ++f) {
    obj << "f";
    for (int e = 0; e < mesh.faces[f].corners; ++e)
      obj << " " << mesh.faces[f].v[size_t(e)] + 1 << "/" << face_vt[f][size_t(e)] + 1;
    obj << "\n";
  }
  obj.close();

  std::ofstream mtl(stem + ".mtl", std::ios::binary);
  if (!mtl) throw std::runtime_error("export_obj: cannot write " + stem + ".mtl");
  mtl << "newmtl " << base << "\n";
  mtl << "Kd 1 1 1\n";
  mtl << "map_Kd " << base << "_albedo.png\n";
  mtl << "map_Pr " << base << "_material.png\n";
  mtl << "map_Pm " << base << "_material.png\n";
  mtl.close();

  write_texture_png(bundle.albedo, stem + "_albedo.png");
  write_texture_png(bundle.material, stem + "_material.png");

  nlohmann::json meta;
  meta["prompt"] = bundle.prompt;
  meta["seed"] = bundle.seed;
  meta["texture_w"] = bundle.albedo.w;
  meta["vertices"] = mesh.vertices.size();
  meta["faces"] = mesh.faces.size();
  nlohmann::json sums = nlohmann::json::object();
  for (const auto& [name, sum] : bundle.checksums) sums[name] = sum;
  meta["checksums"] = sums;
  std::ofstream js(stem + ".json", std::ios::binary);
  if (!js) throw std::runtime_error("export_obj: cannot write " + stem + ".json");
  js << meta.dump(2) << "\n";
}

ObjData import_obj(const std::string& obj_path) {
  std::ifstream in(obj_path);
  if (!in) throw std::runtime_error("import_obj: cannot read " + obj_path);
  ObjData data;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    if (tag == "v") {
      std::array<float, 3> v{};
      ss >> v[0] >> v[1] >> v[2];
      data.vertices.push_back(v);
    } else if (tag == "vt") {
      std::array<float, 2> uv{};
      ss >> uv[0] >> uv[1];
      data.uvs.push_back(uv);
    } else if (tag == "f") {
      std::vector<int> fv, ft;
      std::string tok;
      while (ss >> tok) {
        const size_t slash = tok.find('/');
        fv.push_back(std::stoi(tok.substr(0, slash)) - 1);
        if (slash != std::string::npos) {
          const std::string rest = tok.substr(slash + 1);
          const size_t slash2 = rest.find('/');
          const std::string vt = rest.substr(0, slash2);
          if (!vt.empty()) ft.push_back(std::stoi(vt) - 1);
        }
      }
      data.face_vertices.push_back(fv);
      data.face_uvs.push_back(ft);
    }
  }
  return data;
}

}  // namespace forma::meshops
