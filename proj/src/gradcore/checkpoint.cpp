// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#include "forma/gradcore/checkpoint.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace forma::gradcore {

namespace {

constexpr const char* kMagic = "FORMA1";
constexpr const char* kEmaPrefix = "__ema__.";
constexpr const char* kStepKey = "__step_count__";

struct Entry {
  std::string name;
  Shape shape;
  uint64_t offset;
};

std::string shape_str(const Shape& s) {
  std::string out;
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(s[i]);
  }
  return out;
}

Shape parse_shape(const std::string& s) {
  Shape shape;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) shape.push_back(std::stoi(tok));
  return shape;
}

int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store) {
  std::vector<Entry> entries;
  std::vector<const std::vector<float>*> blobs;
  std::vector<float> step_blob = {float(store.step_count)};
  uint64_t offset = 0;
  auto push = [&](const std::string& name, const Shape& shape, const std::vector<float>* data) {
    entries.push_back({name, shape, offset});
    blobs.push_back(data);
    offset += data->size() * sizeof(float);
  };
  for (const auto& [name, t] : store.items()) push(name, t.shape(), &t.values());
  for (const auto& [name, t] : store.items()) {
    auto it = store.ema_.find(name);
    if (it != store.ema_.end()) push(kEmaPrefix + name, t.shape(), &it->second);
  }
  push(kStepKey, {1}, &step_blob);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f << kMagic << "\n" << entries.size() << "\n";
  for (const auto& e : entries) f << e.name << " " << shape_str(e.shape) << " " << e.offset << "\n";
  f << "BINARY\n";
  for (const auto* b : blobs)
    f.write(reinterpret_cast<const char*>(b->data()), std::streamsize(b->size() * sizeof(float)));
  if (!f) throw std::runtime_error("save_checkpoint: write failed " + path);
}

void load_checkpoint(const std::string& path, ParamStore& store) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string line;
  std::getline(f, line);
  if (line != kMagic) throw std::runtime_error("load_checkpoint: bad magic in " + path);
  std::getline(f, line);
  const size_t count = std::stoul(line);
  std::vector<Entry> entries(count);
  for (auto& e : entries) {
    std::getline(f, line);
    std::stringstream ss(line);
    std::string shape;
    ss >> e.name >> shape >> e.offset;
    e.shape = parse_shape(shape);
  }
  std::getline(f, line);
  if (line != "BINARY") throw std::runtime_error("load_checkpoint: missing BINARY marker");
  const std::streampos base = f.tellg();

  for (const auto& e : entries) {
    const int64_t n = numel_of(e.shape);
    std::vector<float> buf(static_cast<size_t>(n));
    f.seekg(base + std::streampos(e.offset));
    f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(size_t(n) * sizeof(float)));
    if (!f) throw std::runtime_error("load_checkpoint: truncated blob for " + e.name);
    if (e.name == kStepKey) {
      store.step_count = int64_t(std::llround(buf[0]));
    } else if (e.name.rfind(kEmaPrefix, 0) == 0) {
      const std::string pname = e.name.substr(std::string(kEmaPrefix).size());
      if (!store.has(pname)) throw std::runtime_error("load_checkpoint: ema for unknown " + pname);
      store.ema_[pname] = std::move(buf);
    } else {
      if (!store.has(e.name)) throw std::runtime_error("load_checkpoint: unknown param " + e.name);
      Tensor t = store.get(e.name);
      if (t.shape() != e.shape) throw std::runtime_error("load_checkpoint: shape mismatch " + e.name);
      t.node()->data = std::move(buf);
    }
  }
}

}  // namespace forma::gradcore
