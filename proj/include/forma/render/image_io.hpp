// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace forma::render {

// Row-major interleaved pixels, c in {1, 3}.
struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<uint8_t> px;

  uint8_t& at(int i, int j, int c = 0) {
    return px[size_t(i * width + j) * size_t(channels) + size_t(c)];
  }
  uint8_t at(int i, int j, int c = 0) const {
    return px[size_t(i * width + j) * size_t(channels) + size_t(c)];
  }
};

struct ImageU16 {
  int width = 0;
  int height = 0;
  std::vector<uint16_t> px;

  uint16_t& at(int i, int j) { return px[size_t(i * width + j)]; }
  uint16_t at(int i, int j) const { return px[size_t(i * width + j)]; }
};

void write_png8(const std::string& path, const ImageU8& img);
ImageU8 read_png8(const std::string& path);
void write_png16(const std::string& path, const ImageU16& img);
ImageU16 read_png16(const std::string& path);

inline uint8_t to_u8(float v) {
  const float c = v < 0 ? 0 : (v > 1 ? 1 : v);
  return uint8_t(c * 255.0f + 0.5f);
}

}  // namespace forma::render
