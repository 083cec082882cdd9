// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#include "forma/render/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <stdexcept>

namespace forma::render {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

[[noreturn]] void fail(const std::string& what, const std::string& path) {
  throw std::runtime_error(what + ": " + path);
}

void write_png(const std::string& path, int width, int height, int channels, int bit_depth,
               const unsigned char* const* rows) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail("cannot open for writing", path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail("png_create_write_struct failed", path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail("png_create_info_struct failed", path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("png write error", path);
  }
  png_init_io(png, fp.get());
  png_set_compression_level(png, 6);
  const int color = channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), bit_depth, color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);  // rows hold native little-endian uint16
  png_write_image(png, const_cast<png_bytepp>(rows));
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
}

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  FilePtr fp;

  explicit PngReader(const std::string& path) : fp(std::fopen(path.c_str(), "rb")) {
    if (!fp) fail("cannot open", path);
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) fail("png_create_read_struct failed", path);
    info = png_create_info_struct(png);
    if (!info) fail("png_create_info_struct failed", path);
  }
  ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }
};

}  // namespace

void write_png8(const std::string& path, const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3) fail("unsupported channel count", path);
  std::vector<const unsigned char*> rows(size_t(img.height));
  for (int i = 0; i < img.height; ++i)
    rows[size_t(i)] = img.px.data() + size_t(i) * size_t(img.width) * size_t(img.channels);
  write_png(path, img.width, img.height, img.channels, 8, rows.data());
}

void write_png16(const std::string& path, const ImageU16& img) {
  std::vector<const unsigned char*> rows(size_t(img.height));
  for (int i = 0; i < img.height; ++i)
    rows[size_t(i)] =
        reinterpret_cast<const unsigned char*>(img.px.data() + size_t(i) * size_t(img.width));
  write_png(path, img.width, img.height, 1, 16, rows.data());
}

ImageU8 read_png8(const std::string& path) {
  PngReader r(path);
  if (setjmp(png_jmpbuf(r.png))) fail("png read error", path);
  png_init_io(r.png, r.fp.get());
  png_read_info(r.png, r.info);
  const int width = int(png_get_image_width(r.png, r.info));
  const int height = int(png_get_image_height(r.png, r.info));
  const int depth = png_get_bit_depth(r.png, r.info);
  const int color = png_get_color_type(r.png, r.info);
  if (depth != 8) fail("expected 8-bit png", path);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
  if (color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_strip_alpha(r.png);
  png_read_update_info(r.png, r.info);
  const int channels = int(png_get_channels(r.png, r.info));
  if (channels != 1 && channels != 3) fail("unsupported channel count", path);
  ImageU8 img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.px.resize(size_t(width) * size_t(height) * size_t(channels));
  std::vector<png_bytep> rows(static_cast<size_t>(height));
  for (int i = 0; i < height; ++i)
    rows[size_t(i)] = img.px.data() + size_t(i) * size_t(width) * size_t(channels);
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);
  return img;
}

ImageU16 read_png16(const std::string& path) {
  PngReader r(path);
  if (setjmp(png_jmpbuf(r.png))) fail("png read error", path);
  png_init_io(r.png, r.fp.get());
  png_read_info(r.png, r.info);
  const int width = int(png_get_image_width(r.png, r.info));
  const int height = int(png_get_image_height(r.png, r.info));
  if (png_get_bit_depth(r.png, r.info) != 16) fail("expected 16-bit png", path);
  if (png_get_color_type(r.png, r.info) != PNG_COLOR_TYPE_GRAY) fail("expected gray png", path);
  png_set_swap(r.png);
  png_read_update_info(r.png, r.info);
  ImageU16 img;
  img.width = width;
  img.height = height;
  img.px.resize(size_t(width) * size_t(height));
  std::vector<png_bytep> rows(static_cast<size_t>(height));
  for (int i = 0; i < height; ++i)
    rows[size_t(i)] = reinterpret_cast<png_bytep>(img.px.data() + size_t(i) * size_t(width));
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);
  return img;
}

}  // namespace forma::render
