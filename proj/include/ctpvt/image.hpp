#pragma once

// Grayscale PNG reading and writing (8- and 16-bit) on top of libpng.

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "ctpvt/error.hpp"

namespace ctpvt {

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  int bit_depth = 8;                  // 8 or 16
  std::vector<std::uint16_t> pixels;  // row-major, width·height values

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, int depth = 8)
      : width(w), height(h), bit_depth(depth), pixels(w * h, 0) {}

  std::uint16_t max_value() const { return bit_depth == 16 ? 65535 : 255; }
  std::uint16_t& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  std::uint16_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// libpng reports errors via longjmp; messages are captured here.
inline void png_error_handler(png_structp png, png_const_charp msg) {
  auto* buffer = static_cast<std::string*>(png_get_error_ptr(png));
  if (buffer) *buffer = msg;
  longjmp(png_jmpbuf(png), 1);
}
inline void png_warning_handler(png_structp, png_const_charp) {}

}  // namespace detail

/// True when the file starts with the PNG signature.
inline bool looks_like_png(const std::filesystem::path& path) {
  detail::FilePtr f(std::fopen(path.string().c_str(), "rb"));
  if (!f) return false;
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8) return false;
  return png_sig_cmp(sig, 0, 8) == 0;
}

/// Reads a PNG as grayscale. Palette and low-bit images are expanded to 8 bit,
/// colour images are converted to luminance, alpha is dropped.
inline GrayImage read_png(const std::filesystem::path& path) {
  detail::FilePtr f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw io_error("cannot open image: " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw format_error("not a PNG file: " + path.string());
  }
  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message,
                                           detail::png_error_handler, detail::png_warning_handler);
  if (!png) throw io_error("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  GrayImage img;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> raw;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw format_error("corrupt PNG " + path.string() + ": " + message);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  if (depth == 16) png_set_swap(png);
  png_read_update_info(png, info);
  depth = png_get_bit_depth(png, info);
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.bit_depth = depth == 16 ? 16 : 8;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  raw.resize(rowbytes * img.height);
  rows.resize(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = raw.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (img.width == 0 || img.height == 0) throw format_error("empty PNG: " + path.string());
  img.pixels.resize(img.width * img.height);
  for (std::size_t y = 0; y < img.height; ++y) {
    const unsigned char* row = raw.data() + y * rowbytes;
    for (std::size_t x = 0; x < img.width; ++x) {
      if (img.bit_depth == 16) {
        std::uint16_t v;
        std::memcpy(&v, row + 2 * x, 2);
        img.pixels[y * img.width + x] = v;
      } else {
        img.pixels[y * img.width + x] = row[x];
      }
    }
  }
  return img;
}

/// Writes a grayscale PNG at the image's bit depth. Output is a pure function
/// of the pixels (no timestamps or text chunks).
inline void write_png(const std::filesystem::path& path, const GrayImage& img) {
  if (img.width == 0 || img.height == 0 || img.pixels.size() != img.width * img.height) {
    throw std::invalid_argument("write_png: image has no pixels");
  }
  detail::FilePtr f(std::fopen(path.string().c_str(), "wb"));
  if (!f) throw io_error("cannot write image: " + path.string());
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message,
                                            detail::png_error_handler, detail::png_warning_handler);
  if (!png) throw io_error("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  const bool wide = img.bit_depth == 16;
  std::vector<unsigned char> raw(img.width * img.height * (wide ? 2 : 1));
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    if (wide) {
      raw[2 * i] = static_cast<unsigned char>(img.pixels[i] >> 8);  // PNG is big-endian
      raw[2 * i + 1] = static_cast<unsigned char>(img.pixels[i] & 0xff);
    } else {
      raw[i] = static_cast<unsigned char>(img.pixels[i]);
    }
  }
  std::vector<png_bytep> rows(img.height);
  const std::size_t stride = img.width * (wide ? 2 : 1);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = raw.data() + y * stride;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw io_error("failed writing PNG " + path.string() + ": " + message);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
               wide ? 16 : 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(f.get()) != 0) throw io_error("failed flushing " + path.string());
}

}  // namespace ctpvt
