#pragma once

// 8-bit RGB PNG read/write via libpng, plus conversions to the row-major
// (H*W) x 3 double matrices the rest of the code works with.

#include <png.h>

#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "fgrr/matrix.hpp"

namespace fgrr {

struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<unsigned char> rgb;  // 3 bytes per pixel, row-major
};

inline void write_png(const std::string& path, const ImageU8& img) {
  if (static_cast<int>(img.rgb.size()) != img.width * img.height * 3)
    throw std::invalid_argument("write_png: buffer size mismatch");
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("write_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("write_png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("write_png: libpng error for " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(img.rgb.data() + static_cast<std::size_t>(y) * img.width * 3);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline ImageU8 read_png(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw std::runtime_error("read_png: cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("read_png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("read_png: libpng error for " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  // Normalize any input to 8-bit RGB.
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  ImageU8 img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] =
        img.rgb.data() + static_cast<std::size_t>(y) * img.width * 3;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

// [0,1] doubles -> 8-bit with round-half-up.
inline ImageU8 to_u8(const Matrix& rows, int height, int width) {
  if (rows.rows() != static_cast<Eigen::Index>(height) * width || rows.cols() != 3)
    throw std::invalid_argument("to_u8: expected (H*W) x 3 matrix");
  ImageU8 img;
  img.width = width;
  img.height = height;
  img.rgb.resize(static_cast<std::size_t>(width) * height * 3);
  for (Eigen::Index r = 0; r < rows.rows(); ++r)
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(rows(r, c), 0.0, 1.0);
      img.rgb[static_cast<std::size_t>(r) * 3 + static_cast<std::size_t>(c)] =
          static_cast<unsigned char>(std::lround(v * 255.0));
    }
  return img;
}

inline Matrix to_matrix(const ImageU8& img) {
  Matrix rows(static_cast<Eigen::Index>(img.width) * img.height, 3);
  for (Eigen::Index r = 0; r < rows.rows(); ++r)
    for (int c = 0; c < 3; ++c)
      rows(r, c) =
          img.rgb[static_cast<std::size_t>(r) * 3 + static_cast<std::size_t>(c)] / 255.0;
  return rows;
}

}  // namespace fgrr
