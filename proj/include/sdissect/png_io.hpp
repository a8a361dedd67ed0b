#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "sdissect/error.hpp"
#include "sdissect/types.hpp"

namespace sdissect {

namespace png_detail {

struct ImageGuard {
  png_image image;
  ImageGuard() {
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
  }
  ~ImageGuard() { png_image_free(&image); }
  ImageGuard(const ImageGuard&) = delete;
  ImageGuard& operator=(const ImageGuard&) = delete;
};

inline std::vector<std::uint8_t> read(const std::filesystem::path& path, png_uint_32 format,
                                      Size& size) {
  ImageGuard g;
  if (!png_image_begin_read_from_file(&g.image, path.c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + g.image.message);
  }
  g.image.format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(g.image));
  if (!png_image_finish_read(&g.image, nullptr, buffer.data(), 0, nullptr)) {
    throw IoError("cannot decode PNG " + path.string() + ": " + g.image.message);
  }
  size = Size{g.image.height, g.image.width};
  return buffer;
}

inline void write(const std::filesystem::path& path, png_uint_32 format, Size size,
                  const std::uint8_t* data) {
  ImageGuard g;
  g.image.width = static_cast<png_uint_32>(size.width);
  g.image.height = static_cast<png_uint_32>(size.height);
  g.image.format = format;
  if (!png_image_write_to_file(&g.image, path.c_str(), 0, data, 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + g.image.message);
  }
}

}  // namespace png_detail

// Dimensions from the PNG header without decoding pixel data.
inline Size png_size(const std::filesystem::path& path) {
  png_detail::ImageGuard g;
  if (!png_image_begin_read_from_file(&g.image, path.c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + g.image.message);
  }
  return Size{g.image.height, g.image.width};
}

inline RgbImage read_rgb_png(const std::filesystem::path& path) {
  RgbImage img;
  img.pixels = png_detail::read(path, PNG_FORMAT_RGB, img.size);
  return img;
}

inline void write_rgb_png(const RgbImage& img, const std::filesystem::path& path) {
  png_detail::write(path, PNG_FORMAT_RGB, img.size, img.pixels.data());
}

// Binary mask: a pixel is inside when any color channel is nonzero.
inline DenseMap read_mask_png(const std::filesystem::path& path) {
  Size size;
  auto rgb = png_detail::read(path, PNG_FORMAT_RGB, size);
  DenseMap mask(size);
  for (std::size_t i = 0; i < size.area(); ++i) {
    mask[i] = (rgb[3 * i] | rgb[3 * i + 1] | rgb[3 * i + 2]) != 0 ? 1.0 : 0.0;
  }
  return mask;
}

inline void write_mask_png(const DenseMap& mask, const std::filesystem::path& path) {
  std::vector<std::uint8_t> gray(mask.area());
  for (std::size_t i = 0; i < mask.area(); ++i) gray[i] = mask[i] != 0.0 ? 255 : 0;
  png_detail::write(path, PNG_FORMAT_GRAY, mask.size(), gray.data());
}

// Grayscale rendering of a map, linearly stretched from [min, max] to [0, 255].
inline void write_heatmap_png(const DenseMap& map, const std::filesystem::path& path) {
  auto [lo, hi] = std::minmax_element(map.values().begin(), map.values().end());
  const double range = *hi - *lo;
  std::vector<std::uint8_t> gray(map.area());
  for (std::size_t i = 0; i < map.area(); ++i) {
    gray[i] = range > 0 ? static_cast<std::uint8_t>(std::lround(255.0 * (map[i] - *lo) / range)) : 0;
  }
  png_detail::write(path, PNG_FORMAT_GRAY, map.size(), gray.data());
}

}  // namespace sdissect
