#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "anomseg/core/tensor.hpp"
#include "anomseg/core/types.hpp"

namespace anomseg {

namespace detail {

inline png_image begin_read(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw std::runtime_error("image file not found: " + path.string());
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + image.message);
  return image;
}

} // namespace detail

/// Loads an 8-bit RGB PNG and scales to [0,1]. Grayscale or alpha inputs are
/// rejected: the pipeline contract is 3 channels.
inline RgbImage load_image(const std::filesystem::path& path) {
  png_image image = detail::begin_read(path);
  const bool has_color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  const bool has_alpha = (image.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  if (!has_color || has_alpha) {
    png_image_free(&image);
    throw std::runtime_error("expected 3 channels in " + path.string());
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + msg);
  }
  const std::size_t h = image.height, w = image.width;
  RgbImage out(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        out.t.at3(c, y, x) = static_cast<float>(buffer[(y * w + x) * 3 + c]) / 255.0f;
  return out;
}

inline void save_image(const std::filesystem::path& path, const RgbImage& img) {
  const std::size_t h = img.height(), w = img.width();
  std::vector<std::uint8_t> buffer(h * w * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(img.t.at3(c, y, x), 0.0f, 1.0f);
        buffer[(y * w + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buffer.data(), 0, nullptr))
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + image.message);
}

/// Single-channel 8-bit PNG, used for semantic / instance / label maps.
inline Tensor<std::uint8_t> load_gray_png(const std::filesystem::path& path) {
  png_image image = detail::begin_read(path);
  if ((image.format & PNG_FORMAT_FLAG_COLOR) != 0) {
    png_image_free(&image);
    throw std::runtime_error("expected single-channel PNG: " + path.string());
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + msg);
  }
  Tensor<std::uint8_t> out({image.height, image.width});
  std::copy(buffer.begin(), buffer.end(), out.data());
  return out;
}

inline void save_gray_png(const std::filesystem::path& path, const Tensor<std::uint8_t>& map) {
  if (map.rank() != 2) throw std::invalid_argument("grayscale PNG payload must be (H,W)");
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(map.dim(1));
  image.height = static_cast<png_uint_32>(map.dim(0));
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, map.data(), 0, nullptr))
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + image.message);
}

inline SemanticMap load_semantic_png(const std::filesystem::path& path, std::int32_t num_classes) {
  return SemanticMap(load_gray_png(path).cast<std::int32_t>(), num_classes);
}

} // namespace anomseg
