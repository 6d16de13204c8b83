#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>

#include "anomseg/core/tensor.hpp"

namespace anomseg {

enum class ResizeMode { kBilinear, kNearest };

namespace detail {

// Half-pixel-center source coordinate for output index i, clamped to the
// valid range so border samples do not read outside the image.
inline double src_coord(std::size_t i, std::size_t out_n, std::size_t in_n) {
  const double s = (static_cast<double>(i) + 0.5) * static_cast<double>(in_n) /
                       static_cast<double>(out_n) -
                   0.5;
  return s;
}

} // namespace detail

/// Resizes a (C,H,W) or (H,W) tensor. Bilinear for continuous maps; nearest
/// for label-like data that must not be interpolated.
template <typename T>
Tensor<T> resize(const Tensor<T>& in, std::size_t out_h, std::size_t out_w, ResizeMode mode) {
  if (in.rank() != 2 && in.rank() != 3) throw std::invalid_argument("resize expects (H,W) or (C,H,W)");
  const std::size_t channels = in.rank() == 3 ? in.dim(0) : 1;
  const std::size_t in_h = in.rank() == 3 ? in.dim(1) : in.dim(0);
  const std::size_t in_w = in.rank() == 3 ? in.dim(2) : in.dim(1);
  Tensor<T> out(in.rank() == 3 ? std::vector<std::size_t>{channels, out_h, out_w}
                               : std::vector<std::size_t>{out_h, out_w});
  const T* src = in.data();
  T* dst = out.data();
  for (std::size_t y = 0; y < out_h; ++y) {
    const double sy = detail::src_coord(y, out_h, in_h);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double sx = detail::src_coord(x, out_w, in_w);
      if (mode == ResizeMode::kNearest) {
        const std::size_t iy = static_cast<std::size_t>(
            std::clamp<long>(std::lround(sy), 0, static_cast<long>(in_h) - 1));
        const std::size_t ix = static_cast<std::size_t>(
            std::clamp<long>(std::lround(sx), 0, static_cast<long>(in_w) - 1));
        for (std::size_t c = 0; c < channels; ++c)
          dst[(c * out_h + y) * out_w + x] = src[(c * in_h + iy) * in_w + ix];
      } else {
        const double cy = std::clamp(sy, 0.0, static_cast<double>(in_h - 1));
        const double cx = std::clamp(sx, 0.0, static_cast<double>(in_w - 1));
        const std::size_t y0 = static_cast<std::size_t>(cy);
        const std::size_t x0 = static_cast<std::size_t>(cx);
        const std::size_t y1 = std::min(y0 + 1, in_h - 1);
        const std::size_t x1 = std::min(x0 + 1, in_w - 1);
        const double fy = cy - static_cast<double>(y0);
        const double fx = cx - static_cast<double>(x0);
        for (std::size_t c = 0; c < channels; ++c) {
          const double v00 = static_cast<double>(src[(c * in_h + y0) * in_w + x0]);
          const double v01 = static_cast<double>(src[(c * in_h + y0) * in_w + x1]);
          const double v10 = static_cast<double>(src[(c * in_h + y1) * in_w + x0]);
          const double v11 = static_cast<double>(src[(c * in_h + y1) * in_w + x1]);
          const double v = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) +
                           fy * ((1.0 - fx) * v10 + fx * v11);
          dst[(c * out_h + y) * out_w + x] = static_cast<T>(v);
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& in) {
  if (in.rank() != 2 && in.rank() != 3) throw std::invalid_argument("flip expects (H,W) or (C,H,W)");
  const std::size_t channels = in.rank() == 3 ? in.dim(0) : 1;
  const std::size_t h = in.rank() == 3 ? in.dim(1) : in.dim(0);
  const std::size_t w = in.rank() == 3 ? in.dim(2) : in.dim(1);
  Tensor<T> out(in.shape());
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out[(c * h + y) * w + x] = in[(c * h + y) * w + (w - 1 - x)];
  return out;
}

} // namespace anomseg
