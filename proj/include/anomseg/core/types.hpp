#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "anomseg/core/tensor.hpp"

namespace anomseg {

/// Reserved label values.
constexpr std::int32_t kVoidClass = 255;   // semantic "belongs to no training class"
constexpr std::uint8_t kIgnoreLabel = 255; // pixels excluded from losses and metrics
constexpr std::int32_t kBackgroundInstance = 0;

/// RGB image, channel-major (3,H,W), values in [0,1].
struct RgbImage {
  Tensor<float> t; // (3,H,W)

  RgbImage() = default;
  explicit RgbImage(std::size_t h, std::size_t w) : t({3, h, w}) {}
  explicit RgbImage(Tensor<float> data) : t(std::move(data)) { validate(); }

  std::size_t height() const { return t.dim(1); }
  std::size_t width() const { return t.dim(2); }

  void validate() const {
    if (t.rank() != 3 || t.dim(0) != 3)
      throw std::invalid_argument("RgbImage must be (3,H,W), got " + shape_string(t.shape()));
    for (float v : t.raw())
      if (!(v >= 0.0f && v <= 1.0f))
        throw std::invalid_argument("RgbImage values must lie in [0,1]");
  }
};

/// Per-pixel class probabilities, (C,H,W). Every pixel column sums to 1.
struct SoftmaxMap {
  Tensor<float> t;

  SoftmaxMap() = default;
  explicit SoftmaxMap(Tensor<float> data) : t(std::move(data)) {}

  std::size_t num_classes() const { return t.dim(0); }
  std::size_t height() const { return t.dim(1); }
  std::size_t width() const { return t.dim(2); }

  void validate(float tol = 1e-5f) const {
    if (t.rank() != 3) throw std::invalid_argument("SoftmaxMap must be (C,H,W)");
    const std::size_t c = t.dim(0), hw = t.dim(1) * t.dim(2);
    for (std::size_t p = 0; p < hw; ++p) {
      float sum = 0.0f;
      for (std::size_t k = 0; k < c; ++k) {
        const float v = t[k * hw + p];
        if (!(v >= 0.0f && v <= 1.0f))
          throw std::invalid_argument("SoftmaxMap probability out of [0,1]");
        sum += v;
      }
      if (std::fabs(sum - 1.0f) > tol)
        throw std::invalid_argument("SoftmaxMap pixel does not sum to 1 (sum=" + std::to_string(sum) + ")");
    }
  }
};

/// Per-pixel class IDs (H,W); kVoidClass marks unlabeled pixels.
struct SemanticMap {
  Tensor<std::int32_t> t;
  std::int32_t num_classes = 0; // valid IDs are [0, num_classes) plus kVoidClass

  SemanticMap() = default;
  SemanticMap(Tensor<std::int32_t> data, std::int32_t classes)
      : t(std::move(data)), num_classes(classes) {
    validate();
  }

  std::size_t height() const { return t.dim(0); }
  std::size_t width() const { return t.dim(1); }

  void validate() const {
    if (t.rank() != 2) throw std::invalid_argument("SemanticMap must be (H,W)");
    for (std::int32_t v : t.raw())
      if (!((v >= 0 && v < num_classes) || v == kVoidClass))
        throw std::invalid_argument("SemanticMap contains invalid class ID " + std::to_string(v));
  }
};

/// Per-pixel instance IDs (H,W) plus the instance->class mapping.
struct InstanceMap {
  Tensor<std::int32_t> t;
  std::map<std::int32_t, std::int32_t> instance_class; // id -> class (may be kVoidClass)

  std::size_t height() const { return t.dim(0); }
  std::size_t width() const { return t.dim(1); }

  std::size_t instance_area(std::int32_t id) const {
    std::size_t n = 0;
    for (std::int32_t v : t.raw())
      if (v == id) ++n;
    return n;
  }
};

/// Training/evaluation target: 0 = inlier, 1 = anomaly, kIgnoreLabel = excluded.
struct AnomalyLabelMap {
  Tensor<std::uint8_t> t;

  AnomalyLabelMap() = default;
  explicit AnomalyLabelMap(std::size_t h, std::size_t w) : t({h, w}) {}
  explicit AnomalyLabelMap(Tensor<std::uint8_t> data) : t(std::move(data)) { validate(); }

  std::size_t height() const { return t.dim(0); }
  std::size_t width() const { return t.dim(1); }

  void validate() const {
    if (t.rank() != 2) throw std::invalid_argument("AnomalyLabelMap must be (H,W)");
    for (std::uint8_t v : t.raw())
      if (v != 0 && v != 1 && v != kIgnoreLabel)
        throw std::invalid_argument("AnomalyLabelMap value must be 0, 1 or ignore");
  }
};

/// Per-pixel anomaly score (H,W); higher means more anomalous.
struct AnomalyScoreMap {
  Tensor<float> t;

  AnomalyScoreMap() = default;
  explicit AnomalyScoreMap(Tensor<float> data) : t(std::move(data)) { validate(); }

  std::size_t height() const { return t.dim(0); }
  std::size_t width() const { return t.dim(1); }

  void validate() const {
    if (t.rank() != 2) throw std::invalid_argument("AnomalyScoreMap must be (H,W)");
    if (!t.all_finite()) throw std::invalid_argument("AnomalyScoreMap must be finite");
  }
};

/// Multi-resolution feature maps; level strides strictly increase.
template <typename T>
struct FeaturePyramidT {
  struct Level {
    std::size_t stride = 1;
    Tensor<T> features; // (C,H,W)
  };
  std::vector<Level> levels;

  void validate() const {
    if (levels.empty()) throw std::invalid_argument("FeaturePyramid must have at least one level");
    for (std::size_t i = 0; i < levels.size(); ++i) {
      if (levels[i].features.rank() != 3)
        throw std::invalid_argument("FeaturePyramid level must be (C,H,W)");
      if (i > 0 && levels[i].stride <= levels[i - 1].stride)
        throw std::invalid_argument("FeaturePyramid strides must strictly increase");
    }
  }
};
using FeaturePyramid = FeaturePyramidT<float>;

inline SemanticMap argmax_semantic(const SoftmaxMap& sm) {
  const std::size_t c = sm.num_classes(), hw = sm.height() * sm.width();
  Tensor<std::int32_t> out({sm.height(), sm.width()});
  for (std::size_t p = 0; p < hw; ++p) {
    std::size_t best = 0;
    float bv = sm.t[p];
    for (std::size_t k = 1; k < c; ++k) {
      const float v = sm.t[k * hw + p];
      if (v > bv) {
        bv = v;
        best = k;
      }
    }
    out[p] = static_cast<std::int32_t>(best);
  }
  return SemanticMap(std::move(out), static_cast<std::int32_t>(c));
}

/// One-hot encoding over the inlier classes; void pixels become the zero vector.
inline Tensor<float> one_hot(const SemanticMap& sem, std::size_t num_channels) {
  Tensor<float> out({num_channels, sem.height(), sem.width()});
  const std::size_t hw = sem.height() * sem.width();
  for (std::size_t p = 0; p < hw; ++p) {
    const std::int32_t v = sem.t[p];
    if (v >= 0 && static_cast<std::size_t>(v) < num_channels) out[static_cast<std::size_t>(v) * hw + p] = 1.0f;
  }
  return out;
}

} // namespace anomseg
