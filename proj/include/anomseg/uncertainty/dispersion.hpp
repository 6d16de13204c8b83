#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "anomseg/core/resize.hpp"
#include "anomseg/core/tensor.hpp"
#include "anomseg/core/types.hpp"

namespace anomseg {

enum class DispersionKind { kEntropy, kDistance, kPerceptual };

/// Per-pixel scalar map in [0,1]; higher means more dispersed / uncertain.
template <typename T>
struct BasicDispersionMap {
  Tensor<T> t; // (H,W)
  DispersionKind kind = DispersionKind::kEntropy;
};
using DispersionMap = BasicDispersionMap<float>;

namespace dispersion_detail {

template <typename T>
void check_probabilities(const Tensor<T>& p, double tol = 1e-5) {
  if (p.rank() != 3) throw std::invalid_argument("softmax tensor must be (C,H,W)");
  if (p.dim(0) < 2) throw std::invalid_argument("softmax needs at least 2 classes");
  const std::size_t c = p.dim(0), hw = p.dim(1) * p.dim(2);
  for (std::size_t px = 0; px < hw; ++px) {
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double v = static_cast<double>(p[k * hw + px]);
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("softmax value outside [0,1]");
      sum += v;
    }
    if (std::fabs(sum - 1.0) > tol)
      throw std::invalid_argument("softmax pixel not normalized (sum deviates by " +
                                  std::to_string(sum - 1.0) + ")");
  }
}

} // namespace dispersion_detail

/// Shannon entropy of the per-pixel class distribution, in bits, divided by
/// log2(C) so that the uniform distribution maps to exactly 1. 0*log(0) is 0.
template <typename T>
BasicDispersionMap<T> softmax_entropy(const Tensor<T>& probs) {
  dispersion_detail::check_probabilities(probs);
  const std::size_t c = probs.dim(0), h = probs.dim(1), w = probs.dim(2), hw = h * w;
  // The normalizer is the uniform distribution's entropy evaluated through
  // the same per-term arithmetic as the pixel loop below (analytically
  // log2(C)); a uniform input then divides out to exactly 1.0.
  double norm = 0.0;
  {
    const double pu = static_cast<double>(T(1) / static_cast<T>(c));
    for (std::size_t k = 0; k < c; ++k) norm -= pu * std::log2(pu);
  }
  BasicDispersionMap<T> out{Tensor<T>({h, w}), DispersionKind::kEntropy};
  for (std::size_t px = 0; px < hw; ++px) {
    double acc = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double p = static_cast<double>(probs[k * hw + px]);
      if (p > 0.0) acc -= p * std::log2(p);
    }
    out.t[px] = static_cast<T>(std::clamp(acc / norm, 0.0, 1.0));
  }
  return out;
}

inline DispersionMap softmax_entropy(const SoftmaxMap& sm) { return softmax_entropy(sm.t); }

/// One minus the gap between the two largest class probabilities:
/// 0 for a one-hot pixel, 1 when the top two classes tie.
template <typename T>
BasicDispersionMap<T> softmax_distance(const Tensor<T>& probs) {
  dispersion_detail::check_probabilities(probs);
  const std::size_t c = probs.dim(0), h = probs.dim(1), w = probs.dim(2), hw = h * w;
  BasicDispersionMap<T> out{Tensor<T>({h, w}), DispersionKind::kDistance};
  for (std::size_t px = 0; px < hw; ++px) {
    double top1 = -1.0, top2 = -1.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double p = static_cast<double>(probs[k * hw + px]);
      if (p > top1) {
        top2 = top1;
        top1 = p;
      } else if (p > top2) {
        top2 = p;
      }
    }
    out.t[px] = static_cast<T>(std::clamp(1.0 - top1 + top2, 0.0, 1.0));
  }
  return out;
}

inline DispersionMap softmax_distance(const SoftmaxMap& sm) { return softmax_distance(sm.t); }

/// Numerically safe softmax over the class axis of a (C,H,W) logit tensor.
/// The max subtraction makes the result invariant to constant logit shifts.
template <typename T>
Tensor<T> softmax_from_logits(const Tensor<T>& logits) {
  if (logits.rank() != 3) throw std::invalid_argument("logits must be (C,H,W)");
  const std::size_t c = logits.dim(0), hw = logits.dim(1) * logits.dim(2);
  Tensor<T> out(logits.shape());
  for (std::size_t px = 0; px < hw; ++px) {
    T m = logits[px];
    for (std::size_t k = 1; k < c; ++k) m = std::max(m, logits[k * hw + px]);
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double e = std::exp(static_cast<double>(logits[k * hw + px] - m));
      out[k * hw + px] = static_cast<T>(e);
      sum += e;
    }
    for (std::size_t k = 0; k < c; ++k)
      out[k * hw + px] = static_cast<T>(static_cast<double>(out[k * hw + px]) / sum);
  }
  return out;
}

/// Which pyramid levels feed the perceptual difference, and how the result is
/// brought back to image resolution.
struct PerceptualConfig {
  std::vector<std::size_t> taps = {0, 1, 2, 3};
  std::vector<std::size_t> element_counts; // optional expectation on channels per tap
  bool max_normalize = true;               // per-image division by the map maximum
  ResizeMode upsample = ResizeMode::kBilinear;

  void validate(std::size_t available_levels) const {
    if (taps.empty()) throw std::invalid_argument("perceptual difference needs at least one layer tap");
    for (std::size_t i = 0; i < taps.size(); ++i) {
      if (taps[i] >= available_levels)
        throw std::invalid_argument("perceptual tap out of range");
      if (i > 0 && taps[i] <= taps[i - 1])
        throw std::invalid_argument("perceptual taps must be strictly increasing");
    }
    if (!element_counts.empty() && element_counts.size() != taps.size())
      throw std::invalid_argument("element_counts must match taps");
  }
};

/// Per-pixel L1 feature distance between two pyramids: each tapped level's
/// channel-mean |a-b| map is upsampled to image resolution and the levels are
/// summed, then (by default) normalized by the per-image maximum. Symmetric
/// in its arguments by construction.
template <typename T>
BasicDispersionMap<T> perceptual_difference(const FeaturePyramidT<T>& feat_x,
                                            const FeaturePyramidT<T>& feat_r,
                                            const PerceptualConfig& cfg) {
  feat_x.validate();
  feat_r.validate();
  if (feat_x.levels.size() != feat_r.levels.size())
    throw std::invalid_argument("feature pyramids have different level counts");
  cfg.validate(feat_x.levels.size());

  const auto& ref = feat_x.levels[cfg.taps.front()];
  const std::size_t out_h = ref.features.dim(1) * ref.stride;
  const std::size_t out_w = ref.features.dim(2) * ref.stride;
  Tensor<double> acc({out_h, out_w}, 0.0);

  for (std::size_t ti = 0; ti < cfg.taps.size(); ++ti) {
    const std::size_t li = cfg.taps[ti];
    const auto& a = feat_x.levels[li].features;
    const auto& b = feat_r.levels[li].features;
    if (a.shape() != b.shape())
      throw std::invalid_argument("feature pyramid level " + std::to_string(li) + " shape mismatch: " +
                                  shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    const std::size_t c = a.dim(0), lh = a.dim(1), lw = a.dim(2), hw = lh * lw;
    if (!cfg.element_counts.empty() && cfg.element_counts[ti] != c)
      throw std::invalid_argument("perceptual element count mismatch at tap " + std::to_string(ti));
    Tensor<double> level({lh, lw}, 0.0);
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t px = 0; px < hw; ++px)
        level[px] += std::fabs(static_cast<double>(a[k * hw + px]) - static_cast<double>(b[k * hw + px]));
    for (std::size_t px = 0; px < hw; ++px) level[px] /= static_cast<double>(c);
    const Tensor<double> up = (lh == out_h && lw == out_w)
                                  ? level
                                  : resize(level, out_h, out_w, cfg.upsample);
    for (std::size_t px = 0; px < acc.size(); ++px) acc[px] += up[px];
  }

  BasicDispersionMap<T> out{Tensor<T>({out_h, out_w}), DispersionKind::kPerceptual};
  double mx = 0.0;
  for (std::size_t px = 0; px < acc.size(); ++px) mx = std::max(mx, acc[px]);
  if (!cfg.max_normalize || mx <= 0.0) {
    if (cfg.max_normalize) {
      out.t.fill(T(0)); // identical pyramids: all-zero map
    } else {
      for (std::size_t px = 0; px < acc.size(); ++px)
        out.t[px] = static_cast<T>(std::clamp(acc[px], 0.0, 1.0));
    }
  } else {
    for (std::size_t px = 0; px < acc.size(); ++px)
      out.t[px] = static_cast<T>(std::clamp(acc[px] / mx, 0.0, 1.0));
  }
  return out;
}

} // namespace anomseg
