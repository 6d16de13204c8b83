#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "anomseg/core/tensor.hpp"
#include "anomseg/core/types.hpp"

namespace anomseg {

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad_logits;
  std::size_t valid_pixels = 0;
};

/// Inverse-frequency weights over the classes present in `labels`:
/// w_c = n_valid / (num_classes * n_c). Absent classes get weight 0 (they
/// contribute no pixels anyway).
inline std::vector<double> inverse_frequency_weights(const Tensor<std::int32_t>& labels,
                                                     std::size_t num_classes,
                                                     std::int32_t ignore_id) {
  std::vector<double> counts(num_classes, 0.0);
  double valid = 0.0;
  for (std::int32_t v : labels.raw()) {
    if (v == ignore_id) continue;
    if (v < 0 || static_cast<std::size_t>(v) >= num_classes)
      throw std::invalid_argument("label out of range: " + std::to_string(v));
    counts[static_cast<std::size_t>(v)] += 1.0;
    valid += 1.0;
  }
  std::vector<double> weights(num_classes, 0.0);
  for (std::size_t c = 0; c < num_classes; ++c)
    if (counts[c] > 0.0) weights[c] = valid / (static_cast<double>(num_classes) * counts[c]);
  return weights;
}

/// Fused softmax + cross-entropy over the class axis of (C,H,W) logits with
/// per-class weights and an ignore label. Loss is the weighted mean over
/// valid pixels; grad_logits is d(loss)/d(logits).
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const Tensor<std::int32_t>& labels,
                                    std::int32_t ignore_id,
                                    const std::vector<double>& class_weights = {}) {
  if (logits.rank() != 3) throw std::invalid_argument("logits must be (C,H,W)");
  if (labels.rank() != 2 || labels.dim(0) != logits.dim(1) || labels.dim(1) != logits.dim(2))
    throw std::invalid_argument("label map shape mismatch");
  const std::size_t c = logits.dim(0), hw = logits.dim(1) * logits.dim(2);
  if (!class_weights.empty() && class_weights.size() != c)
    throw std::invalid_argument("class_weights size must equal class count");

  LossResult<T> res;
  res.grad_logits = Tensor<T>(logits.shape());
  double weight_sum = 0.0;
  double loss_sum = 0.0;
  std::vector<double> probs(c);

  for (std::size_t p = 0; p < hw; ++p) {
    const std::int32_t y = labels[p];
    if (y == ignore_id) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw std::invalid_argument("label out of range: " + std::to_string(y));
    const double w = class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(y)];
    if (w == 0.0) continue;

    double mx = static_cast<double>(logits[p]);
    for (std::size_t k = 1; k < c; ++k)
      mx = std::max(mx, static_cast<double>(logits[k * hw + p]));
    double denom = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      probs[k] = std::exp(static_cast<double>(logits[k * hw + p]) - mx);
      denom += probs[k];
    }
    for (std::size_t k = 0; k < c; ++k) probs[k] /= denom;

    loss_sum += -w * std::log(std::max(probs[static_cast<std::size_t>(y)], 1e-300));
    weight_sum += w;
    ++res.valid_pixels;
    for (std::size_t k = 0; k < c; ++k) {
      const double target = (k == static_cast<std::size_t>(y)) ? 1.0 : 0.0;
      res.grad_logits[k * hw + p] = static_cast<T>(w * (probs[k] - target));
    }
  }

  if (res.valid_pixels == 0) throw std::invalid_argument("loss has no valid pixels");
  res.loss = loss_sum / weight_sum;
  const double scale = 1.0 / weight_sum;
  for (std::size_t i = 0; i < res.grad_logits.size(); ++i)
    res.grad_logits[i] = static_cast<T>(static_cast<double>(res.grad_logits[i]) * scale);
  return res;
}

/// Anomaly-label (0/1/ignore) convenience wrapper with per-sample
/// inverse-frequency class weighting.
template <typename T>
LossResult<T> anomaly_cross_entropy(const Tensor<T>& logits, const AnomalyLabelMap& labels,
                                    bool class_balanced = true) {
  const Tensor<std::int32_t> y = labels.t.template cast<std::int32_t>();
  std::vector<double> weights;
  if (class_balanced) weights = inverse_frequency_weights(y, 2, kIgnoreLabel);
  return softmax_cross_entropy(logits, y, kIgnoreLabel, weights);
}

} // namespace anomseg
