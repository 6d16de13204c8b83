#pragma once

// Test-only oracles for the pixel metrics: independent, quadratic-time
// implementations by explicit threshold enumeration (AP, FPR95) and pairwise
// counting (AUROC). These never share code with the production sweep.

#include <algorithm>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <vector>

namespace anomseg_test {

/// Exact AP by enumerating every distinct score as a threshold (predict
/// positive where score >= t), visiting thresholds from high to low and
/// accumulating step-wise dRecall * precision.
inline double brute_force_ap(const std::vector<double>& scores,
                             const std::vector<std::uint8_t>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw std::invalid_argument("bad oracle input");
  std::set<double, std::greater<double>> thresholds(scores.begin(), scores.end());
  double positives = 0;
  for (auto l : labels) positives += l ? 1.0 : 0.0;
  double ap = 0.0, prev_recall = 0.0;
  for (double t : thresholds) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= t) {
        if (labels[i]) ++tp;
        else ++fp;
      }
    }
    const double recall = tp / positives;
    const double precision = tp / (tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

/// Exact AUROC by Mann-Whitney pairwise counting: concordant pairs count 1,
/// ties 1/2.
inline double brute_force_auroc(const std::vector<double>& scores,
                                const std::vector<std::uint8_t>& labels) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  if (pairs == 0.0) throw std::invalid_argument("oracle needs both classes");
  return wins / pairs;
}

/// Exact FPR at the first threshold (from above) whose TPR reaches the
/// target.
inline double brute_force_fpr_at_tpr(const std::vector<double>& scores,
                                     const std::vector<std::uint8_t>& labels, double tpr_target) {
  std::set<double, std::greater<double>> thresholds(scores.begin(), scores.end());
  double positives = 0, negatives = 0;
  for (auto l : labels) (l ? positives : negatives) += 1.0;
  for (double t : thresholds) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= t) {
        if (labels[i]) ++tp;
        else ++fp;
      }
    }
    if (tp / positives >= tpr_target) return fp / negatives;
  }
  return 1.0;
}

} // namespace anomseg_test
