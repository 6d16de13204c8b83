#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "anomseg/core/types.hpp"

namespace anomseg {

/// Pixel-pooled anomaly metrics. Conventions (recorded here because constant
/// scorers depend on them): tied scores form one threshold group with no
/// intra-tie ordering credit; AP integrates step-wise (sum of dRecall x
/// precision); FPR95 is the false-positive rate at the first threshold group,
/// scanning from the highest score down, whose TPR reaches 0.95; AUROC is
/// trapezoidal.
struct EvalResult {
  double ap = 0.0;
  double fpr95 = 0.0;
  double auroc = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t ignored = 0;
  // conventions, echoed into reports
  static constexpr const char* kApIntegration = "step";
  static constexpr const char* kTieHandling = "grouped";
  static constexpr const char* kPooling = "pixels pooled across images";
};

struct CurvePoint {
  double threshold = 0.0;
  double x = 0.0; // recall (PR) or FPR (ROC)
  double y = 0.0; // precision (PR) or TPR (ROC)
};

namespace metrics_detail {

struct Pool {
  std::vector<std::pair<double, std::uint8_t>> items; // (score, label in {0,1})
  std::size_t positives = 0, negatives = 0, ignored = 0;
};

template <typename ScoreT>
void pool_push(Pool& pool, const ScoreT* scores, const std::uint8_t* labels, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t l = labels[i];
    if (l == kIgnoreLabel) {
      ++pool.ignored;
      continue;
    }
    if (l != 0 && l != 1) throw std::invalid_argument("label values must be 0, 1 or ignore");
    const double s = static_cast<double>(scores[i]);
    if (!std::isfinite(s)) throw std::invalid_argument("scores must be finite");
    pool.items.emplace_back(s, l);
    if (l) ++pool.positives;
    else ++pool.negatives;
  }
}

struct SweepGroup {
  double threshold;
  std::size_t tp_cum, fp_cum; // cumulative counts including this group
};

inline std::vector<SweepGroup> sweep(Pool& pool) {
  std::sort(pool.items.begin(), pool.items.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<SweepGroup> groups;
  std::size_t tp = 0, fp = 0, i = 0;
  const std::size_t n = pool.items.size();
  while (i < n) {
    std::size_t j = i;
    while (j < n && pool.items[j].first == pool.items[i].first) {
      if (pool.items[j].second) ++tp;
      else ++fp;
      ++j;
    }
    groups.push_back({pool.items[i].first, tp, fp});
    i = j;
  }
  return groups;
}

} // namespace metrics_detail

/// Core entry point on already-pooled pixels.
template <typename ScoreT>
EvalResult evaluate_pooled(const std::vector<ScoreT>& scores, const std::vector<std::uint8_t>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("score/label length mismatch");
  metrics_detail::Pool pool;
  metrics_detail::pool_push(pool, scores.data(), labels.data(), scores.size());
  if (pool.positives == 0) throw std::invalid_argument("evaluation pool has no positive pixels");
  if (pool.negatives == 0) throw std::invalid_argument("evaluation pool has no negative pixels");

  EvalResult res;
  res.positives = pool.positives;
  res.negatives = pool.negatives;
  res.ignored = pool.ignored;
  const double P = static_cast<double>(pool.positives);
  const double N = static_cast<double>(pool.negatives);

  double ap = 0.0, prev_recall = 0.0;
  double auroc = 0.0, prev_fpr = 0.0, prev_tpr = 0.0;
  double fpr95 = 1.0;
  bool fpr95_found = false;
  for (const auto& g : metrics_detail::sweep(pool)) {
    const double recall = static_cast<double>(g.tp_cum) / P;
    const double precision =
        static_cast<double>(g.tp_cum) / static_cast<double>(g.tp_cum + g.fp_cum);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;

    const double fpr = static_cast<double>(g.fp_cum) / N;
    auroc += (fpr - prev_fpr) * 0.5 * (recall + prev_tpr);
    prev_fpr = fpr;
    prev_tpr = recall;

    if (!fpr95_found && recall >= 0.95) {
      fpr95 = fpr;
      fpr95_found = true;
    }
  }
  res.ap = ap;
  res.auroc = auroc;
  res.fpr95 = fpr95;
  return res;
}

/// Dataset-level evaluation: pixels pooled across all images; ignore-labeled
/// pixels excluded.
inline EvalResult evaluate(const std::vector<AnomalyScoreMap>& scores,
                           const std::vector<AnomalyLabelMap>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("need one label map per score map");
  if (scores.empty()) throw std::invalid_argument("nothing to evaluate");
  metrics_detail::Pool pool;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].t.shape() != std::vector<std::size_t>{labels[i].height(), labels[i].width()})
      throw std::invalid_argument("score/label shape mismatch at index " + std::to_string(i));
    metrics_detail::pool_push(pool, scores[i].t.data(), labels[i].t.data(), scores[i].t.size());
  }
  std::vector<double> s;
  std::vector<std::uint8_t> l;
  s.reserve(pool.items.size());
  l.reserve(pool.items.size());
  for (const auto& [score, label] : pool.items) {
    s.push_back(score);
    l.push_back(label);
  }
  EvalResult res = evaluate_pooled(s, l);
  res.ignored = pool.ignored;
  return res;
}

/// Average precision alone (hot path of the ensemble grid search).
template <typename ScoreT>
double average_precision(const std::vector<ScoreT>& scores, const std::vector<std::uint8_t>& labels) {
  return evaluate_pooled(scores, labels).ap;
}

inline std::vector<CurvePoint> pr_curve(const std::vector<double>& scores,
                                        const std::vector<std::uint8_t>& labels) {
  metrics_detail::Pool pool;
  metrics_detail::pool_push(pool, scores.data(), labels.data(), scores.size());
  const double P = static_cast<double>(pool.positives);
  std::vector<CurvePoint> out;
  for (const auto& g : metrics_detail::sweep(pool))
    out.push_back({g.threshold, static_cast<double>(g.tp_cum) / P,
                   static_cast<double>(g.tp_cum) / static_cast<double>(g.tp_cum + g.fp_cum)});
  return out;
}

inline std::vector<CurvePoint> roc_curve(const std::vector<double>& scores,
                                         const std::vector<std::uint8_t>& labels) {
  metrics_detail::Pool pool;
  metrics_detail::pool_push(pool, scores.data(), labels.data(), scores.size());
  const double P = static_cast<double>(pool.positives);
  const double N = static_cast<double>(pool.negatives);
  std::vector<CurvePoint> out;
  for (const auto& g : metrics_detail::sweep(pool))
    out.push_back({g.threshold, static_cast<double>(g.fp_cum) / N,
                   static_cast<double>(g.tp_cum) / P});
  return out;
}

} // namespace anomseg
