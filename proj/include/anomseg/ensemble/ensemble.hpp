#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "anomseg/core/types.hpp"
#include "anomseg/dissimilarity/train.hpp"
#include "anomseg/metrics/eval.hpp"
#include "anomseg/nn/adam.hpp"

namespace anomseg {

constexpr std::size_t kEnsembleMaps = 4;
/// Map order inside the ensemble, everywhere.
enum EnsembleChannel : std::size_t {
  kMapDissimilarity = 0,
  kMapEntropy = 1,
  kMapDistance = 2,
  kMapPerceptual = 3,
};
inline const char* ensemble_channel_name(std::size_t i) {
  static constexpr const char* names[kEnsembleMaps] = {"dissimilarity", "entropy", "distance",
                                                       "perceptual"};
  return names[i];
}

/// Convex weights over (dissimilarity, entropy, distance, perceptual);
/// normalized to the simplex at construction.
struct EnsembleWeights {
  std::array<double, kEnsembleMaps> w{1.0, 0.0, 0.0, 0.0};

  EnsembleWeights() = default;
  explicit EnsembleWeights(std::array<double, kEnsembleMaps> raw) : w(raw) {
    double sum = 0.0;
    for (double v : w) {
      if (v < 0.0 || !std::isfinite(v)) throw std::invalid_argument("ensemble weights must be >= 0");
      sum += v;
    }
    if (sum <= 0.0) throw std::invalid_argument("ensemble weights must not all be zero");
    for (double& v : w) v /= sum;
  }

  double operator[](std::size_t i) const { return w[i]; }
};

/// The per-image quadruple the ensemble combines, all at one resolution with
/// values in [0,1].
struct ScoreMapSet {
  std::array<Tensor<float>, kEnsembleMaps> maps;
  std::string stem;

  void validate() const {
    for (std::size_t i = 1; i < kEnsembleMaps; ++i)
      if (maps[i].shape() != maps[0].shape())
        throw std::invalid_argument("ensemble map shape mismatch for '" + stem + "' (" +
                                    ensemble_channel_name(i) + ")");
    for (const auto& m : maps)
      for (float v : m.raw())
        if (!(v >= 0.0f && v <= 1.0f))
          throw std::invalid_argument("ensemble maps must lie in [0,1]");
  }
};

/// Pixel-wise convex combination; output inherits the [0,1] range.
inline AnomalyScoreMap combine(const ScoreMapSet& set, const EnsembleWeights& w) {
  set.validate();
  Tensor<float> out(set.maps[0].shape());
  for (std::size_t p = 0; p < out.size(); ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < kEnsembleMaps; ++i)
      acc += w[i] * static_cast<double>(set.maps[i][p]);
    out[p] = static_cast<float>(acc);
  }
  return AnomalyScoreMap(std::move(out));
}

struct GridPoint {
  std::array<double, kEnsembleMaps> w;
  double ap;
  double fpr95;
};

/// Search objective: validation AP by default; the FPR95 variant minimizes
/// the false-positive rate at 95% TPR (ties broken by higher AP), for
/// deployments that care about false alarms first.
enum class GridObjective { kAveragePrecision, kFpr95 };

struct GridSearchResult {
  EnsembleWeights best;
  double best_ap = 0.0;
  double best_fpr95 = 1.0;
  double step = 0.1;
  GridObjective objective = GridObjective::kAveragePrecision;
  std::vector<GridPoint> log; // every grid point, in enumeration order
};

namespace ensemble_detail {

inline void enumerate_simplex(std::size_t k, std::vector<std::array<std::size_t, kEnsembleMaps>>& out) {
  for (std::size_t a = 0; a <= k; ++a)
    for (std::size_t b = 0; a + b <= k; ++b)
      for (std::size_t c = 0; a + b + c <= k; ++c)
        out.push_back({a, b, c, k - a - b - c});
}

inline bool lex_greater(const std::array<double, kEnsembleMaps>& a,
                        const std::array<double, kEnsembleMaps>& b) {
  for (std::size_t i = 0; i < kEnsembleMaps; ++i) {
    if (a[i] != b[i]) return a[i] > b[i];
  }
  return false;
}

} // namespace ensemble_detail

/// Exhaustive search over the simplex grid of spacing `step` (corners always
/// included) maximizing validation AP. Ties break toward larger weight on the
/// dissimilarity map, then lexicographically, so the argmax is deterministic.
inline GridSearchResult grid_search(const std::vector<ScoreMapSet>& sets,
                                    const std::vector<AnomalyLabelMap>& labels, double step = 0.1,
                                    GridObjective objective = GridObjective::kAveragePrecision) {
  if (sets.empty()) throw std::invalid_argument("grid search needs a non-empty validation set");
  if (sets.size() != labels.size()) throw std::invalid_argument("need one label map per map set");
  if (!(step > 0.0 && step <= 1.0)) throw std::invalid_argument("grid step must be in (0,1]");

  // Pool pixels once; each grid point then blends four flat vectors.
  std::array<std::vector<float>, kEnsembleMaps> pooled;
  std::vector<std::uint8_t> pooled_labels;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    sets[i].validate();
    const auto& shape = sets[i].maps[0].shape();
    if (shape != labels[i].t.shape())
      throw std::invalid_argument("label shape mismatch for '" + sets[i].stem + "'");
    for (std::size_t p = 0; p < labels[i].t.size(); ++p) {
      const std::uint8_t l = labels[i].t[p];
      if (l == kIgnoreLabel) continue;
      pooled_labels.push_back(l);
      for (std::size_t m = 0; m < kEnsembleMaps; ++m) pooled[m].push_back(sets[i].maps[m][p]);
    }
  }

  const std::size_t k = static_cast<std::size_t>(std::llround(1.0 / step));
  std::vector<std::array<std::size_t, kEnsembleMaps>> points;
  ensemble_detail::enumerate_simplex(k, points);

  GridSearchResult result;
  result.step = 1.0 / static_cast<double>(k);
  result.objective = objective;
  bool have_best = false;
  std::vector<double> blended(pooled_labels.size());
  for (const auto& pt : points) {
    std::array<double, kEnsembleMaps> w;
    for (std::size_t i = 0; i < kEnsembleMaps; ++i)
      w[i] = static_cast<double>(pt[i]) / static_cast<double>(k);
    for (std::size_t p = 0; p < blended.size(); ++p) {
      double acc = 0.0;
      for (std::size_t m = 0; m < kEnsembleMaps; ++m)
        acc += w[m] * static_cast<double>(pooled[m][p]);
      blended[p] = acc;
    }
    const EvalResult ev = evaluate_pooled(blended, pooled_labels);
    result.log.push_back({w, ev.ap, ev.fpr95});
    bool better;
    if (!have_best) {
      better = true;
    } else if (objective == GridObjective::kAveragePrecision) {
      better = ev.ap > result.best_ap ||
               (ev.ap == result.best_ap && ensemble_detail::lex_greater(w, result.best.w));
    } else {
      better = ev.fpr95 < result.best_fpr95 ||
               (ev.fpr95 == result.best_fpr95 &&
                (ev.ap > result.best_ap ||
                 (ev.ap == result.best_ap && ensemble_detail::lex_greater(w, result.best.w))));
    }
    if (better) {
      result.best = EnsembleWeights(w);
      result.best_ap = ev.ap;
      result.best_fpr95 = ev.fpr95;
      have_best = true;
    }
  }
  return result;
}

struct LearnWeightsConfig {
  std::size_t steps = 200;
  double lr = 0.05;
};

struct LearnWeightsResult {
  EnsembleWeights weights;
  std::vector<double> loss_curve;
};

/// Learns the four blending scalars on frozen maps: weights parameterized by
/// a softmax over four logits (always a simplex point), optimized against a
/// pixel-wise binary cross-entropy on the blended score. Zero steps returns
/// the uniform initialization. This is the post-hoc variant; the joint
/// variant lives in the trainer via `train_with_ensemble_head`.
inline LearnWeightsResult learn_weights(const std::vector<ScoreMapSet>& sets,
                                        const std::vector<AnomalyLabelMap>& labels,
                                        const LearnWeightsConfig& cfg = {}) {
  if (sets.empty() || sets.size() != labels.size())
    throw std::invalid_argument("learn_weights needs matched map sets and labels");
  std::array<std::vector<float>, kEnsembleMaps> pooled;
  std::vector<std::uint8_t> pooled_labels;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    sets[i].validate();
    for (std::size_t p = 0; p < labels[i].t.size(); ++p) {
      const std::uint8_t l = labels[i].t[p];
      if (l == kIgnoreLabel) continue;
      pooled_labels.push_back(l);
      for (std::size_t m = 0; m < kEnsembleMaps; ++m) pooled[m].push_back(sets[i].maps[m][p]);
    }
  }
  if (pooled_labels.empty()) throw std::invalid_argument("learn_weights has no valid pixels");

  std::array<double, kEnsembleMaps> theta{0.0, 0.0, 0.0, 0.0}; // softmax -> uniform
  LearnWeightsResult result;
  const double n_inv = 1.0 / static_cast<double>(pooled_labels.size());

  for (std::size_t stepi = 0; stepi < cfg.steps; ++stepi) {
    std::array<double, kEnsembleMaps> w;
    double mx = theta[0];
    for (double t : theta) mx = std::max(mx, t);
    double z = 0.0;
    for (std::size_t i = 0; i < kEnsembleMaps; ++i) {
      w[i] = std::exp(theta[i] - mx);
      z += w[i];
    }
    for (double& v : w) v /= z;

    double loss = 0.0;
    std::array<double, kEnsembleMaps> grad_w{0, 0, 0, 0};
    for (std::size_t p = 0; p < pooled_labels.size(); ++p) {
      double b = 0.0;
      for (std::size_t m = 0; m < kEnsembleMaps; ++m)
        b += w[m] * static_cast<double>(pooled[m][p]);
      b = std::clamp(b, 1e-7, 1.0 - 1e-7);
      const double y = pooled_labels[p] ? 1.0 : 0.0;
      loss -= (y * std::log(b) + (1.0 - y) * std::log(1.0 - b)) * n_inv;
      const double dldb = (b - y) / (b * (1.0 - b)) * n_inv;
      for (std::size_t m = 0; m < kEnsembleMaps; ++m)
        grad_w[m] += dldb * static_cast<double>(pooled[m][p]);
    }
    result.loss_curve.push_back(loss);

    // chain through the softmax parameterization
    double gdotw = 0.0;
    for (std::size_t m = 0; m < kEnsembleMaps; ++m) gdotw += grad_w[m] * w[m];
    for (std::size_t m = 0; m < kEnsembleMaps; ++m)
      theta[m] -= cfg.lr * w[m] * (grad_w[m] - gdotw);
  }

  std::array<double, kEnsembleMaps> w;
  double mx = theta[0];
  for (double t : theta) mx = std::max(mx, t);
  double z = 0.0;
  for (std::size_t i = 0; i < kEnsembleMaps; ++i) {
    w[i] = std::exp(theta[i] - mx);
    z += w[i];
  }
  for (double& v : w) v /= z;
  result.weights = EnsembleWeights(w);
  return result;
}

struct JointEnsembleResult {
  EnsembleWeights weights;
  std::vector<double> loss_curve;
};

/// Joint variant: a learnable scalar per prediction map sits at the end of
/// the dissimilarity network and the blended score is trained end-to-end
/// (binary cross-entropy on the blend, gradients flowing into both the
/// scalars and the network). Zero epochs returns the uniform initialization
/// with the net untouched.
template <typename T>
JointEnsembleResult train_with_ensemble_head(DissimilarityNetT<T>& net,
                                             const std::vector<TrainingSample>& samples,
                                             std::size_t epochs, double net_lr, double head_lr,
                                             std::uint64_t seed) {
  if (samples.empty()) throw std::invalid_argument("no training samples");
  JointEnsembleResult result;
  std::array<double, kEnsembleMaps> theta{0, 0, 0, 0};
  Adam<T> opt(net.params(), net_lr);
  Rng rng(Rng::mix(seed, 0xe2e));
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    std::size_t steps = 0;
    for (std::size_t idx : order) {
      const TrainingSample& s = samples[idx];
      std::array<double, kEnsembleMaps> w;
      double mx = theta[0];
      for (double t : theta) mx = std::max(mx, t);
      double z = 0.0;
      for (std::size_t i = 0; i < kEnsembleMaps; ++i) {
        w[i] = std::exp(theta[i] - mx);
        z += w[i];
      }
      for (double& v : w) v /= z;

      DissimilarityInputsT<T> in;
      in.image = s.inputs.image.template cast<T>();
      in.synthesized = s.inputs.synthesized.template cast<T>();
      in.semantic_onehot = s.inputs.semantic_onehot.template cast<T>();
      in.uncertainty = s.inputs.uncertainty.template cast<T>();
      opt.zero_grad();
      Tensor<T> logits = net.forward(in);
      Tensor<T> score = DissimilarityNetT<T>::score_from_logits(logits);

      const std::size_t hw = score.size();
      const std::size_t uhw = hw; // uncertainty channels share the resolution
      // class-balanced pixel weights, as in the main loss
      double n_pos = 0, n_neg = 0;
      for (std::size_t p = 0; p < hw; ++p) {
        if (s.label.t[p] == 1) ++n_pos;
        else if (s.label.t[p] == 0) ++n_neg;
      }
      if (n_pos == 0 && n_neg == 0) { net.clear_cache(); continue; }
      const double n_valid = n_pos + n_neg;
      const double wp = n_pos > 0 ? n_valid / (2.0 * n_pos) : 0.0;
      const double wn = n_neg > 0 ? n_valid / (2.0 * n_neg) : 0.0;
      double weight_sum = n_pos * wp + n_neg * wn;

      double loss = 0.0;
      Tensor<T> grad_logits(logits.shape());
      std::array<double, kEnsembleMaps> grad_w{0, 0, 0, 0};
      for (std::size_t p = 0; p < hw; ++p) {
        const std::uint8_t lab = s.label.t[p];
        if (lab == kIgnoreLabel) continue;
        const double y = lab ? 1.0 : 0.0;
        const double pw = (lab ? wp : wn) / weight_sum;
        std::array<double, kEnsembleMaps> maps{
            static_cast<double>(score[p]), static_cast<double>(s.inputs.uncertainty[0 * uhw + p]),
            static_cast<double>(s.inputs.uncertainty[1 * uhw + p]),
            static_cast<double>(s.inputs.uncertainty[2 * uhw + p])};
        double b = 0.0;
        for (std::size_t m = 0; m < kEnsembleMaps; ++m) b += w[m] * maps[m];
        b = std::clamp(b, 1e-7, 1.0 - 1e-7);
        loss -= pw * (y * std::log(b) + (1.0 - y) * std::log(1.0 - b));
        const double dldb = pw * (b - y) / (b * (1.0 - b));
        for (std::size_t m = 0; m < kEnsembleMaps; ++m) grad_w[m] += dldb * maps[m];
        const double dlds = dldb * w[kMapDissimilarity];
        const double sp = static_cast<double>(score[p]);
        const double dsdl1 = sp * (1.0 - sp);
        grad_logits[hw + p] = static_cast<T>(dlds * dsdl1);
        grad_logits[p] = static_cast<T>(-dlds * dsdl1);
      }
      net.backward(grad_logits);
      opt.step();
      double gdotw = 0.0;
      for (std::size_t m = 0; m < kEnsembleMaps; ++m) gdotw += grad_w[m] * w[m];
      for (std::size_t m = 0; m < kEnsembleMaps; ++m)
        theta[m] -= head_lr * w[m] * (grad_w[m] - gdotw);
      epoch_loss += loss;
      ++steps;
    }
    result.loss_curve.push_back(steps ? epoch_loss / double(steps) : 0.0);
  }

  std::array<double, kEnsembleMaps> w;
  double mx = theta[0];
  for (double t : theta) mx = std::max(mx, t);
  double z = 0.0;
  for (std::size_t i = 0; i < kEnsembleMaps; ++i) {
    w[i] = std::exp(theta[i] - mx);
    z += w[i];
  }
  for (double& v : w) v /= z;
  result.weights = EnsembleWeights(w);
  return result;
}

} // namespace anomseg
