#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "anomseg/core/resize.hpp"
#include "anomseg/core/rng.hpp"
#include "anomseg/dissimilarity/net.hpp"
#include "anomseg/nn/adam.hpp"
#include "anomseg/nn/loss.hpp"

namespace anomseg {

enum class SampleSource { kSwap, kVoid };

inline const char* to_string(SampleSource s) { return s == SampleSource::kSwap ? "swap" : "void"; }

/// One generated training example for the dissimilarity module.
struct TrainingSample {
  std::string stem;
  SampleSource source = SampleSource::kSwap;
  DissimilarityInputs inputs;
  AnomalyLabelMap label;
};

struct DissimTrainConfig {
  std::size_t epochs = 50;
  double lr = 1e-4;
  std::size_t plateau_patience = 10; // reduce lr on stagnant validation loss
  double plateau_factor = 0.5;
  bool hflip_augment = true; // mirror around the vertical axis
  bool class_balanced_loss = true;
  bool freeze_image_encoder = false; // keep the shared VGG branch fixed
  double val_fraction = 0.1; // held-out generated samples for model selection
  std::size_t max_steps_per_epoch = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double best_val_loss = 0.0; // running minimum, non-increasing by construction
  double lr = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
};

namespace dissim_detail {

inline TrainingSample flipped(const TrainingSample& s) {
  TrainingSample out;
  out.stem = s.stem;
  out.source = s.source;
  out.inputs.image = flip_horizontal(s.inputs.image);
  out.inputs.synthesized = flip_horizontal(s.inputs.synthesized);
  out.inputs.semantic_onehot = flip_horizontal(s.inputs.semantic_onehot);
  out.inputs.uncertainty = flip_horizontal(s.inputs.uncertainty);
  out.label.t = flip_horizontal(s.label.t);
  return out;
}

template <typename T>
double sample_loss(DissimilarityNetT<T>& net, const TrainingSample& s, bool balanced, bool do_backward) {
  DissimilarityInputsT<T> in;
  in.image = s.inputs.image.template cast<T>();
  in.synthesized = s.inputs.synthesized.template cast<T>();
  in.semantic_onehot = s.inputs.semantic_onehot.template cast<T>();
  in.uncertainty = s.inputs.uncertainty.template cast<T>();
  Tensor<T> logits = net.forward(in);
  auto loss = anomaly_cross_entropy(logits, s.label, balanced);
  if (do_backward)
    net.backward(loss.grad_logits);
  else
    net.clear_cache();
  return loss.loss;
}

} // namespace dissim_detail

/// Trains the net on generated samples. Model selection runs on a held-out
/// slice of the samples; the best-validation weights are restored at the end.
/// Throws if the labels carry only a single class, or on divergence.
template <typename T>
TrainLog train_dissimilarity(DissimilarityNetT<T>& net, const std::vector<TrainingSample>& samples,
                             const DissimTrainConfig& cfg, std::uint64_t seed) {
  if (samples.empty()) throw std::invalid_argument("no training samples");
  bool has_pos = false, has_neg = false;
  for (const auto& s : samples) {
    for (std::uint8_t v : s.label.t.raw()) {
      if (v == 0) has_neg = true;
      else if (v == 1) has_pos = true;
    }
    if (has_pos && has_neg) break;
  }
  if (!has_pos || !has_neg)
    throw std::invalid_argument("training labels contain a single class (need both anomaly and "
                                "inlier pixels somewhere in the dataset)");

  Rng rng(Rng::mix(seed, 0x7247));
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order.begin(), order.end());

  std::size_t n_val =
      static_cast<std::size_t>(std::llround(cfg.val_fraction * double(samples.size())));
  n_val = std::min(n_val, samples.size() - 1);
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + n_val);
  std::vector<std::size_t> train_idx(order.begin() + n_val, order.end());

  std::vector<NamedParam<T>> trainable = net.params();
  if (cfg.freeze_image_encoder) {
    std::erase_if(trainable, [](const NamedParam<T>& p) {
      return p.name.rfind("image_encoder.", 0) == 0;
    });
  }
  Adam<T> opt(std::move(trainable), cfg.lr);
  TrainLog log;
  log.best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t plateau_wait = 0;
  std::vector<Tensor<T>> best_weights;
  const auto params = net.params();

  const auto snapshot = [&]() {
    best_weights.clear();
    for (const auto& p : params) best_weights.push_back(p.param->value);
  };
  snapshot();

  std::size_t global_step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(train_idx.begin(), train_idx.end());
    double train_loss = 0.0;
    std::size_t steps = 0;
    for (std::size_t i : train_idx) {
      if (cfg.max_steps_per_epoch && steps >= cfg.max_steps_per_epoch) break;
      opt.zero_grad();
      double l;
      if (cfg.hflip_augment && rng.bernoulli(0.5)) {
        const TrainingSample flipped = dissim_detail::flipped(samples[i]);
        l = dissim_detail::sample_loss(net, flipped, cfg.class_balanced_loss, true);
      } else {
        l = dissim_detail::sample_loss(net, samples[i], cfg.class_balanced_loss, true);
      }
      if (!std::isfinite(l))
        throw std::runtime_error("dissimilarity training diverged (loss is NaN) at step " +
                                 std::to_string(global_step) + ", seed " + std::to_string(seed));
      opt.step();
      train_loss += l;
      ++steps;
      ++global_step;
    }
    train_loss = steps ? train_loss / double(steps) : 0.0;

    double val_loss = 0.0;
    if (!val_idx.empty()) {
      for (std::size_t i : val_idx)
        val_loss += dissim_detail::sample_loss(net, samples[i], cfg.class_balanced_loss, false);
      val_loss /= double(val_idx.size());
    } else {
      val_loss = train_loss; // tiny datasets: select on train loss
    }

    if (val_loss < log.best_val_loss) {
      log.best_val_loss = val_loss;
      log.best_epoch = epoch;
      plateau_wait = 0;
      snapshot();
    } else if (++plateau_wait >= cfg.plateau_patience) {
      opt.set_lr(opt.lr() * cfg.plateau_factor);
      plateau_wait = 0;
    }
    log.epochs.push_back({epoch, train_loss, val_loss, log.best_val_loss, opt.lr()});
  }

  for (std::size_t i = 0; i < params.size(); ++i) params[i].param->value = best_weights[i];
  net.clear_cache();
  return log;
}

} // namespace anomseg
