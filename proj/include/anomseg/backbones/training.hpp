#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "anomseg/backbones/backbones.hpp"
#include "anomseg/core/resize.hpp"
#include "anomseg/data/dataset.hpp"
#include "anomseg/nn/adam.hpp"
#include "anomseg/nn/checkpoint.hpp"
#include "anomseg/nn/loss.hpp"

namespace anomseg {

struct BackboneTrainConfig {
  std::size_t seg_epochs = 3;
  std::size_t synth_epochs = 3;
  double seg_lr = 1e-3;
  double synth_lr = 2e-3;
  std::size_t seg_width = 16;
  std::size_t synth_hidden = 32;
  std::size_t feature_width = 64;
  std::string feature_mode = "random"; // "random" (seeded projections) or "trained"
  std::size_t feature_epochs = 1;
  std::size_t max_steps_per_epoch = 0; // 0 = full split
  double holdout_fraction = 0.1;
  std::uint64_t seed = 1;
};

struct BackboneTrainResult {
  double seg_pixel_accuracy = 0.0; // held-out inlier pixels (void excluded)
  double synth_mae = 0.0;          // held-out reconstruction error
  std::size_t holdout_images = 0;
  bool trained = false;
  std::vector<double> seg_epoch_loss;
  std::vector<double> synth_epoch_loss;
};

/// Trained backbones plus the shared feature extractor, as one unit the
/// pipeline can load.
struct BackboneBundle {
  std::unique_ptr<ToySegmentationNet> segmentation;
  std::unique_ptr<ToySynthesisNet> synthesis;
  std::unique_ptr<FeatureExtractor> features;
  std::size_t num_classes = 0;
  std::size_t image_h = 0, image_w = 0; // segmentation resolution; synthesis runs at half
};

namespace backbone_detail {

inline void check_nan(double loss, std::uint64_t seed, std::size_t step, const char* what) {
  if (!std::isfinite(loss))
    throw std::runtime_error(std::string(what) + " training diverged (loss is not finite) at step " +
                             std::to_string(step) + ", seed " + std::to_string(seed));
}

} // namespace backbone_detail

/// Trains the toy segmentation and synthesis networks on the inlier training
/// split and reports held-out quality. Deterministic per seed.
inline BackboneTrainResult train_toy_backbones(const DatasetIndex& index, BackboneBundle& bundle,
                                               const BackboneTrainConfig& cfg) {
  const auto train = index.split("train");
  if (train.empty()) throw std::runtime_error("dataset has no training split");

  const std::size_t holdout =
      std::min(train.size() - 1,
               static_cast<std::size_t>(std::llround(cfg.holdout_fraction * double(train.size()))));
  const std::size_t n_fit = train.size() - holdout;

  BackboneTrainResult result;
  result.holdout_images = holdout;
  result.trained = cfg.seg_epochs > 0 || cfg.synth_epochs > 0;

  auto& seg = *bundle.segmentation;
  auto& synth = *bundle.synthesis;
  const auto [sh, sw] = synth.input_resolution();

  Rng order_rng(Rng::mix(cfg.seed, 0x0bb1));

  // --- segmentation ---
  {
    Adam<float> opt(seg.params(), cfg.seg_lr);
    std::vector<std::size_t> order(n_fit);
    for (std::size_t i = 0; i < n_fit; ++i) order[i] = i;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.seg_epochs; ++epoch) {
      order_rng.shuffle(order.begin(), order.end());
      double epoch_loss = 0.0;
      std::size_t steps_this_epoch = 0;
      for (std::size_t i : order) {
        if (cfg.max_steps_per_epoch && steps_this_epoch >= cfg.max_steps_per_epoch) break;
        const RgbImage image = load_record_image(*train[i]);
        const SemanticMap sem = load_record_semantic(*train[i], index.num_classes);
        opt.zero_grad();
        Tensor<float> logits = seg.forward_logits(image.t);
        auto loss = softmax_cross_entropy(logits, sem.t, kVoidClass);
        backbone_detail::check_nan(loss.loss, cfg.seed, step, "segmentation");
        seg.backward(loss.grad_logits);
        opt.step();
        epoch_loss += loss.loss;
        ++steps_this_epoch;
        ++step;
      }
      result.seg_epoch_loss.push_back(steps_this_epoch ? epoch_loss / double(steps_this_epoch) : 0.0);
    }
  }

  // --- synthesis ---
  {
    Adam<float> opt(synth.params(), cfg.synth_lr);
    std::vector<std::size_t> order(n_fit);
    for (std::size_t i = 0; i < n_fit; ++i) order[i] = i;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.synth_epochs; ++epoch) {
      order_rng.shuffle(order.begin(), order.end());
      double epoch_loss = 0.0;
      std::size_t steps_this_epoch = 0;
      for (std::size_t i : order) {
        if (cfg.max_steps_per_epoch && steps_this_epoch >= cfg.max_steps_per_epoch) break;
        const RgbImage image = load_record_image(*train[i]);
        const SemanticMap sem = load_record_semantic(*train[i], index.num_classes);
        SemanticMap sem_half;
        sem_half.t = resize(sem.t, sh, sw, ResizeMode::kNearest);
        sem_half.num_classes = sem.num_classes;
        const Tensor<float> target = resize(image.t, sh, sw, ResizeMode::kBilinear);

        opt.zero_grad();
        Tensor<float> pred = synth.forward(synth.encode_semantic(sem_half));
        // L1 reconstruction
        double loss = 0.0;
        Tensor<float> grad(pred.shape());
        const double inv_n = 1.0 / double(pred.size());
        for (std::size_t p = 0; p < pred.size(); ++p) {
          const double d = double(pred[p]) - double(target[p]);
          loss += std::fabs(d) * inv_n;
          grad[p] = static_cast<float>((d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) * inv_n);
        }
        backbone_detail::check_nan(loss, cfg.seed, step, "synthesis");
        synth.backward(grad);
        opt.step();
        epoch_loss += loss;
        ++steps_this_epoch;
        ++step;
      }
      result.synth_epoch_loss.push_back(steps_this_epoch ? epoch_loss / double(steps_this_epoch) : 0.0);
    }
  }

  // --- feature extractor ---
  if (cfg.feature_mode == "trained" && cfg.feature_epochs > 0) {
    // Brief pixel-classification training at the dissimilarity resolution:
    // a throwaway 1x1 head on the deepest level predicts stride-8 labels.
    auto& enc = bundle.features->encoder();
    const std::size_t top_ch = cfg.feature_width << (bundle.features->levels() - 1);
    Conv2d<float> head(top_ch, index.num_classes, 1, 1, 0, Activation::kNone);
    Rng head_rng(Rng::mix(cfg.seed, 0x6ead));
    head.init(head_rng);
    std::vector<NamedParam<float>> params = bundle.features->params();
    head.collect_params("features.head", params);
    Adam<float> opt(params, 1e-3);
    const std::size_t dh = bundle.image_h / 4, dw = bundle.image_w / 4;
    const std::size_t stride_top = std::size_t(1) << (bundle.features->levels() - 1);
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.feature_epochs; ++epoch) {
      std::size_t steps_this_epoch = 0;
      for (std::size_t i = 0; i < n_fit; ++i) {
        if (cfg.max_steps_per_epoch && steps_this_epoch >= cfg.max_steps_per_epoch) break;
        const RgbImage image = load_record_image(*train[i]);
        const SemanticMap sem = load_record_semantic(*train[i], index.num_classes);
        const Tensor<float> small = resize(image.t, dh, dw, ResizeMode::kBilinear);
        const Tensor<std::int32_t> labels =
            resize(sem.t, dh / stride_top, dw / stride_top, ResizeMode::kNearest);
        opt.zero_grad();
        auto pyr = enc.forward(small);
        Tensor<float> logits = head.forward(pyr.levels.back().features);
        auto loss = softmax_cross_entropy(logits, labels, kVoidClass);
        backbone_detail::check_nan(loss.loss, cfg.seed, step, "feature extractor");
        Tensor<float> g_top = head.backward(loss.grad_logits);
        std::vector<Tensor<float>> grads;
        for (std::size_t l = 0; l + 1 < pyr.levels.size(); ++l)
          grads.emplace_back(pyr.levels[l].features.shape());
        grads.push_back(std::move(g_top));
        enc.backward(grads);
        opt.step();
        ++steps_this_epoch;
        ++step;
      }
    }
    enc.clear_cache();
  }

  // --- held-out metrics ---
  double correct = 0.0, counted = 0.0, mae_sum = 0.0;
  std::size_t mae_n = 0;
  const std::size_t eval_begin = holdout > 0 ? n_fit : 0;
  const std::size_t eval_end = holdout > 0 ? train.size() : std::min<std::size_t>(train.size(), 8);
  for (std::size_t i = eval_begin; i < eval_end; ++i) {
    const RgbImage image = load_record_image(*train[i]);
    const SemanticMap sem = load_record_semantic(*train[i], index.num_classes);
    const SoftmaxMap sm = seg.segment({&image, train[i]->stem});
    const SemanticMap pred = argmax_semantic(sm);
    for (std::size_t p = 0; p < sem.t.size(); ++p) {
      if (sem.t[p] == kVoidClass) continue;
      counted += 1.0;
      if (pred.t[p] == sem.t[p]) correct += 1.0;
    }
    SemanticMap sem_half;
    sem_half.t = resize(sem.t, sh, sw, ResizeMode::kNearest);
    sem_half.num_classes = sem.num_classes;
    const Tensor<float> target = resize(image.t, sh, sw, ResizeMode::kBilinear);
    const RgbImage recon = synth.synthesize({&sem_half, train[i]->stem});
    for (std::size_t p = 0; p < target.size(); ++p)
      mae_sum += std::fabs(double(recon.t[p]) - double(target[p]));
    mae_n += target.size();
  }
  result.seg_pixel_accuracy = counted > 0.0 ? correct / counted : 0.0;
  result.synth_mae = mae_n ? mae_sum / double(mae_n) : 0.0;
  return result;
}

/// Builds an initialized (untrained) bundle for a dataset.
inline BackboneBundle make_toy_bundle(const DatasetIndex& index, std::size_t image_h,
                                      std::size_t image_w, const BackboneTrainConfig& cfg) {
  BackboneBundle bundle;
  bundle.num_classes = static_cast<std::size_t>(index.num_classes);
  bundle.image_h = image_h;
  bundle.image_w = image_w;
  bundle.segmentation = std::make_unique<ToySegmentationNet>(bundle.num_classes, image_h, image_w,
                                                             cfg.seg_width);
  bundle.synthesis = std::make_unique<ToySynthesisNet>(bundle.num_classes, image_h / 2, image_w / 2,
                                                       cfg.synth_hidden);
  bundle.features = std::make_unique<FeatureExtractor>(cfg.feature_width);
  bundle.segmentation->init(Rng::mix(cfg.seed, 1));
  bundle.synthesis->init(Rng::mix(cfg.seed, 2));
  bundle.features->init(Rng::mix(cfg.seed, 3));
  return bundle;
}

inline void save_backbones(const std::filesystem::path& dir, BackboneBundle& bundle,
                           const BackboneTrainConfig& cfg, const BackboneTrainResult& result) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json meta;
  meta["kind"] = "toy";
  meta["num_classes"] = bundle.num_classes;
  meta["resolution"] = {bundle.image_h, bundle.image_w};
  meta["seed"] = cfg.seed;
  meta["seg_width"] = cfg.seg_width;
  meta["synth_hidden"] = cfg.synth_hidden;
  meta["feature_width"] = cfg.feature_width;
  meta["feature_mode"] = cfg.feature_mode;
  meta["trained"] = result.trained;
  if (!result.trained) meta["warning"] = "untrained";
  meta["seg_pixel_accuracy"] = result.seg_pixel_accuracy;
  meta["synth_mae"] = result.synth_mae;

  save_checkpoint(dir / "segmentation", bundle.segmentation->params(), meta);
  save_checkpoint(dir / "synthesis", bundle.synthesis->params(), meta);
  save_checkpoint(dir / "features", bundle.features->params(), meta);
  std::ofstream(dir / "backbones.json") << meta.dump(2) << "\n";
}

inline BackboneBundle load_backbones(const std::filesystem::path& dir, const DatasetIndex& index) {
  namespace fs = std::filesystem;
  const fs::path meta_path = dir / "backbones.json";
  if (!fs::exists(meta_path))
    throw std::runtime_error("backbone checkpoint not found: " + meta_path.string());
  nlohmann::json meta;
  std::ifstream(meta_path) >> meta;

  BackboneTrainConfig cfg;
  cfg.seed = meta.at("seed").get<std::uint64_t>();
  cfg.seg_width = meta.at("seg_width").get<std::size_t>();
  cfg.synth_hidden = meta.at("synth_hidden").get<std::size_t>();
  cfg.feature_width = meta.at("feature_width").get<std::size_t>();
  const auto res = meta.at("resolution").get<std::vector<std::size_t>>();
  if (meta.at("num_classes").get<std::size_t>() != static_cast<std::size_t>(index.num_classes))
    throw std::runtime_error("backbone checkpoint class count does not match dataset");

  BackboneBundle bundle = make_toy_bundle(index, res[0], res[1], cfg);
  load_checkpoint(dir / "segmentation", bundle.segmentation->params());
  load_checkpoint(dir / "synthesis", bundle.synthesis->params());
  load_checkpoint(dir / "features", bundle.features->params());
  return bundle;
}

} // namespace anomseg
