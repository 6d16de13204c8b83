#pragma once

#include <chrono>
#include <map>
#include <string>
#include <utility>

#include "anomseg/backbones/backbones.hpp"
#include "anomseg/backbones/training.hpp"
#include "anomseg/core/resize.hpp"
#include "anomseg/core/types.hpp"
#include "anomseg/dissimilarity/net.hpp"
#include "anomseg/ensemble/ensemble.hpp"
#include "anomseg/uncertainty/dispersion.hpp"

namespace anomseg {

/// Resolution ladder: segmentation at (h,w), synthesis at half, the
/// dissimilarity module at a quarter.
struct ResolutionLadder {
  std::size_t image_h = 128, image_w = 256;

  std::pair<std::size_t, std::size_t> image() const { return {image_h, image_w}; }
  std::pair<std::size_t, std::size_t> synthesis() const { return {image_h / 2, image_w / 2}; }
  std::pair<std::size_t, std::size_t> dissimilarity() const { return {image_h / 4, image_w / 4}; }

  void validate() const {
    if (image_h % 32 || image_w % 32)
      throw std::invalid_argument("image resolution must be divisible by 32 so the 1:1/2:1/4 "
                                  "ladder and the stride-8 pyramids line up");
  }
};

struct StageTimer {
  std::map<std::string, double> ms;

  template <typename F>
  auto time(const std::string& stage, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    auto result = f();
    const auto t1 = std::chrono::steady_clock::now();
    ms[stage] += std::chrono::duration<double, std::milli>(t1 - t0).count();
    return result;
  }
};

/// Everything the per-image front half of the pipeline produces before the
/// dissimilarity network runs.
struct StageArtifacts {
  SoftmaxMap softmax;          // image resolution
  SemanticMap predicted;       // argmax of softmax
  RgbImage synthesized;        // synthesis resolution
  DispersionMap entropy;       // image resolution
  DispersionMap distance;      // image resolution
  DispersionMap perceptual;    // dissimilarity resolution
  DissimilarityInputs inputs;  // dissimilarity resolution
};

/// Runs synthesis, dispersion maps and input assembly for one image, given
/// its softmax. `semantic_for_synthesis` is the map actually synthesized and
/// fed to the network: the predicted map at inference, an altered
/// ground-truth map for swap-generated training samples.
inline StageArtifacts compute_stage_artifacts(BackboneBundle& backbones, const RgbImage& image,
                                              const std::string& stem, const SoftmaxMap& softmax,
                                              const SemanticMap& semantic_for_synthesis,
                                              const ResolutionLadder& ladder,
                                              const PerceptualConfig& perceptual_cfg,
                                              StageTimer* timer = nullptr) {
  ladder.validate();
  StageTimer local;
  StageTimer& t = timer ? *timer : local;

  StageArtifacts art;
  art.softmax = softmax;
  art.predicted = argmax_semantic(art.softmax);

  art.synthesized = t.time("synthesis", [&] {
    const auto [sh, sw] = ladder.synthesis();
    SemanticMap synth_in;
    synth_in.t = resize(semantic_for_synthesis.t, sh, sw, ResizeMode::kNearest);
    synth_in.num_classes = semantic_for_synthesis.num_classes;
    return backbones.synthesis->synthesize({&synth_in, stem});
  });

  struct Disp {
    DispersionMap entropy, distance;
  };
  Disp disp = t.time("uncertainty", [&] {
    return Disp{softmax_entropy(art.softmax), softmax_distance(art.softmax)};
  });
  art.entropy = std::move(disp.entropy);
  art.distance = std::move(disp.distance);

  const auto [dh, dw] = ladder.dissimilarity();
  Tensor<float> image_d = resize(image.t, dh, dw, ResizeMode::kBilinear);
  Tensor<float> synth_d = resize(art.synthesized.t, dh, dw, ResizeMode::kBilinear);
  art.perceptual = t.time("perceptual", [&] {
    const FeaturePyramid pyr_x = backbones.features->extract(RgbImage(Tensor<float>(image_d)));
    const FeaturePyramid pyr_r = backbones.features->extract(RgbImage(Tensor<float>(synth_d)));
    return perceptual_difference(pyr_x, pyr_r, perceptual_cfg);
  });

  const auto as_channel = [&](const Tensor<float>& m) {
    Tensor<float> c({1, dh, dw});
    std::copy(m.data(), m.data() + m.size(), c.data());
    return c;
  };
  const Tensor<float> entropy_d = as_channel(resize(art.entropy.t, dh, dw, ResizeMode::kBilinear));
  const Tensor<float> distance_d = as_channel(resize(art.distance.t, dh, dw, ResizeMode::kBilinear));
  const Tensor<float> perceptual_d = as_channel(art.perceptual.t);
  SemanticMap sem_d;
  sem_d.t = resize(semantic_for_synthesis.t, dh, dw, ResizeMode::kNearest);
  sem_d.num_classes = semantic_for_synthesis.num_classes;

  art.inputs.image = std::move(image_d);
  art.inputs.synthesized = std::move(synth_d);
  art.inputs.semantic_onehot = one_hot(sem_d, backbones.num_classes);
  art.inputs.uncertainty = concat_channels<float>({&entropy_d, &distance_d, &perceptual_d});
  return art;
}

/// The three dispersion maps at dissimilarity resolution as used in the
/// ensemble, pulled back out of the assembled input stack.
inline std::array<Tensor<float>, 3> dispersion_channels(const DissimilarityInputs& inputs) {
  auto parts = split_channels(inputs.uncertainty, {1, 1, 1});
  std::array<Tensor<float>, 3> out;
  for (std::size_t i = 0; i < 3; ++i) {
    Tensor<float> m({inputs.uncertainty.dim(1), inputs.uncertainty.dim(2)});
    std::copy(parts[i].data(), parts[i].data() + parts[i].size(), m.data());
    out[i] = std::move(m);
  }
  return out;
}

/// Assembles the four ensemble maps for one image from the network score and
/// the dispersion channels.
inline ScoreMapSet make_score_set(const Tensor<float>& dissim_score,
                                  const DissimilarityInputs& inputs, const std::string& stem) {
  ScoreMapSet set;
  set.stem = stem;
  auto disp = dispersion_channels(inputs);
  set.maps[kMapDissimilarity] = dissim_score;
  set.maps[kMapEntropy] = std::move(disp[0]);
  set.maps[kMapDistance] = std::move(disp[1]);
  set.maps[kMapPerceptual] = std::move(disp[2]);
  return set;
}

} // namespace anomseg
