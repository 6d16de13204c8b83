#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "anomseg/core/resize.hpp"
#include "anomseg/core/types.hpp"
#include "anomseg/nn/encoders.hpp"
#include "anomseg/nn/layers.hpp"
#include "anomseg/nn/spade.hpp"

namespace anomseg {

/// The four aligned inputs of the dissimilarity module, all at the
/// dissimilarity resolution. Uncertainty channels are the stacked dispersion
/// maps (entropy, distance, perceptual), each in [0,1].
template <typename T>
struct DissimilarityInputsT {
  Tensor<T> image;           // (3,H,W)
  Tensor<T> synthesized;     // (3,H,W)
  Tensor<T> semantic_onehot; // (C,H,W); void pixels are all-zero columns
  Tensor<T> uncertainty;     // (3,H,W)

  void validate(std::size_t num_classes) const {
    if (image.rank() != 3 || image.dim(0) != 3) throw std::invalid_argument("image must be (3,H,W)");
    const std::size_t h = image.dim(1), w = image.dim(2);
    const auto expect = [&](const Tensor<T>& t, std::size_t c, const char* name) {
      if (t.rank() != 3 || t.dim(0) != c || t.dim(1) != h || t.dim(2) != w)
        throw std::invalid_argument(std::string(name) + " shape mismatch: got " +
                                    shape_string(t.shape()));
    };
    expect(synthesized, 3, "synthesized");
    expect(semantic_onehot, num_classes, "semantic_onehot");
    expect(uncertainty, 3, "uncertainty");
    for (const T& v : uncertainty.raw())
      if (!(v >= T(0) && v <= T(1))) throw std::invalid_argument("uncertainty channels must lie in [0,1]");
  }
};
using DissimilarityInputs = DissimilarityInputsT<float>;

struct DissimilarityNetSpec {
  std::size_t num_classes = 4; // semantic one-hot channels
  std::size_t base_width = 64; // paper-scale widths at 64
  std::size_t levels = 4;      // pyramid depth (2..4)
  bool use_uncertainty = true; // gate fusion maps with uncertainty features
  std::array<float, 3> norm_mean = {0.5f, 0.5f, 0.5f}; // image/synth normalization
  std::array<float, 3> norm_std = {0.5f, 0.5f, 0.5f};

  void validate() const {
    if (num_classes == 0) throw std::invalid_argument("dissimilarity spec needs at least one class");
    if (base_width < 2 || base_width % 2)
      throw std::invalid_argument("base width must be even and >= 2 (zero-channel specs are invalid)");
    if (levels < 2 || levels > 4) throw std::invalid_argument("levels must be 2..4");
    for (float s : norm_std)
      if (s <= 0.0f) throw std::invalid_argument("normalization std must be positive");
  }

  std::string arch_string() const {
    return "dissim/v1:C=" + std::to_string(num_classes) + ",W=" + std::to_string(base_width) +
           ",L=" + std::to_string(levels) + ",unc=" + (use_uncertainty ? "1" : "0");
  }

  /// Channels of the map-encoder pyramid (semantic / uncertainty) per level;
  /// fusion outputs match these so the element-wise correlation type-checks.
  std::size_t fused_channels(std::size_t level) const { return (base_width / 2) << level; }
  /// Channels of the image-encoder pyramid per level.
  std::size_t image_channels(std::size_t level) const { return base_width << level; }
};

/// Spatial-aware dissimilarity network.
///
/// Per level: concat(image, synthesized, semantic features) -> 1x1 conv down
/// to the uncertainty-encoder width -> element-wise product with the
/// uncertainty features ("correlation"). The decoder consumes the lowest
/// level first; each block concatenates the next fusion map with the
/// upsampled previous output, normalizes with SPADE against the semantic map
/// and ends in a 2-filter 1x1 head; the anomaly score is the softmax
/// probability of channel 1.
///
/// The image and synthesized branches share one encoder object, so their
/// weights are identical by construction, before and after every update.
template <typename T>
class DissimilarityNetT {
public:
  explicit DissimilarityNetT(const DissimilarityNetSpec& spec) : spec_(spec) {
    spec_.validate();
    const std::size_t L = spec_.levels, W = spec_.base_width, C = spec_.num_classes;
    image_encoder_ = VggEncoder<T>(3, W, L, PyramidTaps::kBlockEnd);
    semantic_encoder_ = MapEncoder<T>(C, W, L, /*with_bias=*/true);
    // Bias-free on purpose: a zero uncertainty stack must produce exactly
    // zero features so the fusion gate closes, whatever the trained weights.
    uncertainty_encoder_ = MapEncoder<T>(3, W, L, /*with_bias=*/false);

    for (std::size_t l = 0; l < L; ++l) {
      const std::size_t concat_ch = 2 * spec_.image_channels(l) + spec_.fused_channels(l);
      fusion_.emplace_back(concat_ch, spec_.fused_channels(l), 1, 1, 0, Activation::kNone);
    }

    // Decoder channel plan, bottom block first, in units of base width. The
    // four-level plan mirrors the reference architecture (256/384/192 heads,
    // transposed filters halving 256->128); shallower nets reuse its tail
    // behaviour with the same head sizing.
    struct Plan {
      std::size_t f1, f2;
      bool head;
    };
    std::vector<Plan> plan;
    if (L == 4)
      plan = {{4 * W, 4 * W, false}, {4 * W, 4 * W, false}, {6 * W, 2 * W, false}, {3 * W, W, true}};
    else if (L == 3)
      plan = {{4 * W, 4 * W, false}, {6 * W, 2 * W, false}, {3 * W, W, true}};
    else
      plan = {{4 * W, 4 * W, false}, {3 * W, W, true}};

    std::size_t carry = 0;
    for (std::size_t b = 0; b < plan.size(); ++b) {
      const std::size_t level = L - 1 - b;
      const std::size_t in_ch = spec_.fused_channels(level) + carry;
      DecoderBlock block;
      block.conv_a = Conv2d<T>(in_ch, plan[b].f1, 3, 1, 1, Activation::kRelu);
      block.spade_a = SpadeNorm<T>(plan[b].f1, C, std::max<std::size_t>(2, W / 2));
      block.conv_b = Conv2d<T>(plan[b].f1, plan[b].f2, 3, 1, 1, Activation::kRelu);
      block.spade_b = SpadeNorm<T>(plan[b].f2, C, std::max<std::size_t>(2, W / 2));
      if (plan[b].head) {
        block.head = Conv2d<T>(plan[b].f2, 2, 1, 1, 0, Activation::kNone);
      } else {
        block.up = ConvTranspose2d<T>(plan[b].f2, plan[b].f2);
        carry = plan[b].f2;
      }
      decoder_.push_back(std::move(block));
    }
  }

  const DissimilarityNetSpec& spec() const { return spec_; }

  void init(std::uint64_t seed) {
    Rng master(Rng::mix(seed, 0xd155));
    Rng r_img = master.fork(1), r_sem = master.fork(2), r_unc = master.fork(3);
    image_encoder_.init(r_img);
    semantic_encoder_.init(r_sem);
    uncertainty_encoder_.init(r_unc);
    for (std::size_t l = 0; l < fusion_.size(); ++l) {
      Rng r = master.fork(16 + l);
      fusion_[l].init(r); // lecun weights, zero bias
    }
    for (std::size_t b = 0; b < decoder_.size(); ++b) {
      Rng ra = master.fork(32 + 8 * b), rb = master.fork(33 + 8 * b), rs1 = master.fork(34 + 8 * b),
          rs2 = master.fork(35 + 8 * b), ru = master.fork(36 + 8 * b);
      decoder_[b].conv_a.init(ra);
      decoder_[b].conv_b.init(rb);
      decoder_[b].spade_a.init(rs1);
      decoder_[b].spade_b.init(rs2);
      if (decoder_[b].head)
        decoder_[b].head->init(ru);
      else
        decoder_[b].up->init(ru);
    }
  }

  /// Forward pass to 2-channel logits at input resolution. Keeps caches for
  /// one backward() call.
  Tensor<T> forward(const DissimilarityInputsT<T>& inputs) {
    inputs.validate(spec_.num_classes);
    const std::size_t h = inputs.image.dim(1), w = inputs.image.dim(2);
    const std::size_t down = std::size_t(1) << (spec_.levels - 1);
    if (h % down || w % down)
      throw std::invalid_argument("input resolution must be divisible by " + std::to_string(down));

    fwd_ = ForwardState{};
    const Tensor<T> img_n = normalize_rgb(inputs.image);
    const Tensor<T> syn_n = normalize_rgb(inputs.synthesized);
    // Shared encoder: image first, synthesized second (backward pops in
    // reverse order).
    FeaturePyramidT<T> img_pyr = image_encoder_.forward(img_n);
    FeaturePyramidT<T> syn_pyr = image_encoder_.forward(syn_n);
    FeaturePyramidT<T> sem_pyr = semantic_encoder_.forward(inputs.semantic_onehot);
    FeaturePyramidT<T> unc_pyr;
    if (spec_.use_uncertainty) unc_pyr = uncertainty_encoder_.forward(inputs.uncertainty);

    fwd_.fused.resize(spec_.levels);
    fwd_.fusion_pre.resize(spec_.levels);
    fwd_.unc_features.resize(spec_.levels);
    for (std::size_t l = 0; l < spec_.levels; ++l) {
      const auto& fi = img_pyr.levels[l].features;
      const auto& fs = syn_pyr.levels[l].features;
      const auto& fm = sem_pyr.levels[l].features;
      if (fi.dim(1) != fm.dim(1) || fi.dim(2) != fm.dim(2))
        throw std::invalid_argument("fusion shape mismatch at level " + std::to_string(l) + ": " +
                                    shape_string(fi.shape()) + " vs " + shape_string(fm.shape()));
      const Tensor<T> cat = concat_channels<T>({&fi, &fs, &fm});
      Tensor<T> fused = fusion_[l].forward(cat);
      if (spec_.use_uncertainty) {
        const auto& fu = unc_pyr.levels[l].features;
        if (fu.shape() != fused.shape())
          throw std::invalid_argument("uncertainty correlation shape mismatch at level " +
                                      std::to_string(l));
        fwd_.fusion_pre[l] = fused;
        fwd_.unc_features[l] = fu;
        for (std::size_t i = 0; i < fused.size(); ++i) fused[i] *= fu[i];
      }
      fwd_.fused[l] = std::move(fused);
    }

    // Semantic maps for SPADE at every working resolution (nearest: labels
    // must not be interpolated).
    fwd_.seg_at_level.resize(spec_.levels);
    for (std::size_t l = 0; l < spec_.levels; ++l)
      fwd_.seg_at_level[l] = (l == 0) ? inputs.semantic_onehot
                                      : resize(inputs.semantic_onehot, h >> l, w >> l, ResizeMode::kNearest);

    Tensor<T> x;
    for (std::size_t b = 0; b < decoder_.size(); ++b) {
      const std::size_t level = spec_.levels - 1 - b;
      if (b == 0) {
        x = fwd_.fused[level];
      } else {
        x = concat_channels<T>({&fwd_.fused[level], &x});
      }
      auto& blk = decoder_[b];
      const Tensor<T>& seg = fwd_.seg_at_level[level];
      x = blk.conv_a.forward(x);
      x = blk.spade_a.forward(x, seg);
      Tensor<T> s1 = selu_forward(x);
      fwd_.selu_outs.push_back(s1);
      x = blk.conv_b.forward(s1);
      x = blk.spade_b.forward(x, seg);
      Tensor<T> s2 = selu_forward(x);
      fwd_.selu_outs.push_back(s2);
      x = blk.head ? blk.head->forward(s2) : blk.up->forward(s2);
    }
    return x; // (2,H,W) logits
  }

  /// Backward from d(loss)/d(logits); accumulates parameter gradients.
  void backward(const Tensor<T>& grad_logits) {
    Tensor<T> g = grad_logits;
    std::vector<Tensor<T>> grad_fused(spec_.levels);
    for (std::size_t b = decoder_.size(); b-- > 0;) {
      auto& blk = decoder_[b];
      const std::size_t level = spec_.levels - 1 - b;
      g = blk.head ? blk.head->backward(g) : blk.up->backward(g);
      const Tensor<T> s2 = std::move(fwd_.selu_outs.back());
      fwd_.selu_outs.pop_back();
      g = selu_backward(g, s2);
      g = blk.spade_b.backward(g);
      g = blk.conv_b.backward(g);
      const Tensor<T> s1 = std::move(fwd_.selu_outs.back());
      fwd_.selu_outs.pop_back();
      g = selu_backward(g, s1);
      g = blk.spade_a.backward(g);
      g = blk.conv_a.backward(g);
      if (b == 0) {
        grad_fused[level] = std::move(g);
      } else {
        auto parts = split_channels(g, {fwd_.fused[level].dim(0), g.dim(0) - fwd_.fused[level].dim(0)});
        grad_fused[level] = std::move(parts[0]);
        g = std::move(parts[1]);
      }
    }

    std::vector<Tensor<T>> grad_img(spec_.levels), grad_syn(spec_.levels), grad_sem(spec_.levels),
        grad_unc(spec_.levels);
    for (std::size_t l = 0; l < spec_.levels; ++l) {
      Tensor<T> gf = std::move(grad_fused[l]);
      if (spec_.use_uncertainty) {
        grad_unc[l] = Tensor<T>(gf.shape());
        for (std::size_t i = 0; i < gf.size(); ++i) {
          grad_unc[l][i] = gf[i] * fwd_.fusion_pre[l][i];
          gf[i] *= fwd_.unc_features[l][i];
        }
      }
      Tensor<T> gcat = fusion_[l].backward(gf);
      const std::size_t ic = spec_.image_channels(l);
      auto parts = split_channels(gcat, {ic, ic, spec_.fused_channels(l)});
      grad_img[l] = std::move(parts[0]);
      grad_syn[l] = std::move(parts[1]);
      grad_sem[l] = std::move(parts[2]);
    }

    if (spec_.use_uncertainty) uncertainty_encoder_.backward(grad_unc);
    semantic_encoder_.backward(grad_sem);
    image_encoder_.backward(grad_syn); // synthesized branch was pushed last
    image_encoder_.backward(grad_img);
    fwd_ = ForwardState{};
  }

  /// Anomaly probability map from logits (softmax channel 1); values in [0,1].
  static Tensor<T> score_from_logits(const Tensor<T>& logits) {
    if (logits.rank() != 3 || logits.dim(0) != 2)
      throw std::invalid_argument("expected 2-channel logits");
    const std::size_t hw = logits.dim(1) * logits.dim(2);
    Tensor<T> score({logits.dim(1), logits.dim(2)});
    for (std::size_t p = 0; p < hw; ++p) {
      const double a = static_cast<double>(logits[p]);
      const double b = static_cast<double>(logits[hw + p]);
      const double m = std::max(a, b);
      const double ea = std::exp(a - m), eb = std::exp(b - m);
      score[p] = static_cast<T>(eb / (ea + eb));
    }
    return score;
  }

  /// Convenience: forward + softmax, caches cleared (inference).
  Tensor<T> score(const DissimilarityInputsT<T>& inputs) {
    Tensor<T> logits = forward(inputs);
    clear_cache();
    return score_from_logits(logits);
  }

  /// Fusion maps of the last forward() call (kept until backward/clear);
  /// exposed for the wiring tests.
  const std::vector<Tensor<T>>& last_fused() const { return fwd_.fused; }

  std::vector<NamedParam<T>> params() {
    std::vector<NamedParam<T>> out;
    image_encoder_.collect_params("image_encoder", out); // shared with the synthesized branch
    semantic_encoder_.collect_params("semantic_encoder", out);
    if (spec_.use_uncertainty) uncertainty_encoder_.collect_params("uncertainty_encoder", out);
    for (std::size_t l = 0; l < fusion_.size(); ++l)
      fusion_[l].collect_params("fusion.level" + std::to_string(l), out);
    for (std::size_t b = 0; b < decoder_.size(); ++b) {
      const std::string p = "decoder.block" + std::to_string(b);
      decoder_[b].conv_a.collect_params(p + ".conv_a", out);
      decoder_[b].spade_a.collect_params(p + ".spade_a", out);
      decoder_[b].conv_b.collect_params(p + ".conv_b", out);
      decoder_[b].spade_b.collect_params(p + ".spade_b", out);
      if (decoder_[b].head)
        decoder_[b].head->collect_params(p + ".head", out);
      else
        decoder_[b].up->collect_params(p + ".up", out);
    }
    return out;
  }

  void clear_cache() {
    image_encoder_.clear_cache();
    semantic_encoder_.clear_cache();
    uncertainty_encoder_.clear_cache();
    for (auto& f : fusion_) f.clear_cache();
    for (auto& b : decoder_) {
      b.conv_a.clear_cache();
      b.conv_b.clear_cache();
      b.spade_a.clear_cache();
      b.spade_b.clear_cache();
      if (b.head) b.head->clear_cache();
      if (b.up) b.up->clear_cache();
    }
    fwd_ = ForwardState{};
  }

private:
  Tensor<T> normalize_rgb(const Tensor<T>& x) const {
    Tensor<T> out(x.shape());
    const std::size_t hw = x.dim(1) * x.dim(2);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < hw; ++p)
        out[c * hw + p] =
            (x[c * hw + p] - static_cast<T>(spec_.norm_mean[c])) / static_cast<T>(spec_.norm_std[c]);
    return out;
  }

  struct DecoderBlock {
    Conv2d<T> conv_a, conv_b;
    SpadeNorm<T> spade_a, spade_b;
    std::optional<ConvTranspose2d<T>> up;
    std::optional<Conv2d<T>> head;
  };

  struct ForwardState {
    std::vector<Tensor<T>> fused, fusion_pre, unc_features, seg_at_level, selu_outs;
  };

  DissimilarityNetSpec spec_;
  VggEncoder<T> image_encoder_;
  MapEncoder<T> semantic_encoder_, uncertainty_encoder_;
  std::vector<Conv2d<T>> fusion_;
  std::vector<DecoderBlock> decoder_;
  ForwardState fwd_;
};

using DissimilarityNet = DissimilarityNetT<float>;

/// Deterministic construction + seeded initialization.
template <typename T = float>
DissimilarityNetT<T> init_dissimilarity_net(const DissimilarityNetSpec& spec, std::uint64_t seed) {
  DissimilarityNetT<T> net(spec);
  net.init(seed);
  return net;
}

} // namespace anomseg
