#pragma once

#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>

#include <json.hpp>

#include "anomseg/core/tensor_io.hpp"
#include "anomseg/core/types.hpp"
#include "anomseg/nn/adam.hpp"
#include "anomseg/nn/checkpoint.hpp"
#include "anomseg/nn/encoders.hpp"
#include "anomseg/nn/loss.hpp"
#include "anomseg/uncertainty/dispersion.hpp"

namespace anomseg {

/// Named image so stem-keyed adapters (precomputed outputs) can resolve it.
struct NamedImage {
  const RgbImage* image = nullptr;
  std::string stem;
};

/// Segmentation adapter. The public entry points validate resolution on the
/// way in and the softmax invariant on the way out, so any implementation
/// behind the interface yields contract-conforming maps.
class SegmentationBackbone {
public:
  virtual ~SegmentationBackbone() = default;

  virtual std::size_t num_classes() const = 0;
  virtual std::pair<std::size_t, std::size_t> input_resolution() const = 0; // (h, w)

  SoftmaxMap segment(const NamedImage& input) {
    const auto [h, w] = input_resolution();
    if (input.image->height() != h || input.image->width() != w)
      throw std::invalid_argument("segmentation input resolution mismatch: got " +
                                  std::to_string(input.image->height()) + "x" +
                                  std::to_string(input.image->width()) + ", backbone expects " +
                                  std::to_string(h) + "x" + std::to_string(w));
    SoftmaxMap out = do_segment(input);
    if (out.num_classes() != num_classes() || out.height() != h || out.width() != w)
      throw std::runtime_error("segmentation backbone produced wrong output shape");
    out.validate();
    return out;
  }

protected:
  virtual SoftmaxMap do_segment(const NamedImage& input) = 0;
};

struct NamedSemanticMap {
  const SemanticMap* semantic = nullptr;
  std::string stem;
};

/// Synthesis adapter; output shape and range are enforced at the boundary.
class SynthesisBackbone {
public:
  virtual ~SynthesisBackbone() = default;

  virtual std::size_t num_classes() const = 0;
  virtual std::pair<std::size_t, std::size_t> input_resolution() const = 0;

  RgbImage synthesize(const NamedSemanticMap& input) {
    const auto& sem = *input.semantic;
    if (sem.t.size() == 0) throw std::invalid_argument("cannot synthesize an empty semantic map");
    const auto [h, w] = input_resolution();
    if (sem.height() != h || sem.width() != w)
      throw std::invalid_argument("synthesis input resolution mismatch");
    for (std::int32_t v : sem.t.raw())
      if (!((v >= 0 && v < static_cast<std::int32_t>(num_classes())) || v == kVoidClass))
        throw std::invalid_argument("unknown class ID in synthesis input: " + std::to_string(v));
    RgbImage out = do_synthesize(input);
    if (out.height() != h || out.width() != w)
      throw std::runtime_error("synthesis backbone produced wrong output shape");
    out.validate();
    return out;
  }

protected:
  virtual RgbImage do_synthesize(const NamedSemanticMap& input) = 0;
};

// ---------------------------------------------------------------------------
// Toy segmentation: a small FCN (stride-4 trunk, bilinear-upsampled logits).
// Enough receptive field that shapes are classified by context, not just by
// pixel color.
// ---------------------------------------------------------------------------

class ToySegmentationNet : public SegmentationBackbone {
public:
  ToySegmentationNet(std::size_t num_classes, std::size_t height, std::size_t width,
                     std::size_t base_width = 16)
      : num_classes_(num_classes), height_(height), width_(width), base_width_(base_width),
        conv0_(3, base_width, 3, 1, 1, Activation::kRelu),
        conv1_(base_width, base_width * 2, 3, 2, 1, Activation::kRelu),
        conv2_(base_width * 2, base_width * 4, 3, 2, 1, Activation::kRelu),
        conv3_(base_width * 4, base_width * 4, 3, 1, 1, Activation::kRelu),
        head_(base_width * 4, num_classes, 1, 1, 0, Activation::kNone), up_(4) {
    if (height % 4 || width % 4)
      throw std::invalid_argument("toy segmentation resolution must be divisible by 4");
  }

  void init(std::uint64_t seed) {
    Rng rng(Rng::mix(seed, 0x5e67));
    Rng r0 = rng.fork(0), r1 = rng.fork(1), r2 = rng.fork(2), r3 = rng.fork(3), r4 = rng.fork(4);
    conv0_.init(r0);
    conv1_.init(r1);
    conv2_.init(r2);
    conv3_.init(r3);
    head_.init(r4);
  }

  std::size_t num_classes() const override { return num_classes_; }
  std::pair<std::size_t, std::size_t> input_resolution() const override { return {height_, width_}; }

  Tensor<float> forward_logits(const Tensor<float>& image) {
    Tensor<float> h = conv0_.forward(image);
    h = conv1_.forward(h);
    h = conv2_.forward(h);
    h = conv3_.forward(h);
    h = head_.forward(h);
    return up_.forward(h);
  }

  void backward(const Tensor<float>& grad_logits) {
    Tensor<float> g = up_.backward(grad_logits);
    g = head_.backward(g);
    g = conv3_.backward(g);
    g = conv2_.backward(g);
    g = conv1_.backward(g);
    conv0_.backward(g);
  }

  void clear_cache() {
    conv0_.clear_cache();
    conv1_.clear_cache();
    conv2_.clear_cache();
    conv3_.clear_cache();
    head_.clear_cache();
    up_.clear_cache();
  }

  std::vector<NamedParam<float>> params() {
    std::vector<NamedParam<float>> out;
    conv0_.collect_params("seg.conv0", out);
    conv1_.collect_params("seg.conv1", out);
    conv2_.collect_params("seg.conv2", out);
    conv3_.collect_params("seg.conv3", out);
    head_.collect_params("seg.head", out);
    return out;
  }

  std::size_t base_width() const { return base_width_; }

protected:
  SoftmaxMap do_segment(const NamedImage& input) override {
    Tensor<float> logits = forward_logits(input.image->t);
    clear_cache();
    return SoftmaxMap(softmax_from_logits(logits));
  }

private:
  std::size_t num_classes_, height_, width_, base_width_;
  Conv2d<float> conv0_, conv1_, conv2_, conv3_, head_;
  BilinearUpsample<float> up_;
};

// ---------------------------------------------------------------------------
// Toy synthesis: conditional decoder from one-hot semantics (void gets its
// own input channel, i.e. a learned null embedding) to RGB, trained with a
// reconstruction loss rather than adversarially.
// ---------------------------------------------------------------------------

class ToySynthesisNet : public SynthesisBackbone {
public:
  ToySynthesisNet(std::size_t num_classes, std::size_t height, std::size_t width,
                  std::size_t hidden = 32)
      : num_classes_(num_classes), height_(height), width_(width), hidden_(hidden),
        conv0_(num_classes + 1, hidden, 3, 1, 1, Activation::kRelu),
        conv1_(hidden, hidden, 3, 1, 1, Activation::kRelu),
        head_(hidden, 3, 1, 1, 0, Activation::kNone) {}

  void init(std::uint64_t seed) {
    Rng rng(Rng::mix(seed, 0x7a31));
    Rng r0 = rng.fork(0), r1 = rng.fork(1), r2 = rng.fork(2);
    conv0_.init(r0);
    conv1_.init(r1);
    head_.init(r2);
  }

  std::size_t num_classes() const override { return num_classes_; }
  std::pair<std::size_t, std::size_t> input_resolution() const override { return {height_, width_}; }

  /// One-hot with a dedicated void channel at index num_classes.
  Tensor<float> encode_semantic(const SemanticMap& sem) const {
    Tensor<float> onehot({num_classes_ + 1, sem.height(), sem.width()});
    const std::size_t hw = sem.height() * sem.width();
    for (std::size_t p = 0; p < hw; ++p) {
      const std::int32_t v = sem.t[p];
      const std::size_t ch = (v == kVoidClass) ? num_classes_ : static_cast<std::size_t>(v);
      onehot[ch * hw + p] = 1.0f;
    }
    return onehot;
  }

  Tensor<float> forward(const Tensor<float>& onehot) {
    Tensor<float> h = conv0_.forward(onehot);
    h = conv1_.forward(h);
    h = head_.forward(h);
    return sigmoid_.forward(h);
  }

  void backward(const Tensor<float>& grad_rgb) {
    Tensor<float> g = sigmoid_.backward(grad_rgb);
    g = head_.backward(g);
    g = conv1_.backward(g);
    conv0_.backward(g);
  }

  void clear_cache() {
    conv0_.clear_cache();
    conv1_.clear_cache();
    head_.clear_cache();
    sigmoid_.clear_cache();
  }

  std::vector<NamedParam<float>> params() {
    std::vector<NamedParam<float>> out;
    conv0_.collect_params("synth.conv0", out);
    conv1_.collect_params("synth.conv1", out);
    head_.collect_params("synth.head", out);
    return out;
  }

  std::size_t hidden() const { return hidden_; }

protected:
  RgbImage do_synthesize(const NamedSemanticMap& input) override {
    Tensor<float> rgb = forward(encode_semantic(*input.semantic));
    clear_cache();
    for (float& v : rgb.raw()) v = std::clamp(v, 0.0f, 1.0f);
    return RgbImage(std::move(rgb));
  }

private:
  std::size_t num_classes_, height_, width_, hidden_;
  Conv2d<float> conv0_, conv1_, head_;
  SigmoidLayer<float> sigmoid_;
};

// ---------------------------------------------------------------------------
// Precomputed adapters: outputs stored as <dir>/<stem>.tsr, so real-network
// predictions can be dropped into the pipeline without porting the networks.
// ---------------------------------------------------------------------------

class PrecomputedSegmentation : public SegmentationBackbone {
public:
  PrecomputedSegmentation(std::filesystem::path dir, std::size_t num_classes, std::size_t height,
                          std::size_t width)
      : dir_(std::move(dir)), num_classes_(num_classes), height_(height), width_(width) {}

  std::size_t num_classes() const override { return num_classes_; }
  std::pair<std::size_t, std::size_t> input_resolution() const override { return {height_, width_}; }

protected:
  SoftmaxMap do_segment(const NamedImage& input) override {
    const auto path = dir_ / (input.stem + ".tsr");
    if (!std::filesystem::exists(path))
      throw std::runtime_error("no stored output for stem '" + input.stem + "' in " + dir_.string());
    return SoftmaxMap(load_tensor<float>(path));
  }

private:
  std::filesystem::path dir_;
  std::size_t num_classes_, height_, width_;
};

class PrecomputedSynthesis : public SynthesisBackbone {
public:
  PrecomputedSynthesis(std::filesystem::path dir, std::size_t num_classes, std::size_t height,
                       std::size_t width)
      : dir_(std::move(dir)), num_classes_(num_classes), height_(height), width_(width) {}

  std::size_t num_classes() const override { return num_classes_; }
  std::pair<std::size_t, std::size_t> input_resolution() const override { return {height_, width_}; }

protected:
  RgbImage do_synthesize(const NamedSemanticMap& input) override {
    const auto path = dir_ / (input.stem + ".tsr");
    if (!std::filesystem::exists(path))
      throw std::runtime_error("no stored output for stem '" + input.stem + "' in " + dir_.string());
    return RgbImage(load_tensor<float>(path));
  }

private:
  std::filesystem::path dir_;
  std::size_t num_classes_, height_, width_;
};

// ---------------------------------------------------------------------------
// Feature extractor for the perceptual difference: the VGG-style pyramid with
// channels (64,128,256,512) at strides (1,2,4,8) by default. Weights are
// either seeded random projections (self-contained default) or loaded from a
// checkpoint produced by the brief classification training.
// ---------------------------------------------------------------------------

class FeatureExtractor {
public:
  explicit FeatureExtractor(std::size_t base_width = 64, std::size_t levels = 4,
                            PyramidTaps taps = PyramidTaps::kBlockEnd)
      : base_width_(base_width), levels_(levels), encoder_(3, base_width, levels, taps) {}

  void init(std::uint64_t seed) {
    Rng rng(Rng::mix(seed, 0xfea7));
    encoder_.init(rng);
  }

  FeaturePyramid extract(const RgbImage& image) {
    if (image.height() % (std::size_t(1) << (levels_ - 1)) ||
        image.width() % (std::size_t(1) << (levels_ - 1)))
      throw std::invalid_argument("feature extractor input must be divisible by the stride ladder");
    FeaturePyramid pyr = encoder_.forward(image.t);
    encoder_.clear_cache();
    pyr.validate();
    return pyr;
  }

  VggEncoder<float>& encoder() { return encoder_; }

  std::vector<NamedParam<float>> params() {
    std::vector<NamedParam<float>> out;
    encoder_.collect_params("features", out);
    return out;
  }

  std::size_t base_width() const { return base_width_; }
  std::size_t levels() const { return levels_; }

private:
  std::size_t base_width_, levels_;
  VggEncoder<float> encoder_;
};

} // namespace anomseg
