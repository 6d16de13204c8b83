#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "anomseg/core/resize.hpp"
#include "anomseg/core/types.hpp"
#include "anomseg/nn/layers.hpp"

namespace anomseg {

enum class PyramidTaps {
  kBlockEnd,  // end of each conv block, strides 1,2,4,8
  kAfterPool, // after each pooling layer plus the final block, strides 2,4,8,8
};

/// VGG16-style feature encoder: conv blocks of 2,2,3,3 layers with channel
/// widths W,2W,4W,8W, separated by 2x2 max pooling. Emits one feature map per
/// level. Shared-weight reuse works by calling forward() once per input and
/// walking backward() in reverse call order.
template <typename T>
class VggEncoder {
public:
  VggEncoder() = default;
  VggEncoder(std::size_t in_ch, std::size_t base_width, std::size_t levels,
             PyramidTaps taps = PyramidTaps::kBlockEnd)
      : levels_(levels), taps_(taps) {
    if (levels < 2 || levels > 4) throw std::invalid_argument("encoder levels must be 2..4");
    if (base_width < 2) throw std::invalid_argument("encoder base width must be at least 2");
    static constexpr std::size_t depth[4] = {2, 2, 3, 3};
    std::size_t ch_in = in_ch;
    for (std::size_t b = 0; b < levels_; ++b) {
      const std::size_t ch_out = base_width << b;
      std::vector<Conv2d<T>> block;
      for (std::size_t l = 0; l < depth[b]; ++l) {
        block.emplace_back(l == 0 ? ch_in : ch_out, ch_out, 3, 1, 1, Activation::kRelu);
      }
      blocks_.push_back(std::move(block));
      ch_in = ch_out;
      if (b + 1 < levels_) pools_.emplace_back();
    }
  }

  void init(Rng& rng) {
    std::size_t k = 0;
    for (auto& block : blocks_)
      for (auto& conv : block) {
        Rng layer_rng = rng.fork(k++);
        conv.init(layer_rng);
      }
  }

  std::size_t levels() const { return levels_; }

  std::size_t level_channels(std::size_t level, std::size_t base_width) const {
    return base_width << level;
  }

  FeaturePyramidT<T> forward(const Tensor<T>& x) {
    FeaturePyramidT<T> pyr;
    Tensor<T> h = x;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      for (auto& conv : blocks_[b]) h = conv.forward(h);
      if (taps_ == PyramidTaps::kBlockEnd)
        pyr.levels.push_back({std::size_t(1) << b, h});
      if (b + 1 < blocks_.size()) {
        h = pools_[b].forward(h);
        if (taps_ == PyramidTaps::kAfterPool)
          pyr.levels.push_back({std::size_t(1) << (b + 1), h});
      }
    }
    if (taps_ == PyramidTaps::kAfterPool)
      pyr.levels.push_back({std::size_t(1) << (blocks_.size() - 1), h});
    return pyr;
  }

  /// grad_levels must align with the pyramid this encoder produced in its
  /// matching forward() call (LIFO when shared).
  Tensor<T> backward(const std::vector<Tensor<T>>& grad_levels) {
    if (grad_levels.size() != levels_for_taps())
      throw std::invalid_argument("encoder backward expects one grad per level");
    Tensor<T> g;
    if (taps_ == PyramidTaps::kBlockEnd) {
      for (std::size_t bi = blocks_.size(); bi-- > 0;) {
        Tensor<T> gb = grad_levels[bi];
        if (bi + 1 < blocks_.size()) {
          Tensor<T> gp = pools_[bi].backward(g);
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gp[i];
        }
        for (std::size_t li = blocks_[bi].size(); li-- > 0;) gb = blocks_[bi][li].backward(gb);
        g = std::move(gb);
      }
    } else {
      // last grad attaches to the final block output; earlier ones to pool outputs
      g = grad_levels.back();
      for (std::size_t bi = blocks_.size(); bi-- > 0;) {
        Tensor<T> gb = std::move(g);
        for (std::size_t li = blocks_[bi].size(); li-- > 0;) gb = blocks_[bi][li].backward(gb);
        if (bi == 0) {
          g = std::move(gb);
          break;
        }
        Tensor<T> gp = pools_[bi - 1].backward(gb);
        const Tensor<T>& inj = grad_levels[bi - 1];
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += inj[i];
        g = std::move(gp);
      }
    }
    return g;
  }

  void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    for (std::size_t b = 0; b < blocks_.size(); ++b)
      for (std::size_t l = 0; l < blocks_[b].size(); ++l)
        blocks_[b][l].collect_params(prefix + ".block" + std::to_string(b) + ".conv" + std::to_string(l),
                                     out);
  }

  void clear_cache() {
    for (auto& block : blocks_)
      for (auto& conv : block) conv.clear_cache();
    for (auto& p : pools_) p.clear_cache();
  }

private:
  std::size_t levels_for_taps() const { return levels_; }

  std::size_t levels_ = 0;
  PyramidTaps taps_ = PyramidTaps::kBlockEnd;
  std::vector<std::vector<Conv2d<T>>> blocks_;
  std::vector<MaxPool2d<T>> pools_;
};

/// Compact encoder for semantic / dispersion inputs: a 7x7 stem followed by
/// stride-2 3x3 convolutions, one feature map per layer (strides 1,2,4,8).
/// `with_bias=false` makes the map zero-preserving: an all-zero input yields
/// all-zero features at every level, which the fusion gate test relies on.
template <typename T>
class MapEncoder {
public:
  MapEncoder() = default;
  MapEncoder(std::size_t in_ch, std::size_t base_width, std::size_t levels, bool with_bias)
      : levels_(levels) {
    if (levels < 2 || levels > 4) throw std::invalid_argument("encoder levels must be 2..4");
    if (base_width < 2 || base_width % 2 != 0)
      throw std::invalid_argument("encoder base width must be even and >= 2");
    std::size_t ch_in = in_ch;
    for (std::size_t l = 0; l < levels_; ++l) {
      const std::size_t ch_out = (base_width / 2) << l;
      if (l == 0)
        convs_.emplace_back(ch_in, ch_out, 7, 1, 3, Activation::kRelu, with_bias);
      else
        convs_.emplace_back(ch_in, ch_out, 3, 2, 1, Activation::kRelu, with_bias);
      ch_in = ch_out;
    }
  }

  void init(Rng& rng) {
    for (std::size_t l = 0; l < convs_.size(); ++l) {
      Rng layer_rng = rng.fork(l);
      convs_[l].init(layer_rng);
    }
  }

  std::size_t channels_at(std::size_t level, std::size_t base_width) const {
    return (base_width / 2) << level;
  }

  FeaturePyramidT<T> forward(const Tensor<T>& x) {
    FeaturePyramidT<T> pyr;
    Tensor<T> h = x;
    for (std::size_t l = 0; l < convs_.size(); ++l) {
      h = convs_[l].forward(h);
      pyr.levels.push_back({std::size_t(1) << l, h});
    }
    return pyr;
  }

  Tensor<T> backward(const std::vector<Tensor<T>>& grad_levels) {
    if (grad_levels.size() != convs_.size())
      throw std::invalid_argument("encoder backward expects one grad per level");
    Tensor<T> g = grad_levels.back();
    for (std::size_t l = convs_.size(); l-- > 0;) {
      Tensor<T> gi = convs_[l].backward(g);
      if (l > 0) {
        g = grad_levels[l - 1];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gi[i];
      } else {
        g = std::move(gi);
      }
    }
    return g;
  }

  void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    for (std::size_t l = 0; l < convs_.size(); ++l)
      convs_[l].collect_params(prefix + ".conv" + std::to_string(l), out);
  }

  void clear_cache() {
    for (auto& conv : convs_) conv.clear_cache();
  }

private:
  std::size_t levels_ = 0;
  std::vector<Conv2d<T>> convs_;
};

/// Fixed-factor bilinear upsampling with an exact transpose backward;
/// used by the toy segmentation head.
template <typename T>
class BilinearUpsample {
public:
  explicit BilinearUpsample(std::size_t factor = 2) : factor_(factor) {}

  Tensor<T> forward(const Tensor<T>& x) {
    in_shapes_.push_back(x.shape());
    return resize(x, x.dim(1) * factor_, x.dim(2) * factor_, ResizeMode::kBilinear);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) {
    if (in_shapes_.empty()) throw std::logic_error("upsample backward without forward");
    const auto shape = std::move(in_shapes_.back());
    in_shapes_.pop_back();
    const std::size_t c = shape[0], ih = shape[1], iw = shape[2];
    const std::size_t oh = grad_out.dim(1), ow = grad_out.dim(2);
    Tensor<T> gx(shape);
    for (std::size_t y = 0; y < oh; ++y) {
      const double sy = std::clamp(detail::src_coord(y, oh, ih), 0.0, double(ih - 1));
      const std::size_t y0 = static_cast<std::size_t>(sy);
      const std::size_t y1 = std::min(y0 + 1, ih - 1);
      const double fy = sy - double(y0);
      for (std::size_t x = 0; x < ow; ++x) {
        const double sx = std::clamp(detail::src_coord(x, ow, iw), 0.0, double(iw - 1));
        const std::size_t x0 = static_cast<std::size_t>(sx);
        const std::size_t x1 = std::min(x0 + 1, iw - 1);
        const double fx = sx - double(x0);
        for (std::size_t ci = 0; ci < c; ++ci) {
          const double g = static_cast<double>(grad_out[(ci * oh + y) * ow + x]);
          gx[(ci * ih + y0) * iw + x0] += static_cast<T>((1 - fy) * (1 - fx) * g);
          gx[(ci * ih + y0) * iw + x1] += static_cast<T>((1 - fy) * fx * g);
          gx[(ci * ih + y1) * iw + x0] += static_cast<T>(fy * (1 - fx) * g);
          gx[(ci * ih + y1) * iw + x1] += static_cast<T>(fy * fx * g);
        }
      }
    }
    return gx;
  }

  void clear_cache() { in_shapes_.clear(); }

private:
  std::size_t factor_;
  std::vector<std::vector<std::size_t>> in_shapes_;
};

template <typename T>
class SigmoidLayer {
public:
  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i)
      out[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(x[i]))));
    outputs_.push_back(out);
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) {
    if (outputs_.empty()) throw std::logic_error("sigmoid backward without forward");
    const Tensor<T> out = std::move(outputs_.back());
    outputs_.pop_back();
    Tensor<T> gx(grad_out.shape());
    for (std::size_t i = 0; i < gx.size(); ++i)
      gx[i] = static_cast<T>(static_cast<double>(grad_out[i]) * static_cast<double>(out[i]) *
                             (1.0 - static_cast<double>(out[i])));
    return gx;
  }

  void clear_cache() { outputs_.clear(); }

private:
  std::vector<Tensor<T>> outputs_;
};

} // namespace anomseg
