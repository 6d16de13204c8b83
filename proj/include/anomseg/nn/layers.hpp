#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "anomseg/core/rng.hpp"
#include "anomseg/core/tensor.hpp"

namespace anomseg {

/// Trainable tensor: value plus accumulated gradient.
template <typename T>
struct ParamTensor {
  Tensor<T> value;
  Tensor<T> grad;

  void init_shape(std::vector<std::size_t> shape) {
    value = Tensor<T>(shape);
    grad = Tensor<T>(std::move(shape));
  }
  void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
struct NamedParam {
  std::string name;
  ParamTensor<T>* param;
};

namespace nn_detail {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

/// Fan-in scaled normal init (LeCun), the right scale for SELU stacks and a
/// serviceable one for the ReLU layers at these widths.
template <typename T>
void lecun_normal(Tensor<T>& w, std::size_t fan_in, Rng& rng) {
  const double std_dev = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(std_dev * rng.normal());
}

template <typename T>
void im2col(const Tensor<T>& x, std::size_t k, std::size_t stride, std::size_t pad,
            std::size_t out_h, std::size_t out_w, Tensor<T>& col) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  // col: (c*k*k, out_h*out_w)
  T* dst = col.data();
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          const bool row_ok = iy >= 0 && iy < static_cast<std::ptrdiff_t>(h);
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            *dst++ = (row_ok && ix >= 0 && ix < static_cast<std::ptrdiff_t>(w))
                         ? x[(ci * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)]
                         : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const Tensor<T>& col, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w, Tensor<T>& x) {
  x.fill(T(0));
  const T* src = col.data();
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          const bool row_ok = iy >= 0 && iy < static_cast<std::ptrdiff_t>(h);
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (row_ok && ix >= 0 && ix < static_cast<std::ptrdiff_t>(w))
              x[(ci * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] += *src;
            ++src;
          }
        }
      }
    }
  }
}

} // namespace nn_detail

enum class Activation { kNone, kRelu };

/// 2D convolution (square kernel, zero padding) with an optional fused ReLU.
/// forward() pushes onto an internal LIFO cache so the same layer object can
/// run several passes (weight sharing) before the matching backward() calls.
template <typename T>
class Conv2d {
public:
  Conv2d() = default;
  Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t k, std::size_t stride, std::size_t pad,
         Activation act, bool with_bias = true)
      : in_ch_(in_ch), out_ch_(out_ch), k_(k), stride_(stride), pad_(pad), act_(act),
        with_bias_(with_bias) {
    if (in_ch == 0 || out_ch == 0) throw std::invalid_argument("conv requires positive channel counts");
    weight_.init_shape({out_ch_, in_ch_, k_, k_});
    if (with_bias_) bias_.init_shape({out_ch_});
  }

  void init(Rng& rng) {
    nn_detail::lecun_normal(weight_.value, in_ch_ * k_ * k_, rng);
    if (with_bias_) bias_.value.fill(T(0));
  }

  Tensor<T> forward(const Tensor<T>& x) {
    check_input(x);
    const std::size_t h = x.dim(1), w = x.dim(2);
    const std::size_t out_h = (h + 2 * pad_ - k_) / stride_ + 1;
    const std::size_t out_w = (w + 2 * pad_ - k_) / stride_ + 1;
    Tensor<T> out({out_ch_, out_h, out_w});

    const std::size_t cols = out_h * out_w;
    nn_detail::ConstMatMap<T> wm(weight_.value.data(), out_ch_, in_ch_ * k_ * k_);
    nn_detail::MatMap<T> om(out.data(), out_ch_, cols);
    if (is_pointwise()) {
      nn_detail::ConstMatMap<T> xm(x.data(), in_ch_, cols);
      om.noalias() = wm * xm;
    } else {
      Tensor<T> col({in_ch_ * k_ * k_, cols});
      nn_detail::im2col(x, k_, stride_, pad_, out_h, out_w, col);
      nn_detail::ConstMatMap<T> cm(col.data(), in_ch_ * k_ * k_, cols);
      om.noalias() = wm * cm;
    }
    if (with_bias_)
      for (std::size_t o = 0; o < out_ch_; ++o)
        om.row(o).array() += bias_.value[o];
    if (act_ == Activation::kRelu)
      for (std::size_t i = 0; i < out.size(); ++i)
        if (out[i] < T(0)) out[i] = T(0);
    inputs_.push_back(x);
    outputs_.push_back(out);
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) {
    if (inputs_.empty()) throw std::logic_error("conv backward without matching forward");
    const Tensor<T> x = std::move(inputs_.back());
    const Tensor<T> y = std::move(outputs_.back());
    inputs_.pop_back();
    outputs_.pop_back();
    if (grad_out.shape() != y.shape())
      throw std::invalid_argument("conv grad shape mismatch: " + shape_string(grad_out.shape()));

    Tensor<T> g = grad_out;
    if (act_ == Activation::kRelu)
      for (std::size_t i = 0; i < g.size(); ++i)
        if (y[i] <= T(0)) g[i] = T(0);

    const std::size_t h = x.dim(1), w = x.dim(2);
    const std::size_t out_h = y.dim(1), out_w = y.dim(2), cols = out_h * out_w;

    nn_detail::ConstMatMap<T> gm(g.data(), out_ch_, cols);
    nn_detail::MatMap<T> dwm(weight_.grad.data(), out_ch_, in_ch_ * k_ * k_);
    if (with_bias_) {
      // fixed-order accumulation: Eigen's reduction order shifts with buffer
      // alignment, which would break bit-reproducibility across runs
      for (std::size_t o = 0; o < out_ch_; ++o) {
        T s = T(0);
        const T* row = g.data() + o * cols;
        for (std::size_t i = 0; i < cols; ++i) s += row[i];
        bias_.grad[o] += s;
      }
    }

    Tensor<T> gx({in_ch_, h, w});
    nn_detail::ConstMatMap<T> wm(weight_.value.data(), out_ch_, in_ch_ * k_ * k_);
    if (is_pointwise()) {
      nn_detail::ConstMatMap<T> xm(x.data(), in_ch_, cols);
      dwm.noalias() += gm * xm.transpose();
      nn_detail::MatMap<T> gxm(gx.data(), in_ch_, cols);
      gxm.noalias() = wm.transpose() * gm;
    } else {
      Tensor<T> col({in_ch_ * k_ * k_, cols});
      nn_detail::im2col(x, k_, stride_, pad_, out_h, out_w, col);
      nn_detail::ConstMatMap<T> cm(col.data(), in_ch_ * k_ * k_, cols);
      dwm.noalias() += gm * cm.transpose();
      Tensor<T> gcol({in_ch_ * k_ * k_, cols});
      nn_detail::MatMap<T> gcm(gcol.data(), in_ch_ * k_ * k_, cols);
      gcm.noalias() = wm.transpose() * gm;
      nn_detail::col2im(gcol, in_ch_, h, w, k_, stride_, pad_, out_h, out_w, gx);
    }
    return gx;
  }

  void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    out.push_back({prefix + ".weight", &weight_});
    if (with_bias_) out.push_back({prefix + ".bias", &bias_});
  }

  void clear_cache() {
    inputs_.clear();
    outputs_.clear();
  }

  std::size_t out_channels() const { return out_ch_; }

private:
  void check_input(const Tensor<T>& x) const {
    if (x.rank() != 3 || x.dim(0) != in_ch_)
      throw std::invalid_argument("conv expects (" + std::to_string(in_ch_) + ",H,W), got " +
                                  shape_string(x.shape()));
    if (x.dim(1) + 2 * pad_ < k_ || x.dim(2) + 2 * pad_ < k_)
      throw std::invalid_argument("conv input smaller than kernel");
  }
  bool is_pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }

  std::size_t in_ch_ = 0, out_ch_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  Activation act_ = Activation::kNone;
  bool with_bias_ = true;
  ParamTensor<T> weight_, bias_;
  std::vector<Tensor<T>> inputs_, outputs_;
};

/// 2x2 stride-2 transposed convolution (exact x2 upsampling, no overlap).
template <typename T>
class ConvTranspose2d {
public:
  ConvTranspose2d() = default;
  ConvTranspose2d(std::size_t in_ch, std::size_t out_ch) : in_ch_(in_ch), out_ch_(out_ch) {
    weight_.init_shape({in_ch_, out_ch_, 2, 2});
    bias_.init_shape({out_ch_});
  }

  void init(Rng& rng) {
    nn_detail::lecun_normal(weight_.value, in_ch_, rng);
    bias_.value.fill(T(0));
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() != 3 || x.dim(0) != in_ch_)
      throw std::invalid_argument("tconv expects (" + std::to_string(in_ch_) + ",H,W)");
    const std::size_t h = x.dim(1), w = x.dim(2), hw = h * w;
    // cols: (out_ch*4, h*w) = W^T (out_ch*4, in_ch) * x (in_ch, h*w)
    Tensor<T> colout({out_ch_ * 4, hw});
    nn_detail::ConstMatMap<T> wm(weight_.value.data(), in_ch_, out_ch_ * 4);
    nn_detail::ConstMatMap<T> xm(x.data(), in_ch_, hw);
    nn_detail::MatMap<T> cm(colout.data(), out_ch_ * 4, hw);
    cm.noalias() = wm.transpose() * xm;

    Tensor<T> out({out_ch_, 2 * h, 2 * w});
    for (std::size_t o = 0; o < out_ch_; ++o)
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx) {
          const T* src = colout.data() + ((o * 2 + dy) * 2 + dx) * hw;
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx)
              out[(o * 2 * h + 2 * y + dy) * 2 * w + 2 * xx + dx] = src[y * w + xx] + bias_.value[o];
        }
    inputs_.push_back(x);
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) {
    if (inputs_.empty()) throw std::logic_error("tconv backward without matching forward");
    const Tensor<T> x = std::move(inputs_.back());
    inputs_.pop_back();
    const std::size_t h = x.dim(1), w = x.dim(2), hw = h * w;
    if (grad_out.rank() != 3 || grad_out.dim(0) != out_ch_ || grad_out.dim(1) != 2 * h ||
        grad_out.dim(2) != 2 * w)
      throw std::invalid_argument("tconv grad shape mismatch");

    Tensor<T> gcol({out_ch_ * 4, hw});
    for (std::size_t o = 0; o < out_ch_; ++o) {
      T bsum = T(0);
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx) {
          T* dst = gcol.data() + ((o * 2 + dy) * 2 + dx) * hw;
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) {
              const T v = grad_out[(o * 2 * h + 2 * y + dy) * 2 * w + 2 * xx + dx];
              dst[y * w + xx] = v;
              bsum += v;
            }
        }
      bias_.grad[o] += bsum;
    }
    nn_detail::ConstMatMap<T> gcm(gcol.data(), out_ch_ * 4, hw);
    nn_detail::ConstMatMap<T> xm(x.data(), in_ch_, hw);
    nn_detail::MatMap<T> dwm(weight_.grad.data(), in_ch_, out_ch_ * 4);
    dwm.noalias() += xm * gcm.transpose();

    Tensor<T> gx({in_ch_, h, w});
    nn_detail::ConstMatMap<T> wm(weight_.value.data(), in_ch_, out_ch_ * 4);
    nn_detail::MatMap<T> gxm(gx.data(), in_ch_, hw);
    gxm.noalias() = wm * gcm;
    return gx;
  }

  void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    out.push_back({prefix + ".weight", &weight_});
    out.push_back({prefix + ".bias", &bias_});
  }

  void clear_cache() { inputs_.clear(); }

private:
  std::size_t in_ch_ = 0, out_ch_ = 0;
  ParamTensor<T> weight_, bias_;
  std::vector<Tensor<T>> inputs_;
};

/// 2x2 stride-2 max pooling; input dims must be even.
template <typename T>
class MaxPool2d {
public:
  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() != 3) throw std::invalid_argument("maxpool expects (C,H,W)");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h % 2 || w % 2)
      throw std::invalid_argument("maxpool needs even spatial dims, got " + shape_string(x.shape()));
    const std::size_t oh = h / 2, ow = w / 2;
    Tensor<T> out({c, oh, ow});
    std::vector<std::uint32_t> idx(out.size());
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          std::size_t best = (ci * h + 2 * y) * w + 2 * xx;
          T bv = x[best];
          const std::size_t cand[3] = {(ci * h + 2 * y) * w + 2 * xx + 1,
                                       (ci * h + 2 * y + 1) * w + 2 * xx,
                                       (ci * h + 2 * y + 1) * w + 2 * xx + 1};
          for (std::size_t cc : cand)
            if (x[cc] > bv) {
              bv = x[cc];
              best = cc;
            }
          out[(ci * oh + y) * ow + xx] = bv;
          idx[(ci * oh + y) * ow + xx] = static_cast<std::uint32_t>(best);
        }
    argmax_.push_back(std::move(idx));
    in_shapes_.push_back(x.shape());
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) {
    if (argmax_.empty()) throw std::logic_error("maxpool backward without matching forward");
    const auto idx = std::move(argmax_.back());
    const auto shape = std::move(in_shapes_.back());
    argmax_.pop_back();
    in_shapes_.pop_back();
    Tensor<T> gx(shape);
    for (std::size_t i = 0; i < grad_out.size(); ++i) gx[idx[i]] += grad_out[i];
    return gx;
  }

  void clear_cache() {
    argmax_.clear();
    in_shapes_.clear();
  }

private:
  std::vector<std::vector<std::uint32_t>> argmax_;
  std::vector<std::vector<std::size_t>> in_shapes_;
};

// SELU constants from the self-normalizing networks formulation.
constexpr double kSeluAlpha = 1.6732632423543772848170429916717;
constexpr double kSeluLambda = 1.0507009873554804934193349852946;

template <typename T>
Tensor<T> selu_forward(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = static_cast<double>(x[i]);
    out[i] = static_cast<T>(v > 0.0 ? kSeluLambda * v : kSeluLambda * kSeluAlpha * (std::exp(v) - 1.0));
  }
  return out;
}

/// Backward from the forward *output* (monotone map, invertible branch info).
template <typename T>
Tensor<T> selu_backward(const Tensor<T>& grad_out, const Tensor<T>& out) {
  Tensor<T> gx(grad_out.shape());
  for (std::size_t i = 0; i < gx.size(); ++i) {
    const double o = static_cast<double>(out[i]);
    const double slope = o > 0.0 ? kSeluLambda : o + kSeluLambda * kSeluAlpha;
    gx[i] = static_cast<T>(static_cast<double>(grad_out[i]) * slope);
  }
  return gx;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat of nothing");
  const std::size_t h = parts[0]->dim(1), w = parts[0]->dim(2);
  std::size_t c = 0;
  for (const auto* p : parts) {
    if (p->rank() != 3 || p->dim(1) != h || p->dim(2) != w)
      throw std::invalid_argument("concat spatial mismatch: " + shape_string(p->shape()));
    c += p->dim(0);
  }
  Tensor<T> out({c, h, w});
  std::size_t off = 0;
  for (const auto* p : parts) {
    std::copy(p->data(), p->data() + p->size(), out.data() + off);
    off += p->size();
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, const std::vector<std::size_t>& channels) {
  std::vector<Tensor<T>> out;
  std::size_t off = 0;
  for (std::size_t c : channels) {
    Tensor<T> part({c, x.dim(1), x.dim(2)});
    std::copy(x.data() + off, x.data() + off + part.size(), part.data());
    off += part.size();
    out.push_back(std::move(part));
  }
  if (off != x.size()) throw std::invalid_argument("split channels do not cover tensor");
  return out;
}

} // namespace anomseg
