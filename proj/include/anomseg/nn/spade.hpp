#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "anomseg/nn/layers.hpp"

namespace anomseg {

/// Spatially-adaptive normalization: the activation is normalized per channel
/// over its spatial extent, then modulated with gamma/beta maps predicted
/// from the (resized) one-hot semantic map. Keeps semantic layout information
/// alive through the decoder.
template <typename T>
class SpadeNorm {
public:
  SpadeNorm() = default;
  SpadeNorm(std::size_t channels, std::size_t seg_channels, std::size_t hidden)
      : channels_(channels),
        conv_shared_(seg_channels, hidden, 3, 1, 1, Activation::kRelu),
        conv_gamma_(hidden, channels, 3, 1, 1, Activation::kNone),
        conv_beta_(hidden, channels, 3, 1, 1, Activation::kNone) {}

  void init(Rng& rng) {
    conv_shared_.init(rng);
    conv_gamma_.init(rng);
    conv_beta_.init(rng);
  }

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& seg) {
    if (x.rank() != 3 || x.dim(0) != channels_)
      throw std::invalid_argument("spade expects (" + std::to_string(channels_) + ",H,W)");
    if (seg.dim(1) != x.dim(1) || seg.dim(2) != x.dim(2))
      throw std::invalid_argument("spade semantic map resolution mismatch");
    const std::size_t c = channels_, hw = x.dim(1) * x.dim(2);

    Cache cache;
    cache.inv_std.assign(c, T(0));
    cache.x_hat = Tensor<T>(x.shape());
    for (std::size_t ci = 0; ci < c; ++ci) {
      double mean = 0.0;
      for (std::size_t p = 0; p < hw; ++p) mean += static_cast<double>(x[ci * hw + p]);
      mean /= static_cast<double>(hw);
      double var = 0.0;
      for (std::size_t p = 0; p < hw; ++p) {
        const double d = static_cast<double>(x[ci * hw + p]) - mean;
        var += d * d;
      }
      var /= static_cast<double>(hw);
      const double inv = 1.0 / std::sqrt(var + kEps);
      cache.inv_std[ci] = static_cast<T>(inv);
      for (std::size_t p = 0; p < hw; ++p)
        cache.x_hat[ci * hw + p] = static_cast<T>((static_cast<double>(x[ci * hw + p]) - mean) * inv);
    }

    const Tensor<T> hiddenmap = conv_shared_.forward(seg);
    cache.gamma = conv_gamma_.forward(hiddenmap);
    const Tensor<T> beta = conv_beta_.forward(hiddenmap);

    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = cache.x_hat[i] * (T(1) + cache.gamma[i]) + beta[i];
    caches_.push_back(std::move(cache));
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) {
    if (caches_.empty()) throw std::logic_error("spade backward without matching forward");
    Cache cache = std::move(caches_.back());
    caches_.pop_back();
    const std::size_t c = channels_, hw = grad_out.dim(1) * grad_out.dim(2);

    // Modulation branch.
    Tensor<T> g_gamma(grad_out.shape());
    for (std::size_t i = 0; i < g_gamma.size(); ++i) g_gamma[i] = grad_out[i] * cache.x_hat[i];
    const Tensor<T> g_hidden_beta = conv_beta_.backward(grad_out);
    Tensor<T> g_hidden = conv_gamma_.backward(g_gamma);
    for (std::size_t i = 0; i < g_hidden.size(); ++i) g_hidden[i] += g_hidden_beta[i];
    conv_shared_.backward(g_hidden); // semantic input is data; its grad is dropped

    // Normalization branch: standard instance-norm backward per channel.
    Tensor<T> gx(grad_out.shape());
    for (std::size_t ci = 0; ci < c; ++ci) {
      double sum_gh = 0.0, sum_gh_xhat = 0.0;
      for (std::size_t p = 0; p < hw; ++p) {
        const double gh = static_cast<double>(grad_out[ci * hw + p]) *
                          (1.0 + static_cast<double>(cache.gamma[ci * hw + p]));
        sum_gh += gh;
        sum_gh_xhat += gh * static_cast<double>(cache.x_hat[ci * hw + p]);
      }
      const double mean_gh = sum_gh / static_cast<double>(hw);
      const double mean_gh_xhat = sum_gh_xhat / static_cast<double>(hw);
      const double inv = static_cast<double>(cache.inv_std[ci]);
      for (std::size_t p = 0; p < hw; ++p) {
        const double gh = static_cast<double>(grad_out[ci * hw + p]) *
                          (1.0 + static_cast<double>(cache.gamma[ci * hw + p]));
        const double xh = static_cast<double>(cache.x_hat[ci * hw + p]);
        gx[ci * hw + p] = static_cast<T>(inv * (gh - mean_gh - xh * mean_gh_xhat));
      }
    }
    return gx;
  }

  void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    conv_shared_.collect_params(prefix + ".shared", out);
    conv_gamma_.collect_params(prefix + ".gamma", out);
    conv_beta_.collect_params(prefix + ".beta", out);
  }

  void clear_cache() {
    caches_.clear();
    conv_shared_.clear_cache();
    conv_gamma_.clear_cache();
    conv_beta_.clear_cache();
  }

private:
  static constexpr double kEps = 1e-5;
  struct Cache {
    Tensor<T> x_hat, gamma;
    std::vector<T> inv_std;
  };
  std::size_t channels_ = 0;
  Conv2d<T> conv_shared_, conv_gamma_, conv_beta_;
  std::vector<Cache> caches_;
};

} // namespace anomseg
