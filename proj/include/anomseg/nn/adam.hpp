#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "anomseg/nn/layers.hpp"

namespace anomseg {

/// Adam over a fixed parameter list; update order is the registration order,
/// so runs are reproducible.
template <typename T>
class Adam {
public:
  explicit Adam(std::vector<NamedParam<T>> params, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      state_.push_back({Tensor<double>(p.param->value.shape()), Tensor<double>(p.param->value.shape())});
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.param->zero_grad();
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& value = params_[i].param->value;
      auto& grad = params_[i].param->grad;
      auto& m = state_[i].m;
      auto& v = state_[i].v;
      for (std::size_t j = 0; j < value.size(); ++j) {
        const double g = static_cast<double>(grad[j]);
        m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
        v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        value[j] = static_cast<T>(static_cast<double>(value[j]) - lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

private:
  struct State {
    Tensor<double> m, v;
  };
  std::vector<NamedParam<T>> params_;
  std::vector<State> state_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

} // namespace anomseg
