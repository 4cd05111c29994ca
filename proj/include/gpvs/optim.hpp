#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "gpvs/tensor.hpp"

namespace gpvs {

/// Adam with bias correction. beta1=0.9, beta2=0.999, eps=1e-8.
class Adam {
 public:
  explicit Adam(const std::vector<ad::Tensor>& params) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    sizes_.reserve(params.size());
    for (const auto& p : params) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
      sizes_.push_back(p.numel());
    }
  }

  std::size_t steps_taken() const { return t_; }

  /// One update over all parameters; gradients are zeroed afterwards.
  void step(std::vector<ad::Tensor>& params, double lr) {
    if (params.size() != sizes_.size())
      throw std::invalid_argument("Adam::step: parameter count changed");
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      ad::Tensor& p = params[pi];
      if (!p.requires_grad())
        throw std::invalid_argument("Adam::step: parameter '" + p.name() +
                                    "' has no gradient");
      if (p.numel() != sizes_[pi])
        throw std::invalid_argument("Adam::step: parameter '" + p.name() +
                                    "' changed size");
      const auto& g = p.grad();
      auto& val = p.value_mut();
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (std::size_t i = 0; i < g.size(); ++i) {
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        val[i] -= lr * mhat / (std::sqrt(vhat) + kEps);
      }
      p.zero_grad();
    }
  }

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

 private:
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
  std::vector<std::size_t> sizes_;
};

}  // namespace gpvs
