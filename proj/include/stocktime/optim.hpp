#pragma once

#include <cmath>
#include <vector>

#include "stocktime/nn.hpp"

namespace stocktime {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Only the tensors handed to the constructor are
/// ever written.
class Adam {
 public:
  Adam(ParamList params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(p.tensor.size(), 0.0);
      v_.emplace_back(p.tensor.size(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i].tensor;
      const auto& g = p.grad();
      auto w = p.mutable_values();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = g.empty() ? 0.0 : g[j];
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        w[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  std::size_t steps() const { return t_; }
  const ParamList& parameters() const { return params_; }

 private:
  ParamList params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace stocktime
