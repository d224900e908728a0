#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "gril/errors.hpp"
#include "gril/numerics/tape.hpp"

namespace gril {

struct AdamConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Global-norm clip on each step; 0 disables.
  double clip_norm = 0.0;
};

// Adaptive-moment optimizer over a fixed list of parameters.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (!(cfg_.learning_rate > 0)) throw ConfigError("learning rate must be positive");
    for (Parameter* p : params_) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }

  // Applies one update from the accumulated gradients, scaled by `grad_scale`.
  void step(double grad_scale = 1.0) {
    ++t_;
    double clip = 1.0;
    if (cfg_.clip_norm > 0) {
      double sq = 0.0;
      for (Parameter* p : params_)
        for (double g : p->grad.values()) sq += g * g * grad_scale * grad_scale;
      double norm = std::sqrt(sq);
      if (norm > cfg_.clip_norm) clip = cfg_.clip_norm / norm;
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& w = params_[i]->value.values();
      const auto& g = params_[i]->grad.values();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        double gk = g[k] * grad_scale * clip;
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
        w[k] -= cfg_.learning_rate * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.epsilon);
      }
    }
  }

  void zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
  }

  const std::vector<Parameter*>& params() const noexcept { return params_; }
  std::size_t steps() const noexcept { return t_; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace gril
