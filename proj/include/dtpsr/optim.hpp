#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dtpsr/denoiser.hpp"

namespace dtpsr {

struct AdamWConfig {
  double learning_rate = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  double grad_clip = 1.0;  // global L2 norm; 0 disables
};

/// AdamW over a ParameterSet; moment buffers follow the set's entry order.
class AdamW {
 public:
  AdamW(ParameterSet& params, AdamWConfig cfg) : params_(params), cfg_(cfg) {
    for (const auto& e : params_.entries()) {
      m_.emplace_back(e.var->value.shape());
      v_.emplace_back(e.var->value.shape());
    }
  }

  /// Applies one update from the accumulated gradients and returns the
  /// (pre-clip) global gradient norm.
  double step() {
    const auto& entries = params_.entries();
    double sq = 0.0;
    for (const auto& e : entries)
      if (!e.var->grad.empty())
        for (double g : e.var->grad.vec()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw std::runtime_error("non-finite gradient norm");
    const double scale = (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;
    ++steps_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < entries.size(); ++i) {
      Tensor& w = entries[i].var->value;
      const Tensor& g = entries[i].var->grad;
      if (g.empty()) continue;
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = g[k] * scale;
        m_[i][k] = cfg_.beta1 * m_[i][k] + (1.0 - cfg_.beta1) * gk;
        v_[i][k] = cfg_.beta2 * v_[i][k] + (1.0 - cfg_.beta2) * gk * gk;
        const double mhat = m_[i][k] / bc1, vhat = v_[i][k] / bc2;
        w[k] -= cfg_.learning_rate * (mhat / (std::sqrt(vhat) + cfg_.epsilon) + cfg_.weight_decay * w[k]);
      }
    }
    return norm;
  }

  std::uint64_t steps() const { return steps_; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }
  void set_steps(std::uint64_t s) { steps_ = s; }
  AdamWConfig& config() { return cfg_; }

 private:
  ParameterSet& params_;
  AdamWConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::uint64_t steps_ = 0;
};

}  // namespace dtpsr
