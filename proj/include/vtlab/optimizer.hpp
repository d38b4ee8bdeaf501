#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "vtlab/mlp.hpp"

namespace vtlab {

enum class OptimizerKind { kSgd, kAdam };

// flat-vector optimizer; moment buffers mirror the parameter layout
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, std::size_t dim, double lr, double beta1 = 0.9,
            double beta2 = 0.999, double eps = 1e-8)
      : kind_(kind), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (kind_ == OptimizerKind::kAdam) {
      m_.assign(dim, 0.0);
      v_.assign(dim, 0.0);
    }
    dim_ = dim;
  }

  static Optimizer sgd(std::size_t dim, double lr) { return Optimizer(OptimizerKind::kSgd, dim, lr); }
  static Optimizer adam(std::size_t dim, double lr) { return Optimizer(OptimizerKind::kAdam, dim, lr); }

  std::size_t dim() const { return dim_; }
  long step_count() const { return t_; }
  double learning_rate() const { return lr_; }

  void step(std::span<double> params, std::span<const double> grads) {
    if (params.size() != dim_ || grads.size() != dim_)
      throw std::invalid_argument("Optimizer::step: size mismatch");
    for (double g : grads)
      if (!std::isfinite(g)) throw NumericFault(-1);
    ++t_;
    if (kind_ == OptimizerKind::kSgd) {
      for (std::size_t i = 0; i < dim_; ++i) params[i] -= lr_ * grads[i];
      return;
    }
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < dim_; ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

 private:
  OptimizerKind kind_;
  std::size_t dim_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

// clip gradient to a maximum global L2 norm; returns the pre-clip norm
inline double clip_grad_norm(std::span<double> grads, double max_norm) {
  double sq = 0.0;
  for (double g : grads) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (double& g : grads) g *= scale;
  }
  return norm;
}

}  // namespace vtlab
