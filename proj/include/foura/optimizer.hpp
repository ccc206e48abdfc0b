#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "foura/errors.hpp"
#include "foura/matrix.hpp"

namespace foura {

enum class OptimizerKind { Sgd, Adam };

// Plain SGD and Adam (beta1 = 0.9, beta2 = 0.999, eps = 1e-8). State is keyed
// by parameter position, so the parameter list must stay stable across steps.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {}

  void step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads) {
    if (params.size() != grads.size()) {
      throw ShapeError("optimizer: params/grads count mismatch");
    }
    for (const Matrix* g : grads) {
      if (!g->is_finite()) throw TrainingDiverged("optimizer: non-finite gradient");
    }
    if (kind_ == OptimizerKind::Sgd) {
      for (std::size_t p = 0; p < params.size(); ++p) {
        Matrix& w = *params[p];
        const Matrix& g = *grads[p];
        for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] -= lr_ * g.data()[i];
      }
      return;
    }
    if (m_.empty()) {
      for (const Matrix* w : params) {
        m_.emplace_back(w->rows(), w->cols());
        v_.emplace_back(w->rows(), w->cols());
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params.size(); ++p) {
      Matrix& w = *params[p];
      const Matrix& g = *grads[p];
      Matrix& m = m_[p];
      Matrix& v = v_[p];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g.data()[i];
        m.data()[i] = kBeta1 * m.data()[i] + (1.0 - kBeta1) * gi;
        v.data()[i] = kBeta2 * v.data()[i] + (1.0 - kBeta2) * gi * gi;
        const double mhat = m.data()[i] / bc1;
        const double vhat = v.data()[i] / bc2;
        w.data()[i] -= lr_ * mhat / (std::sqrt(vhat) + kEps);
      }
    }
  }

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

 private:
  OptimizerKind kind_;
  double lr_;
  long t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

}  // namespace foura
