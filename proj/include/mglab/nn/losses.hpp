#pragma once

#include <algorithm>
#include <cmath>

namespace mglab::nn {

inline constexpr double kBceEpsilon = 1e-7;

/// Binary cross entropy of a grasp probability against the self-supervised
/// label. q is clipped to [eps, 1 - eps].
inline double bce_loss(double q, int label) {
  q = std::clamp(q, kBceEpsilon, 1.0 - kBceEpsilon);
  return -(label * std::log(q) + (1 - label) * std::log(1.0 - q));
}

/// d(bce)/d(logit) for q = sigmoid(logit).
inline double bce_logit_grad(double q, int label) { return q - static_cast<double>(label); }

/// Huber loss on the residual-velocity error, zero for failed grasps.
inline double huber_residual_loss(double delta, double delta_bar, int label) {
  if (label == 0) return 0.0;
  const double e = std::abs(delta - delta_bar);
  return e < 1.0 ? 0.5 * e * e : e - 0.5;
}

inline double huber_residual_grad(double delta, double delta_bar, int label) {
  if (label == 0) return 0.0;
  const double e = delta - delta_bar;
  if (std::abs(e) < 1.0) return e;
  return e > 0 ? 1.0 : -1.0;
}

struct LossValue {
  double total = 0.0;
  double grasp_term = 0.0;
  double move_term = 0.0;
};

/// L = L_g + G * L_m. The move term only contributes (and only carries
/// gradient) for successful grasps.
inline LossValue combined_loss(double q, int label, double delta, double delta_bar) {
  LossValue v;
  v.grasp_term = bce_loss(q, label);
  v.move_term = huber_residual_loss(delta, delta_bar, label);
  v.total = v.grasp_term + static_cast<double>(label) * v.move_term;
  return v;
}

struct LossGrads {
  double logit = 0.0;  // w.r.t. the grasp head's pre-sigmoid output
  double delta = 0.0;  // w.r.t. the predicted residual
};

inline LossGrads combined_loss_grads(double q, int label, double delta, double delta_bar) {
  return {bce_logit_grad(q, label), static_cast<double>(label) * huber_residual_grad(delta, delta_bar, label)};
}

}  // namespace mglab::nn
