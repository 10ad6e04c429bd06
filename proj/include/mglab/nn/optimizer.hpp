#pragma once

#include <map>
#include <string>
#include <vector>

#include "mglab/nn/layers.hpp"

namespace mglab::nn {

struct SgdConfig {
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

/// One momentum-SGD update of a single tensor:
///   buf = momentum * buf + (grad + wd * param);  param -= lr * buf
template <typename T>
void sgd_momentum_step(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& buf, const SgdConfig& cfg) {
  if (param.shape() != grad.shape() || param.shape() != buf.shape()) {
    throw ShapeError("sgd step: shape mismatch between " + shape_str(param.shape()) + ", " +
                     shape_str(grad.shape()) + " and " + shape_str(buf.shape()));
  }
  const T lr = static_cast<T>(cfg.lr), mu = static_cast<T>(cfg.momentum), wd = static_cast<T>(cfg.weight_decay);
  for (std::size_t i = 0; i < param.size(); ++i) {
    buf[i] = mu * buf[i] + (grad[i] + wd * param[i]);
    param[i] -= lr * buf[i];
  }
}

/// Momentum SGD over named parameters. Frozen parameters are never touched.
template <typename T>
class SgdMomentum {
 public:
  explicit SgdMomentum(SgdConfig cfg = {}) : cfg_(cfg) {}

  const SgdConfig& config() const { return cfg_; }

  void step(const std::vector<Param<T>*>& params) {
    for (auto* p : params) {
      if (!p->trainable) continue;
      auto [it, inserted] = buffers_.try_emplace(p->name, p->value.shape());
      sgd_momentum_step(p->value, p->grad, it->second, cfg_);
    }
  }

  std::map<std::string, Tensor<T>>& buffers() { return buffers_; }
  const std::map<std::string, Tensor<T>>& buffers() const { return buffers_; }

 private:
  SgdConfig cfg_;
  std::map<std::string, Tensor<T>> buffers_;
};

}  // namespace mglab::nn
