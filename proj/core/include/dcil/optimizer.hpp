#pragma once

#include <string>

#include "dcil/errors.hpp"
#include "dcil/tensor.hpp"

namespace dcil {

struct OptimizerConfig {
  double lr = 0.1;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 1e-4;

  void validate() const {
    if (lr <= 0.0) throw config_error("optimizer: lr must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw config_error("optimizer: momentum must lie in [0, 1)");
    if (weight_decay < 0.0) throw config_error("optimizer: weight_decay must be >= 0");
  }
};

/// One SGD step with classic L2 weight decay (added to the gradient before the
/// momentum update) and optional Nesterov lookahead. When `update_mask` is
/// given, both the effective gradient and the applied step are zeroed at
/// masked-out entries, so those weights stay bit-identical.
template <class S>
void sgd_update(Tensor<S>& param, const Tensor<S>& grad, Tensor<S>& momentum_buf, const OptimizerConfig& opt,
                double lr, const Tensor<S>* update_mask = nullptr) {
  if (!param.same_shape(grad) || !param.same_shape(momentum_buf)) {
    throw shape_error("sgd_update: parameter, gradient and momentum shapes must match");
  }
  if (update_mask && !param.same_shape(*update_mask)) throw shape_error("sgd_update: update mask shape mismatch");
  const S mu = static_cast<S>(opt.momentum);
  const S wd = static_cast<S>(opt.weight_decay);
  const S eta = static_cast<S>(lr);
  S* w = param.data();
  S* buf = momentum_buf.data();
  const S* g = grad.data();
  const S* m = update_mask ? update_mask->data() : nullptr;
  for (std::size_t i = 0; i < param.numel(); ++i) {
    S ge = g[i] + wd * w[i];
    if (m) ge *= m[i];
    buf[i] = mu * buf[i] + ge;
    S step = opt.nesterov ? ge + mu * buf[i] : buf[i];
    if (m) step *= m[i];
    w[i] -= eta * step;
  }
}

}  // namespace dcil
