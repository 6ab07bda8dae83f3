#pragma once

#include <string>
#include <utility>

#include "dcil/tensor.hpp"

namespace dcil {

/// Plain trainable parameter with its optimizer momentum buffer.
template <class S>
struct Param {
  std::string id;
  Tensor<S> value;
  Tensor<S> momentum;

  Param() = default;
  Param(std::string id_, Tensor<S> value_) : id(std::move(id_)), value(std::move(value_)) {
    momentum = Tensor<S>::zeros_like(value);
  }
};

/// Shared trunk weight with its binary mask. The masked view is recomputed on
/// demand so it can never go stale.
template <class S>
struct PrunableParam {
  std::string id;
  Tensor<S> weight;
  Tensor<S> mask;  // 0/1 entries, same shape as weight
  Tensor<S> momentum;

  PrunableParam() = default;
  PrunableParam(std::string id_, Tensor<S> weight_) : id(std::move(id_)), weight(std::move(weight_)) {
    mask = Tensor<S>::ones(weight.shape());
    momentum = Tensor<S>::zeros_like(weight);
  }

  bool is_conv() const { return weight.rank() == 4; }

  Tensor<S> masked_weight() const { return hadamard(mask, weight); }

  std::size_t mask_zeros() const {
    std::size_t z = 0;
    for (std::size_t i = 0; i < mask.numel(); ++i) {
      if (mask[i] == S(0)) ++z;
    }
    return z;
  }

  void set_mask(const Tensor<S>& m) {
    if (!m.same_shape(weight)) throw shape_error("mask shape must match weight shape");
    for (std::size_t i = 0; i < m.numel(); ++i) {
      if (m[i] != S(0) && m[i] != S(1)) throw shape_error("mask entries must be 0 or 1");
    }
    mask = m;
  }
};

}  // namespace dcil
