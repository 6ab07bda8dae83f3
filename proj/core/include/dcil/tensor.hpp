#pragma once

#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dcil/errors.hpp"

namespace dcil {

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

inline std::string shape_to_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major tensor over float or double, the value carrier for
/// activations, weights and gradients.
template <class S>
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), S(0)) {}

  Tensor(std::vector<std::size_t> shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_numel(shape_)) {
      throw shape_error("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                        shape_to_string(shape_));
    }
  }

  static Tensor full(std::vector<std::size_t> shape, S value) {
    Tensor t(std::move(shape));
    for (S& v : t.data_) v = value;
    return t;
  }
  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor ones(std::vector<std::size_t> shape) { return full(std::move(shape), S(1)); }
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::vector<S>& vec() { return data_; }
  const std::vector<S>& vec() const { return data_; }

  S& operator[](std::size_t i) { return data_[i]; }
  S operator[](std::size_t i) const { return data_[i]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (S v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <class T>
  Tensor<T> cast() const {
    std::vector<T> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<T>(data_[i]);
    return Tensor<T>(shape_, std::move(out));
  }

private:
  static std::size_t checked_numel(const std::vector<std::size_t>& shape) {
    if (shape.empty()) throw shape_error("tensor shape must have at least one dimension");
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d == 0) throw shape_error("tensor extents must be positive, got " + shape_to_string(shape));
      n *= d;
    }
    return n;
  }

  std::vector<std::size_t> shape_;
  std::vector<S> data_;
};

template <class S>
void require_shape(const Tensor<S>& t, const std::vector<std::size_t>& shape, const char* what) {
  if (t.shape() != shape) {
    throw shape_error(std::string(what) + ": expected " + shape_to_string(shape) + ", got " +
                      shape_to_string(t.shape()));
  }
}

template <class S>
void require_rank(const Tensor<S>& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw shape_error(std::string(what) + ": expected rank " + std::to_string(rank) + " tensor, got " +
                      shape_to_string(t.shape()));
  }
}

// y += a * x
template <class S>
void axpy(S a, const Tensor<S>& x, Tensor<S>& y) {
  if (!x.same_shape(y)) throw shape_error("axpy: shape mismatch");
  const S* xs = x.data();
  S* ys = y.data();
  for (std::size_t i = 0; i < y.numel(); ++i) ys[i] += a * xs[i];
}

template <class S>
Tensor<S> hadamard(const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b)) throw shape_error("hadamard: shape mismatch");
  Tensor<S> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * b[i];
  return out;
}

// Debug-build finite check at primitive boundaries.
#if !defined(NDEBUG)
#define DCIL_DEBUG_CHECKS 1
#else
#define DCIL_DEBUG_CHECKS 0
#endif

template <class S>
inline void debug_check_finite(const Tensor<S>& t, const char* where) {
#if DCIL_DEBUG_CHECKS
  if (!t.all_finite()) throw numeric_error(std::string("non-finite value produced by ") + where);
#else
  (void)t;
  (void)where;
#endif
}

}  // namespace dcil
