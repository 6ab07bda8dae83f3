#pragma once

#include <string>
#include <vector>

#include "dcil/errors.hpp"

namespace dcil {

/// Cubic sparsity ramp: the sparsity ratio grows from `initial` at epoch
/// `start_epoch` to `target` over `ramp_epochs` epochs and stays there.
struct SparsitySchedule {
  double initial = 0.0;      // S_i
  double target = 0.0;       // S_t
  double start_epoch = 0.0;  // c0
  double ramp_epochs = 1.0;  // n

  void validate() const {
    if (initial < 0.0 || target >= 1.0 || initial > target) {
      throw config_error("sparsity schedule requires 0 <= initial <= target < 1, got initial=" +
                         std::to_string(initial) + " target=" + std::to_string(target));
    }
    if (ramp_epochs < 1.0) throw config_error("sparsity schedule requires ramp_epochs >= 1");
  }

  /// Current sparsity at (possibly fractional) epoch c, clamped at both ends.
  double at(double c) const {
    if (c <= start_epoch) return initial;
    if (c >= start_epoch + ramp_epochs) return target;
    const double f = 1.0 - (c - start_epoch) / ramp_epochs;
    return target + (initial - target) * f * f * f;
  }
};

struct LrStep {
  int epoch = 0;
  double divisor = 10.0;
};

/// Step-decay learning rate: divide by each step's divisor from its epoch on.
struct LrSchedule {
  double initial = 0.1;
  std::vector<LrStep> steps;

  void validate() const {
    if (initial <= 0.0) throw config_error("learning rate must be positive");
    int prev = -1;
    for (const LrStep& s : steps) {
      if (s.epoch <= prev) throw config_error("lr decay epochs must be strictly increasing");
      if (s.divisor <= 0.0) throw config_error("lr decay divisor must be positive");
      prev = s.epoch;
    }
  }

  double at(int epoch) const {
    double lr = initial;
    for (const LrStep& s : steps) {
      if (epoch >= s.epoch) lr /= s.divisor;
    }
    return lr;
  }
};

}  // namespace dcil
