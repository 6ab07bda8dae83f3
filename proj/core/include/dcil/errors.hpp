#pragma once

#include <stdexcept>
#include <string>

namespace dcil {

/// Tensor shape or dimension mismatch.
class shape_error : public std::invalid_argument {
public:
  explicit shape_error(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Invalid configuration (bad hyperparameters, malformed config file, inconsistent layer spec).
class config_error : public std::runtime_error {
public:
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed or missing data file (dataset, checkpoint).
class data_error : public std::runtime_error {
public:
  explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failure (non-finite loss or parameter).
class numeric_error : public std::runtime_error {
public:
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// API misuse, e.g. backward without a matching forward.
class contract_error : public std::logic_error {
public:
  explicit contract_error(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace dcil
