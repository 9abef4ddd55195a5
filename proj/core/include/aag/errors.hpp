// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace aag {

/// Root of every error the core library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameter or strategy combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Sample content is out of range or inconsistent with its container.
class DataError : public Error {
 public:
  using Error::Error;
};

/// On-disk container is malformed (bad magic, version, truncation).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// API used outside its contract.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced during a computation.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace aag
