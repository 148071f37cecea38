#pragma once

#include <stdexcept>
#include <string>

namespace mixacm {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration value or combination (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor shape / rank mismatch.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// API contract violation (non-scalar loss, consumed tape, unfrozen teacher, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Dataset / file format problems (CLI exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

/// NaN or other numeric failure aborting a run (CLI exit code 4).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace mixacm
