#pragma once

#include <stdexcept>
#include <string>

namespace v2m {

/// Base class for every error raised by the library. `kind()` is a stable
/// machine-readable tag used by the CLI error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& m) : Error("dimension", m) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& m) : Error("input", m) {}
};

/// A negative sample (shift or replacement) cannot be built for the given geometry.
class FeasibilityError : public Error {
 public:
  explicit FeasibilityError(const std::string& m) : Error("feasibility", m) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& m) : Error("numeric", m) {}
};

class MetricUndefinedError : public Error {
 public:
  explicit MetricUndefinedError(const std::string& m) : Error("metric_undefined", m) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& m) : Error("io", m) {}
};

}  // namespace v2m
