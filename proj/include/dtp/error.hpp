#pragma once

#include <stdexcept>
#include <string>

namespace dtp {

/// Base for every error raised by the library. Each subclass maps onto one
/// CLI exit code (see tools/dtp_cli.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or layer shapes do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered, or training diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the function's domain (temperature <= 0, epoch out of range, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents. `offset` is the byte position where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Inconsistent or incomplete configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Missing or unreadable dataset.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Dependency-graph analysis failed (unknown layer kind, misaligned coupling).
class AnalysisError : public Error {
 public:
  using Error::Error;
};

}  // namespace dtp
