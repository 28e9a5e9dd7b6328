#pragma once

#include <stdexcept>
#include <string>

namespace mambastock {

// Base class for every error raised by the library. `kind()` is a short
// machine-readable tag used by the CLI's single-line diagnostics.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& message) : Error("shape", message) {}
};

class NonFiniteError : public Error {
 public:
  explicit NonFiniteError(const std::string& message)
      : Error("non_finite", message) {}
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& message)
      : Error("invalid_argument", message) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& message) : Error("data", message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io", message) {}
};

}  // namespace mambastock
