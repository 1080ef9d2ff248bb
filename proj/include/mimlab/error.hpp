#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mimlab {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes incompatible with a primitive.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated binary/text input. Carries the byte offset (or
/// line number for text formats) where parsing stopped.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Invalid configuration or precondition on user-supplied parameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File system failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered where finite values are required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace mimlab
