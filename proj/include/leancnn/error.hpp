#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace leancnn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or layer shapes that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed architecture document; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// NaN/Inf where finite values are required, or a diverged optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Bad input data: missing files, unknown labels, malformed tables.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace leancnn
