#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace stormloop {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A model or scenario references something that does not exist or is invalid.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numeric input outside an operation's domain (negative head, opening > 1, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input. `line()` is 1-based; 0 when not line oriented.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace stormloop
