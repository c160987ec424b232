#pragma once

#include <stdexcept>
#include <string>

namespace s4t {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated file. The message carries the byte offset.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration key or value (CLI maps this to exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace s4t
