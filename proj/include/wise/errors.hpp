#pragma once

#include <stdexcept>
#include <string>

namespace wise {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file. The message carries "path:line" context.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Well-formed input that violates a documented invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

class RenderError : public Error {
 public:
  using Error::Error;
};

}  // namespace wise
