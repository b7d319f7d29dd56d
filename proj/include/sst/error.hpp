#pragma once

#include <stdexcept>
#include <string>

namespace sst {

/// Base of every error thrown by the library. `category()` is a short,
/// stable token that the command-line driver prints on failure.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* category() const noexcept { return "internal"; }
};

class ShapeError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "shape"; }
};

class ValueError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "value"; }
};

class NumericError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "numeric"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "io"; }
};

class ParseError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "parse"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "config"; }
};

class GeometryError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "geometry"; }
};

}  // namespace sst
