#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace melsyn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or out-of-range indices.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed or missing files.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or violated numeric preconditions.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration; carries the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// A check (gradient or acceptance) did not pass.
class VerificationError : public Error {
 public:
  using Error::Error;
};

}  // namespace melsyn
