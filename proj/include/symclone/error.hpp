#pragma once

#include <stdexcept>
#include <string>

namespace symclone {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or dtype contract violated by an operation's inputs.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed file (IDX, checkpoint, PGM) or version mismatch.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration. `key` names the offending entry.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& message)
      : Error(key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

#define SYMCLONE_CHECK_SHAPE(cond, msg)        \
  do {                                         \
    if (!(cond)) throw ::symclone::ShapeError(msg); \
  } while (0)

}  // namespace symclone
