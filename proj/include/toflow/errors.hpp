#pragma once

#include <stdexcept>
#include <string>

namespace toflow {

// Root of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform to an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf appeared in a tensor.
class NumericalBlowup : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string key_path, const std::string& message)
      : Error(key_path + ": " + message), key_path_(std::move(key_path)) {}
  const std::string& key_path() const noexcept { return key_path_; }

 private:
  std::string key_path_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public IoError {
 public:
  using IoError::IoError;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace toflow
