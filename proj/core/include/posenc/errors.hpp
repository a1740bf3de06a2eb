#pragma once

#include <stdexcept>
#include <string>

namespace posenc {

// Base for every error raised by the library. User-facing problems (bad
// config, unreadable data) derive from UserError so front ends can map them
// to a distinct exit status.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UserError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public UserError {
 public:
  using UserError::UserError;
};

class DataError : public UserError {
 public:
  using UserError::UserError;
};

// Raised when the training loss becomes non-finite.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(int epoch, std::string what)
      : Error(std::move(what)), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

}  // namespace posenc
