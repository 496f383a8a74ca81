#pragma once

#include <stdexcept>
#include <string>

namespace pqe {

// Base of every error raised by the toolkit. The CLI maps subclasses onto
// process exit codes (see exit_code()).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

// Precondition violated by a caller (malformed matrix, empty variant list).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// An invariant inside the toolkit was broken; indicates a bug.
class InternalError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class BackendError : public Error {
 public:
  BackendError(const std::string& what, bool transient)
      : Error(what), transient_(transient) {}
  bool transient() const noexcept { return transient_; }
  int exit_code() const noexcept override { return 3; }

 private:
  bool transient_;
};

// Backend answered, but not in the agreed wire format.
class ProtocolError : public BackendError {
 public:
  explicit ProtocolError(const std::string& what) : BackendError(what, false) {}
};

class ProviderError : public BackendError {
 public:
  using BackendError::BackendError;
};

class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

class MissingTags : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace pqe
