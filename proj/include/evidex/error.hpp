#pragma once

#include <stdexcept>
#include <string>

namespace evidex {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InvalidPath : public Error {
 public:
  using Error::Error;
};

class EmptyDocument : public Error {
 public:
  using Error::Error;
};

// Raised when a file cannot be turned into annotatable pages. The run loop
// logs the reason and moves on; it is never fatal to a corpus run.
class ExcludedDocument : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  SchemaError(const std::string& field, const std::string& message)
      : Error(field.empty() ? message : field + ": " + message), field_(field) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class SchemaVersionError : public Error {
 public:
  using Error::Error;
};

}  // namespace evidex
