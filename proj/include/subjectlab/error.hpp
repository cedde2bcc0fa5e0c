#pragma once

#include <stdexcept>
#include <string>

namespace subjectlab {

// Base for every error the library raises on a contract violation.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A tensor did not have the shape an operation expected. `name` identifies
// the offending tensor.
class ShapeError : public Error {
 public:
  ShapeError(std::string name, const std::string& what)
      : Error(name + ": " + what), name_(std::move(name)) {}
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

// A value was outside its documented domain (time outside [0,1], bad config).
class ValueError : public Error {
 public:
  using Error::Error;
};

// A computation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace subjectlab
