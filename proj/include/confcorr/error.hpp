#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace confcorr {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An input record or file violates the record schema or one of its invariants.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& message, std::size_t line = 0)
      : Error(line == 0 ? message : "line " + std::to_string(line) + ": " + message), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Statistical input that makes the requested quantity undefined (constant columns, single class, ...).
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

/// Evidence a metric needs is absent from the record.
class MissingEvidence : public Error {
 public:
  using Error::Error;
};

}  // namespace confcorr
