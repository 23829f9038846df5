#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace evact {

// Base of every error thrown by the library. The CLI maps the subclasses to
// distinct exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input bytes. `offset` is the byte position of the offending record.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

// Well-formed input that violates a data invariant (e.g. coordinate outside geometry).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Caller passed an argument outside an operation's precondition.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Numerical failure (divergence, failed factorization).
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Input path does not exist.
class MissingFileError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace evact
