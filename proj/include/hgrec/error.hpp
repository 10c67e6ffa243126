#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hgrec {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input line. Carries the 1-based line number and the field that failed.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, std::string field, const std::string& message)
      : Error("line " + std::to_string(line) + ": " + message),
        line_(line),
        field_(std::move(field)) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

/// A precondition or invariant on user-supplied values does not hold.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Filtering removed every record.
class DatasetExhausted : public Error {
 public:
  DatasetExhausted() : Error("dataset exhausted by filtering") {}
};

/// Matrix shapes do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN or infinity produced by a forward or backward computation.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class RemoteError : public Error {
 public:
  enum class Kind { timeout, http_status, transport, shape_mismatch, protocol };

  RemoteError(Kind kind, const std::string& message) : Error(message), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class CheckpointError : public Error {
 public:
  enum class Kind { corrupt, digest_mismatch, version_mismatch, dimension_mismatch, io };

  CheckpointError(Kind kind, const std::string& message) : Error(message), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Bad command line flag, missing file or conflicting configuration. `key` names the culprit.
class UsageError : public Error {
 public:
  UsageError(std::string key, const std::string& message)
      : Error(key.empty() ? message : key + ": " + message), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace hgrec
