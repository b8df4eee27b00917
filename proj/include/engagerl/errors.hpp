#pragma once

#include <stdexcept>
#include <string>

namespace engagerl {

/// Root of every error this library throws. Callers that must never see an
/// untyped failure (the fuzzed parsers, the CLI exit-code mapping) catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A record on disk does not match the expected schema. Carries the 1-based
/// line number for JSONL inputs (0 when not applicable).
class SchemaError : public Error {
 public:
  SchemaError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  struct Verbatim {};
  SchemaError(Verbatim, const std::string& what, std::size_t line) : Error(what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Base for failures talking to a remote model service.
class BackendError : public Error {
 public:
  using Error::Error;
};

class TransportError : public BackendError {
 public:
  using BackendError::BackendError;
};

class TimeoutError : public TransportError {
 public:
  using TransportError::TransportError;
};

/// The service answered, but the payload could not be interpreted.
class MalformedPayloadError : public BackendError {
 public:
  using BackendError::BackendError;
};

/// A model completion did not contain the structured answer we asked for.
class ParseError : public BackendError {
 public:
  using BackendError::BackendError;
};

}  // namespace engagerl
