#pragma once

#include <exception>
#include <stdexcept>
#include <string>
#include <utility>

namespace reload {

// Root of every error the library throws. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class ScalingError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Non-finite losses and similar numerical breakdowns.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage failed. `cause()` holds the original exception so callers can
// still classify it.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what, std::exception_ptr cause)
      : Error("stage " + stage + ": " + what), stage_(std::move(stage)), cause_(std::move(cause)) {}

  const std::string& stage() const noexcept { return stage_; }
  std::exception_ptr cause() const noexcept { return cause_; }

 private:
  std::string stage_;
  std::exception_ptr cause_;
};

}  // namespace reload
