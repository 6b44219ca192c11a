#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace adaptexp {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An argument violated an operation's input contract (bad length, non-finite value, ...).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A configuration or environment specification is inconsistent. `path` names the offending field.
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& what)
      : Error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}

  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// An object was used in the wrong lifecycle state (e.g. stepping a terminal environment).
class StateError : public Error {
 public:
  using Error::Error;
};

/// A scoring function's precondition on the run record does not hold.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure that survived the library's stabilisation steps.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file; `line` is 1-based.
class ParseError : public InvalidInput {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : InvalidInput(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace adaptexp
