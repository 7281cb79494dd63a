#pragma once

#include <stdexcept>
#include <string>

namespace affloop {

// Exit-code classes used by the CLI: usage 1, data 2, io 3.

/// Bad flags, unknown configuration keys, invalid parameter values.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input, invariant violations, unsatisfied preconditions on data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parse failure that knows where it happened.
class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& msg)
      : DataError("line " + std::to_string(line) + ": " + msg), line_(line), msg_(msg) {}

  [[nodiscard]] std::size_t line() const noexcept { return line_; }
  [[nodiscard]] const std::string& message() const noexcept { return msg_; }

 private:
  std::size_t line_;
  std::string msg_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace affloop
