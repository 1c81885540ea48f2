#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mobclip {

/// Base for every error raised by the library. `kind()` is a stable token
/// used in machine-readable CLI error lines.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

class ValidationError : public Error {
public:
  using Error::Error;
  const char* kind() const noexcept override { return "validation"; }
};

class RangeError : public Error {
public:
  using Error::Error;
  const char* kind() const noexcept override { return "range"; }
};

class ConfigError : public Error {
public:
  using Error::Error;
  const char* kind() const noexcept override { return "config"; }
};

class NumericError : public Error {
public:
  using Error::Error;
  const char* kind() const noexcept override { return "numeric"; }
};

/// Malformed text or binary input. Text sources carry a 1-based line number,
/// binary sources a byte offset; the unused one is -1.
class ParseError : public Error {
public:
  ParseError(const std::string& what, std::int64_t line, std::int64_t byte_offset = -1)
      : Error(format(what, line, byte_offset)), line_(line), offset_(byte_offset) {}

  const char* kind() const noexcept override { return "parse"; }
  std::int64_t line() const noexcept { return line_; }
  std::int64_t byte_offset() const noexcept { return offset_; }

private:
  static std::string format(const std::string& what, std::int64_t line, std::int64_t off) {
    if (off >= 0) return what + " (at byte offset " + std::to_string(off) + ")";
    if (line >= 0) return what + " (at line " + std::to_string(line) + ")";
    return what;
  }

  std::int64_t line_;
  std::int64_t offset_;
};

}  // namespace mobclip
