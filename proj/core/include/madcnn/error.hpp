#pragma once

#include <stdexcept>
#include <string>

namespace madcnn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or sequence dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN/Inf was fed in or produced.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A value is outside its documented domain (labels, names, thresholds).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content. `line` is 1-based, 0 when not applicable.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

  /// Same error with `context` (e.g. a file name) prepended to the message.
  static ParseError with_context(const std::string& context, const ParseError& inner) {
    return ParseError(context + ": " + inner.what(), inner.line(), Preformatted{});
  }

 private:
  struct Preformatted {};
  ParseError(const std::string& full, std::size_t line, Preformatted) : Error(full), line_(line) {}

  std::size_t line_;
};

/// File content that parses but violates a structural rule.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// The manipulator simulation diverged.
class SimulationError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace madcnn
