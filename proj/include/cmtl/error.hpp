#pragma once

#include <stdexcept>
#include <string>

namespace cmtl {

enum class ErrorKind {
  InvalidInput,
  Config,
  Shape,
  Parse,
  Label,
  Inference,
  Metric,
  State,
  Divergence,
  Io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid_input";
    case ErrorKind::Config: return "config";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Label: return "label";
    case ErrorKind::Inference: return "inference";
    case ErrorKind::Metric: return "metric";
    case ErrorKind::State: return "state";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

/// Every failure raised by the library. `what()` is a single line of the
/// form `<kind>: <message>` so the CLI can print it verbatim.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind),
        message_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : Error(ErrorKind::Parse, "line " + std::to_string(line) + ": " + message),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace cmtl
