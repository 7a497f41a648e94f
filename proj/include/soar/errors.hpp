// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace soar {

/// Violated precondition: wrong shapes, out-of-range arguments, invalid types.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced a non-finite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed text input. Carries the 1-based line number (0 when unknown) and,
/// once known, the source it came from; what() reads "source:line: message".
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& message, std::size_t line, std::string source = {})
      : std::runtime_error(format(message, line, source)),
        message_(message),
        line_(line),
        source_(std::move(source)) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& source() const noexcept { return source_; }
  const std::string& message() const noexcept { return message_; }

  ParseError with_source(std::string source) const { return {message_, line_, std::move(source)}; }

 private:
  static std::string format(const std::string& message, std::size_t line,
                            const std::string& source) {
    std::string prefix = source;
    if (line) prefix += (prefix.empty() ? "line " : ":") + std::to_string(line);
    return prefix.empty() ? message : prefix + ": " + message;
  }

  std::string message_;
  std::size_t line_;
  std::string source_;
};

/// A bounding box collapsed to zero width or height.
class DegenerateBoxError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dataset conversion failed (e.g. a label file without its image).
class ConversionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Metrics requested over an empty population.
class UndefinedMetricsError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A detector failed on one or more patches.
class DetectorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input document does not follow the expected schema.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File system or image decoding failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace soar
