#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace distlearn {

/// Input shape or dimension does not fit the operation (e.g. a 1-D-only
/// feature scheme applied to a bivariate batch).
class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A test case was asked for a label mode it cannot provide.
class UnsupportedCase : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Training produced a non-finite loss.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::size_t iteration)
      : std::runtime_error(what), iteration_(iteration) {}
  [[nodiscard]] std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

/// Malformed text input (scheme strings, experiment specs, model files).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line = 0, std::size_t column = 0)
      : std::runtime_error(line == 0 ? what
                                     : std::to_string(line) + ":" + std::to_string(column) + ": " + what),
        line_(line),
        column_(column) {}
  [[nodiscard]] std::size_t line() const noexcept { return line_; }
  [[nodiscard]] std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

}  // namespace distlearn
