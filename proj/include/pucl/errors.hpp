#pragma once

#include <stdexcept>
#include <string>

namespace pucl {

// Invalid configuration value or shape mismatch between collaborating components.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse: empty inputs where data is required, stale caches, bad arguments.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite values or other numeric failures during optimization.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file. `line` is 1-based, 0 when not applicable.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(line > 0 ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace pucl
