#pragma once

#include <stdexcept>
#include <string>

namespace heal {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid sizes, modes, strategies, or unknown configuration keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input data. Row/column are 1-based when known, 0 otherwise.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t row = 0, std::size_t column = 0)
      : Error(message), row_(row), column_(column) {}
  std::size_t row() const { return row_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

}  // namespace heal
