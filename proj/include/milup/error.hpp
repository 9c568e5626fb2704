#pragma once

#include <stdexcept>
#include <string>

namespace milup {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Dimension mismatch between matrices, caches or parameter sets.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed value in an input table. `row()` is the 1-based data row
// (the header is not counted), 0 when not tied to a row.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t row)
      : Error(what), row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

// A column named by the schema is absent from the header.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& what, std::string column)
      : Error(what), column_(std::move(column)) {}
  const std::string& column() const { return column_; }

 private:
  std::string column_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Metric or estimate that is undefined for the given input (e.g. one arm is
// empty).
class UndefinedError : public Error {
 public:
  using Error::Error;
};

// Training diverged (non-finite loss).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace milup
