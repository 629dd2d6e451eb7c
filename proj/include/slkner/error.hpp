// SPDX-License-Identifier: Apache-2.0
/**
 * @file   error.hpp
 * @brief  Exception hierarchy. Every error carries a category that the
 *         command-line driver maps onto a process exit code.
 */
#pragma once

#include <stdexcept>
#include <string>

namespace slkner {

enum class ErrorCategory : int {
  Config = 1,
  Data = 2,
  Numeric = 3,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }
  int exit_code() const noexcept { return static_cast<int>(category_); }

 private:
  ErrorCategory category_;
};

/// Bad configuration, bad flag value, or a function argument out of range.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ErrorCategory::Config, what) {}
};

using ArgumentError = ConfigError;

/// Malformed input data, unreadable/unwritable files.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what)
      : Error(ErrorCategory::Data, what) {}
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& msg)
      : DataError(path + ":" + std::to_string(line) + ": " + msg), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class SchemeError : public DataError {
 public:
  using DataError::DataError;
};

class FormatError : public DataError {
 public:
  FormatError(const std::string& msg, std::size_t row)
      : DataError(msg), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class VocabError : public DataError {
 public:
  using DataError::DataError;
};

/// NaN/Inf produced or consumed where finite values are required.
class NumericFault : public Error {
 public:
  explicit NumericFault(const std::string& what)
      : Error(ErrorCategory::Numeric, what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what)
      : Error(ErrorCategory::Numeric, what) {}
};

}  // namespace slkner
