#pragma once

#include <stdexcept>
#include <string>

namespace cfrl {

enum class ErrorKind {
  Config,     // bad hyperparameters, missing stage dependencies, schema mismatch
  Data,       // ingestion / file format problems
  Dimension,  // shape mismatch between tensors
  Usage,      // API misuse (stale cache, empty batch, ...)
  Numeric,    // non-finite values
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(ErrorKind::Dimension, what) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::Usage, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

// Process exit code for the command-line tool.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Usage:
      return 2;
    case ErrorKind::Data:
    case ErrorKind::Dimension:
      return 3;
    case ErrorKind::Numeric:
      return 4;
  }
  return 1;
}

}  // namespace cfrl
