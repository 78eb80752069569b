#pragma once

#include <stdexcept>
#include <string>

namespace fblab {

// Base for every error raised by the library. The CLI maps subclasses onto
// exit codes (see tools/fblab_cli.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition violated by a value (bad action, empty segment, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// User configuration is invalid (zero budgets, k > n, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Feature/parameter dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Operation is not available for this environment (exact values on PointMass).
class UnsupportedEnvError : public Error {
 public:
  using Error::Error;
};

// Base for problems with data (as opposed to configuration).
class DataError : public Error {
 public:
  using Error::Error;
};

class CalibrationError : public DataError {
 public:
  using DataError::DataError;
};

// A generator could not assemble the requested number of instances.
class GenerationExhaustedError : public DataError {
 public:
  GenerationExhaustedError(const std::string& what, std::size_t produced)
      : DataError(what), produced_(produced) {}
  std::size_t produced() const { return produced_; }

 private:
  std::size_t produced_;
};

class SchemaError : public DataError {
 public:
  using DataError::DataError;
};

class TruncatedFileError : public DataError {
 public:
  using DataError::DataError;
};

class HashMismatchError : public DataError {
 public:
  using DataError::DataError;
};

// File holds a different feedback type than the caller asked for.
class DatasetTypeError : public DataError {
 public:
  using DataError::DataError;
};

// A pipeline stage failed; the manifest records the stage as failed.
class StageError : public Error {
 public:
  StageError(const std::string& stage, const std::string& what) : Error(stage + ": " + what), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace fblab
