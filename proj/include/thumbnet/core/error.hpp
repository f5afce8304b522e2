#pragma once

#include <stdexcept>
#include <string>

namespace thumbnet {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Invalid arguments, configuration values, or API misuse. CLI exit code 2.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(what) {}
};

// Incompatible tensor/layer shapes. A kind of usage error.
class GeometryError : public UsageError {
 public:
  explicit GeometryError(const std::string& what) : UsageError(what) {}
};

// Malformed input files (datasets, tensors, checkpoints). CLI exit code 3.
class DataFormatError : public Error {
 public:
  explicit DataFormatError(const std::string& what) : Error(what) {}
};

// Non-finite values produced during computation. CLI exit code 4.
class NumericFault : public Error {
 public:
  explicit NumericFault(const std::string& what) : Error(what) {}
};

}  // namespace thumbnet
