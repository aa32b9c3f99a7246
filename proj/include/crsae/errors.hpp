#pragma once

#include <stdexcept>
#include <string>

namespace crsae {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible array shapes (signal/code/filter length mismatches).
struct DimensionError : Error {
  using Error::Error;
};

// Invalid parameter or configuration value (negative threshold, T < 1, ...).
struct ParamError : Error {
  using Error::Error;
};

// Mathematically undefined request (zero-vector filter error, lambda <= 0).
struct DomainError : Error {
  using Error::Error;
};

// A gradient call received a trace that does not match the given config/filters.
struct StaleTraceError : Error {
  using Error::Error;
};

// NaN/Inf encountered where finite values are required.
struct NumericalError : Error {
  using Error::Error;
};

// File I/O failures, split by kind so callers can react.
struct IoError : Error {
  using Error::Error;
};
struct FormatError : IoError {
  using IoError::IoError;
};
struct VersionError : IoError {
  using IoError::IoError;
};
struct TruncationError : IoError {
  using IoError::IoError;
};

}  // namespace crsae
