#pragma once

#include <stdexcept>
#include <string>

namespace mtl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke a documented precondition (wrong shape, non-scalar loss...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// A primitive produced or received a NaN/Inf value.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid user-supplied configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file; message carries the path and line number.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input whose content is unusable (unknown label, no tagged positions).
class DataError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace mtl
