#pragma once

#include <stdexcept>
#include <string>

namespace resgcn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition (non-scalar loss, non-square matrix, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameter or model/layer configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A graph row has no entries, so degree normalization is undefined.
class DegenerateGraphError : public Error {
 public:
  using Error::Error;
};

/// Dataset directory is missing, truncated or inconsistent.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared in an integrator state or a training loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Adaptive integration could not make progress.
class StiffnessError : public Error {
 public:
  using Error::Error;
};

}  // namespace resgcn
