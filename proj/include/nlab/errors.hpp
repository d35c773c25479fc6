#pragma once

#include <stdexcept>
#include <string>

namespace nlab {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller passed something outside an operation's precondition.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A Lagrangian or field evaluated to a non-finite value.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// The requested operation needs a Lagrangian class this object does not belong to.
class UnsupportedClassError : public Error {
 public:
  using Error::Error;
};

/// SDE specification failed the Lipschitz / linear-growth spot check.
class SpecRejectedError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Too few samples near an evaluation point for a regression estimate.
class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

/// A Lagrangian is not invariant under the requested symmetry group.
class InvarianceError : public Error {
 public:
  using Error::Error;
};

// Numerical failures. The CLI maps these to a distinct exit code.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class DegenerateLagrangianError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class NoConvergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Boundary problem with a one-parameter family of extremals (conjugate point).
class DegenerateFamilyError : public NoConvergenceError {
 public:
  using NoConvergenceError::NoConvergenceError;
};

class BlowUpError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Stochastic action is not finite on the sampled ensemble.
class XiViolationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace nlab
