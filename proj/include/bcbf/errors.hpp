#pragma once

#include <stdexcept>
#include <string>

namespace bcbf {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of a function (erfinv(±1), ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration: bad risk level, wrong dimensions, malformed scenario.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A quantity that must be invertible or strictly positive is not.
class SingularError : public Error {
 public:
  using Error::Error;
};

/// An iterative method ran out of iterations.
class NonConvergenceError : public Error {
 public:
  using Error::Error;
};

/// The QP has no feasible point; `row()` is the constraint that could not be
/// satisfied (index into the solver's stacked constraint list).
class InfeasibleError : public Error {
 public:
  InfeasibleError(const std::string& what, int row) : Error(what), row_(row) {}
  int row() const noexcept { return row_; }

 private:
  int row_;
};

}  // namespace bcbf
