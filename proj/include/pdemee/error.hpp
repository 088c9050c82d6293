#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace pdemee {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input arrays have the wrong shape (e.g. missing follow-up sub-outcomes).
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// Input values violate a documented invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A randomization probability needed for a weight lies outside (0, 1).
class PositivityError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Overflow or another non-finite intermediate value.
class NumericError : public Error {
 public:
  using Error::Error;
};

class SingularJacobian : public NumericError {
 public:
  using NumericError::NumericError;
};

/// The root finder ran out of iterations; carries the last iterate.
class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, Eigen::VectorXd last_iterate,
                 double residual_norm)
      : Error(what),
        last_iterate_(std::move(last_iterate)),
        residual_norm_(residual_norm) {}

  const Eigen::VectorXd& last_iterate() const noexcept { return last_iterate_; }
  double residual_norm() const noexcept { return residual_norm_; }

 private:
  Eigen::VectorXd last_iterate_;
  double residual_norm_;
};

/// Malformed run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data file; `line` is 1-based, 0 when not tied to a line.
class DataError : public Error {
 public:
  DataError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace pdemee
