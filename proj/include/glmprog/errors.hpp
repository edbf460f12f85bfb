#pragma once

#include <stdexcept>
#include <string>

namespace glmprog {

// Base of every error raised by the library. Callers that only need to
// distinguish "our" failures from programming errors catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or invariant-violating input data (CSV rows, arm values, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

// A value outside the domain of an effect measure, link, or transform.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Fold construction that cannot satisfy the stratification constraints.
class FoldError : public Error {
 public:
  using Error::Error;
};

class SingularDesignError : public Error {
 public:
  using Error::Error;
};

// Coefficients left the box |beta_j| <= b.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

// solve_psi1 and required_sample_size when no answer exists.
class NoSolutionError : public Error {
 public:
  using Error::Error;
};

// A diagnostic check whose preconditions are not met.
class InvalidCheckError : public Error {
 public:
  using Error::Error;
};

}  // namespace glmprog
