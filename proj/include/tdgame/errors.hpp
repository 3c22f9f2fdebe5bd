#pragma once

#include <stdexcept>
#include <string>

namespace tdgame {

// Base of everything the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad parameters, malformed scenario files, empty buffers.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller violated an operation precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// The polynomial delay model's 2x2 coupling solve became singular.
class SingularCouplingError : public Error {
 public:
  SingularCouplingError(const std::string& what, double det)
      : Error(what), det_(det) {}
  double determinant() const { return det_; }

 private:
  double det_;
};

// Fixed-point iteration for the algebraic constraints did not converge.
class ConstraintSolveError : public Error {
 public:
  ConstraintSolveError(const std::string& what, double contraction)
      : Error(what), contraction_(contraction) {}
  double contraction_estimate() const { return contraction_; }

 private:
  double contraction_;
};

// A non-finite value appeared in the HJ grid solve.
class InstabilityError : public Error {
 public:
  InstabilityError(const std::string& what, int step, double cfl)
      : Error(what), step_(step), cfl_(cfl) {}
  int step() const { return step_; }
  double cfl_number() const { return cfl_; }

 private:
  int step_;
  double cfl_;
};

}  // namespace tdgame
