#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sdelab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid user input: configuration, parameters, preconditions.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A point (or a finite-difference stencil) outside the system domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

// A coefficient field produced a non-finite value.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

class StepSizeError : public Error {
 public:
  StepSizeError(const std::string& what, double suggested_dt)
      : Error(what), suggested_dt_(suggested_dt) {}
  double suggested_dt() const noexcept { return suggested_dt_; }

 private:
  double suggested_dt_;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::int64_t path, std::int64_t step)
      : Error(what), path_(path), step_(step) {}
  std::int64_t path() const noexcept { return path_; }
  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t path_;
  std::int64_t step_;
};

// Singular or defective linear systems, lost nonnegativity.
class SolverError : public Error {
 public:
  using Error::Error;
};

// An image grid too coarse to carry the transformed mass.
class ResolutionError : public Error {
 public:
  using Error::Error;
};

class TransformError : public Error {
 public:
  using Error::Error;
};

}  // namespace sdelab
