#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace imf {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: malformed shapes, invalid distributions, exceeded budgets.
/// The CLI maps these to exit code 2.
class InputError : public Error {
 public:
  using Error::Error;
};

class DomainError : public InputError {
 public:
  using InputError::InputError;
};

class ValidationError : public InputError {
 public:
  using InputError::InputError;
};

class BudgetError : public InputError {
 public:
  using InputError::InputError;
};

/// A computation that cannot be completed on valid input. Exit code 3.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Conditioning on a cell with zero mass.
class SingularConditioningError : public NumericalError {
 public:
  SingularConditioningError(const std::string& what, std::vector<int> cell)
      : NumericalError(what), cell_(std::move(cell)) {}
  const std::vector<int>& cell() const noexcept { return cell_; }

 private:
  std::vector<int> cell_;
};

/// KL(p||q) with p(w) > 0 and q(w) = 0.
class InfiniteDivergenceError : public NumericalError {
 public:
  InfiniteDivergenceError(const std::string& what, std::size_t cell)
      : NumericalError(what), cell_(cell) {}
  std::size_t cell() const noexcept { return cell_; }

 private:
  std::size_t cell_;
};

class NonConvergenceError : public NumericalError {
 public:
  NonConvergenceError(const std::string& what, double residual, long iterations)
      : NumericalError(what), residual_(residual), iterations_(iterations) {}
  double residual() const noexcept { return residual_; }
  long iterations() const noexcept { return iterations_; }

 private:
  double residual_;
  long iterations_;
};

}  // namespace imf
