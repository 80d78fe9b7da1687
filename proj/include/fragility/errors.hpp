#pragma once

#include <stdexcept>
#include <string>

namespace fragility {

/// Malformed or out-of-contract input (bad CSV, invalid parameters, ...).
class InvalidInput : public std::invalid_argument {
 public:
  explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

/// Argument outside the mathematical domain of a function.
class DomainError : public std::domain_error {
 public:
  explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

/// Moments that no distribution of the requested family can reproduce.
class InfeasibleMoments : public InvalidInput {
 public:
  explicit InfeasibleMoments(const std::string& what) : InvalidInput(what) {}
};

/// Zero-variance input to the Beta surrogate construction.
class DegenerateSurrogate : public InvalidInput {
 public:
  explicit DegenerateSurrogate(const std::string& what) : InvalidInput(what) {}
};

/// Cholesky breakdown, non-finite quadrature and similar.
class NumericalFailure : public std::runtime_error {
 public:
  explicit NumericalFailure(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fragility
