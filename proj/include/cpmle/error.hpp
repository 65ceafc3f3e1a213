#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Core>

namespace cpmle {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed arguments: bad sizes, infeasible configurations, mismatched n.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// An observation outside the support of a family.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Parameters outside the natural domain of a family or outside the box.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// An iterative maximizer stopped without meeting its convergence test.
class OptimizationError : public Error {
 public:
  OptimizationError(const std::string& what, Eigen::VectorXd best, double gradient_norm)
      : Error(what), best_(std::move(best)), gradient_norm_(gradient_norm) {}

  const Eigen::VectorXd& best_iterate() const { return best_; }
  double gradient_norm() const { return gradient_norm_; }

 private:
  Eigen::VectorXd best_;
  double gradient_norm_;
};

class IntegrationError : public Error {
 public:
  IntegrationError(const std::string& what, double achieved) : Error(what), achieved_(achieved) {}
  double achieved_tolerance() const { return achieved_; }

 private:
  double achieved_;
};

/// Adjacent true segments cannot be told apart (Ḡ ≥ 0).
class IdentifiabilityError : public Error {
 public:
  using Error::Error;
};

class InferenceError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

/// Problem too large for an exhaustive method.
class SizeError : public Error {
 public:
  using Error::Error;
};

class LemmaCheckError : public Error {
 public:
  using Error::Error;
};

/// A broken invariant inside the library; always a bug.
class InternalError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column)
      : Error(what + " (line " + std::to_string(line) + ", column " + std::to_string(column) + ")"),
        line_(line),
        column_(column) {}

  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

}  // namespace cpmle
