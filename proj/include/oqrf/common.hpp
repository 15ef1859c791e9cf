#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace oqrf {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr const char* kVersion = "0.3.1";

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text (CSV rows, JSON documents).
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, std::size_t line)
      : Error(msg + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Missing or mismatched columns / dimensions.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Values that violate a documented invariant (NaN, out of range, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Iterative solver ran out of iterations. Carries the last iterate.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& msg, Vector last_iterate, double gap, int iterations)
      : Error(msg + " (gap " + std::to_string(gap) + " after " + std::to_string(iterations) +
              " iterations)"),
        last_iterate_(std::move(last_iterate)),
        gap_(gap),
        iterations_(iterations) {}

  const Vector& last_iterate() const noexcept { return last_iterate_; }
  double gap() const noexcept { return gap_; }
  int iterations() const noexcept { return iterations_; }

 private:
  Vector last_iterate_;
  double gap_;
  int iterations_;
};

}  // namespace oqrf
