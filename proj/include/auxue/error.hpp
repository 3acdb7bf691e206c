#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace auxue {

// Base of every error raised by the library. `stage` is filled in by the
// harness when an error crosses a pipeline boundary.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Operand shapes do not conform.
class ShapeError : public Error {
 public:
  ShapeError(const std::string& op, std::string lhs, std::string rhs)
      : Error(op + ": shape mismatch " + lhs + " vs " + rhs),
        op_(op),
        lhs_(std::move(lhs)),
        rhs_(std::move(rhs)) {}

  const std::string& op() const { return op_; }
  const std::string& lhs_shape() const { return lhs_; }
  const std::string& rhs_shape() const { return rhs_; }

 private:
  std::string op_;
  std::string lhs_;
  std::string rhs_;
};

// Argument outside the mathematical domain of a function (log of a
// non-positive number, a non-positive scale parameter, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed input file (CSV, checkpoint, report).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss or gradient.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Wraps any error with the name of the pipeline stage that raised it.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("[" + stage + "] " + what), stage_(std::move(stage)) {}

  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace auxue
