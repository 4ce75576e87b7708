#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace codd {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller passed arguments that violate an operation's preconditions.
class InputError : public Error {
 public:
  using Error::Error;
};

// Graph is malformed (dangling child id, order violation, bad arity).
// Distinct from property violations, which validate_structure reports.
class StructuralError : public Error {
 public:
  using Error::Error;
};

// Evidence has zero probability under the model (Z = 0).
class ContradictionError : public Error {
 public:
  using Error::Error;
};

// Enumeration oracle refused a query larger than its budget.
class BudgetError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite objective.
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Binary or text file failed to decode.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace codd
