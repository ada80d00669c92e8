#pragma once

#include <stdexcept>
#include <string>

namespace disarm {

// Caller handed us something that violates a precondition (shape, range, count).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Operation called in the wrong order, e.g. backward before forward.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN/Inf encountered in a loss or gradient. `where` names the offending location.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::string where)
      : std::runtime_error(what + " at " + where), where_(std::move(where)) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

// Malformed file or dataset content.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace disarm
