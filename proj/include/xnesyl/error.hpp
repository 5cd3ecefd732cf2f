#pragma once

#include <stdexcept>
#include <string>

namespace xnesyl {

// Malformed or inconsistent input (files, labels, dimensions).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite losses, singular systems, undefined normalizations.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad command-line usage or contradictory configuration.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace xnesyl
