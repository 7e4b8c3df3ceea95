#pragma once

#include <stdexcept>
#include <string>

namespace twoarm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input violates a documented precondition (bad shapes, out-of-range
/// probabilities, malformed files). The CLI maps this to exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A numerical routine failed at run time (non-finite likelihood, sampler
/// breakdown). The CLI maps this to exit code 3.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace twoarm
