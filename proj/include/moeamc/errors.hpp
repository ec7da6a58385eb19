#pragma once

#include <stdexcept>
#include <string>

namespace moeamc {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad arguments, shape mismatches, inconsistent configuration.
struct ValidationError : Error {
  using Error::Error;
};

// File system and serialization failures.
struct IoError : Error {
  using Error::Error;
};

// NaN/Inf escaping a forward op.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace moeamc
