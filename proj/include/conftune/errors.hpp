#pragma once

#include <stdexcept>
#include <string>

namespace conftune {

// Base of everything this library throws. Validation failures and I/O
// failures are kept apart so callers (the CLI in particular) can map them
// to distinct exit codes.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed input, violated invariant, or bad parameter.
class ValidationError : public Error {
public:
  using Error::Error;
};

// File could not be opened, read, or written.
class IoError : public Error {
public:
  using Error::Error;
};

} // namespace conftune
