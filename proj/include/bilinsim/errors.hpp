#pragma once

#include <stdexcept>
#include <string>

namespace bilinsim {

// Base for every error raised by the library. The subclasses map onto the
// CLI exit codes (see cli.hpp), so keep them distinct.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shapes or layer dimensions that do not compose / match.
struct ShapeError : Error {
  using Error::Error;
};

// A value-level precondition was violated (odd matching size, order out of
// range, asymmetric input, label out of range, ...).
struct DomainError : Error {
  using Error::Error;
};

// Materialisation or enumeration would exceed a hard size guard.
struct GuardError : Error {
  using Error::Error;
};

// Zero norm where a cosine-type quantity needs a nonzero denominator.
struct DegenerateError : Error {
  using Error::Error;
};

// The requested metric does not apply to the stack shape (e.g. Gaussian
// metrics on a stack with more than one bilinear layer).
struct UnsupportedError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct DivergenceError : Error {
  DivergenceError(const std::string& what, long step) : Error(what), step(step) {}
  long step;
};

}  // namespace bilinsim
