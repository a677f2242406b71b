#pragma once

#include <stdexcept>
#include <string>

namespace mad {

// Base of every error raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DescriptorError : Error {
  using Error::Error;
};

// Analytic function evaluated outside of its domain (inv(0), log(-1), ...).
struct DomainError : Error {
  using Error::Error;
};

// Particle or map left the physical domain of a tracking map.
struct LostError : Error {
  using Error::Error;
};

struct NormalFormError : Error {
  using Error::Error;
};

struct ParseError : Error {
  int line = 0;
  int column = 0;
  ParseError(const std::string& what, int ln, int col)
      : Error("line " + std::to_string(ln) + ", column " + std::to_string(col) + ": " + what),
        line(ln), column(col) {}
};

// Job-level failure (unknown command, bad attribute, ...).
struct CommandError : Error {
  using Error::Error;
};

}  // namespace mad
