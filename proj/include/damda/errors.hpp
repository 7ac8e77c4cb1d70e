#pragma once

#include <stdexcept>
#include <string>

namespace damda {

// Every error raised by the library derives from Error so callers (the CLI in
// particular) can map families of failures onto stable exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class NotPositiveDefinite : public Error {
 public:
  using Error::Error;
};

/// Assembled [[fixed, cross], [cross', new]] block matrix whose Schur
/// complement failed the positive-definiteness gate.
class InvalidAugmentedCovariance : public NotPositiveDefinite {
 public:
  using NotPositiveDefinite::NotPositiveDefinite;
};

/// Training data that cannot support a class density (too few rows,
/// constant columns in every structure, ...).
class DegenerateClass : public Error {
 public:
  using Error::Error;
};

/// Numerical failure of an iterative fit (collapse, singular scatter).
class FitFailure : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class AlignmentError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace damda
