#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mtdgrid {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed case/config/model text. Carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed input that violates a model invariant (disconnected grid,
/// nonpositive reactance, missing slack, ...).
class SemanticError : public Error {
 public:
  using Error::Error;
};

/// Linear algebra failure: singular normal matrix, rank deficiency.
class RankDeficientError : public Error {
 public:
  using Error::Error;
};

class InfeasibleError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient during training / attack generation.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace mtdgrid
