#pragma once

#include <stdexcept>
#include <string>

namespace exrec {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered, or a numerical routine failed.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Caller supplied invalid data.
class InputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Operation is not valid in the object's current state.
class StateError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ConvergenceError : public NumericError {
 public:
  ConvergenceError(const std::string& what, std::string trace)
      : NumericError(what), trace_(std::move(trace)) {}
  const std::string& trace() const noexcept { return trace_; }

 private:
  std::string trace_;
};

}  // namespace exrec
