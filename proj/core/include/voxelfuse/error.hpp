#pragma once

#include <stdexcept>
#include <string>

namespace voxelfuse {

// Base of every exception the library throws. The CLI maps NumericError to
// exit code 3 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes disagree (matmul inner dims, channel widths, ...).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN input, degenerate vector, diverging loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Caller violated a precondition that is not a shape problem.
class ContractError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// Invalid GridSpec / DepthBinSpec / AttentionConfig values.
class SpecError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace voxelfuse
