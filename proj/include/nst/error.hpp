#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace nst {

// Every failure raised by the engine derives from Error so callers (the CLI
// in particular) can map categories to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand extents disagree (channel counts, elementwise shapes, ...).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Kernel/window does not fit, or the output would be empty.
class GeometryError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or consumed where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A name or node id does not resolve.
class LookupError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Unparseable text input (config JSON, loss CSV).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Spec/config validation; carries every violation found, not just the first.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> violations)
      : Error(join(violations)), violations_(std::move(violations)) {}

  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (const auto& item : items) {
      if (!out.empty()) out += "; ";
      out += item;
    }
    return out;
  }

  std::vector<std::string> violations_;
};

}  // namespace nst
