#pragma once

#include <stdexcept>
#include <string>

namespace intertwine {

// Base of every error raised by the library. `kind()` is a stable short tag
// used in reports.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

/// A point lies outside the declared chart domain or sampling region.
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error("domain", what) {}
};

/// Non-finite intermediates, singular metrics, eigensolver failures.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

/// Malformed configuration, expressions, or arguments.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class TwistSingularError : public Error {
 public:
  TwistSingularError(const std::string& what, double condition)
      : Error("twist-singular", what), condition_(condition) {}
  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

/// A bound or check was requested in a mode whose hypotheses do not hold
/// (e.g. plain mode with a non-vanishing twist defect).
class ModeError : public Error {
 public:
  explicit ModeError(const std::string& what) : Error("mode", what) {}
};

class DegenerateEstimateError : public Error {
 public:
  explicit DegenerateEstimateError(const std::string& what)
      : Error("degenerate-estimate", what) {}
};

class PreconditionError : public Error {
 public:
  explicit PreconditionError(const std::string& what)
      : Error("precondition", what) {}
};

}  // namespace intertwine
