#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace amp_evolve {

enum class ErrorKind {
  InvalidInput,
  Unsupported,
  DegenerateDistribution,
  NumericalFailure,
  InvalidSpec,
  RankDeficient,
  InconsistentConstraints,
  BoundViolation,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::Unsupported: return "Unsupported";
    case ErrorKind::DegenerateDistribution: return "DegenerateDistribution";
    case ErrorKind::NumericalFailure: return "NumericalFailure";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::InconsistentConstraints: return "InconsistentConstraints";
    case ErrorKind::BoundViolation: return "BoundViolation";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Raised by the AMP driver when an iterate goes non-finite or blows up.
class NumericalFailure : public Error {
 public:
  NumericalFailure(const std::string& what, int iteration = -1)
      : Error(ErrorKind::NumericalFailure, what), iteration_(iteration) {}

  int iteration() const noexcept { return iteration_; }

 private:
  int iteration_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  if (kind == ErrorKind::NumericalFailure) throw NumericalFailure(what);
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace amp_evolve
