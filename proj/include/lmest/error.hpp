#pragma once

#include <stdexcept>
#include <string>

namespace lmest {

enum class ErrorKind {
  Usage,        // bad arguments or dimension mismatch
  Parse,        // malformed input file
  Io,           // unreadable / unwritable path
  Numerical,    // non-finite likelihood and friends
  Degenerate,   // zero normalizer in a posterior or likelihood
  Separation,   // logit coefficients diverging
  Convergence,  // iterative solver hit its cap
  Harness,      // too many failed replications / bootstrap draws
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Io: return "io";
    case ErrorKind::Numerical: return "numerical";
    case ErrorKind::Degenerate: return "degenerate";
    case ErrorKind::Separation: return "separation";
    case ErrorKind::Convergence: return "convergence";
    case ErrorKind::Harness: return "harness";
  }
  return "unknown";
}

// Single exception type for the library; the kind drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  Error with_context(const std::string& context) const {
    return Error(kind_, context + ": " + what());
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool condition, const std::string& what) {
  if (!condition) throw Error(ErrorKind::Usage, what);
}

}  // namespace lmest
