#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mmt {

/// Broad failure classes. The CLI prints the category name on error.
enum class ErrorKind {
  configuration,
  input,
  empty_input,
  domain,
  dimension,
  degenerate_pose,
  extraction,
  coverage,
  solver,
  model,
  io,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::configuration: return "configuration";
    case ErrorKind::input: return "input";
    case ErrorKind::empty_input: return "empty-input";
    case ErrorKind::domain: return "domain";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::degenerate_pose: return "degenerate-pose";
    case ErrorKind::extraction: return "extraction";
    case ErrorKind::coverage: return "coverage";
    case ErrorKind::solver: return "solver";
    case ErrorKind::model: return "model";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace mmt
