#pragma once

#include <stdexcept>
#include <string>

namespace msr {

/// Broad failure classes. The CLI maps them onto process exit codes.
enum class ErrorKind {
  kInput,         // malformed data, precondition violations
  kConfig,        // invalid configuration
  kDependency,    // missing upstream artifact or input
  kBackend,       // transport / capability failures
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct InputError : Error {
  explicit InputError(const std::string& what) : Error(ErrorKind::kInput, what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

struct DependencyError : Error {
  explicit DependencyError(const std::string& what) : Error(ErrorKind::kDependency, what) {}
};

struct TransportError : Error {
  explicit TransportError(const std::string& what) : Error(ErrorKind::kBackend, what) {}
};

struct CapabilityError : Error {
  explicit CapabilityError(const std::string& what) : Error(ErrorKind::kBackend, what) {}
};

/// A CompletionRequest that breaks its own invariants.
struct RequestError : InputError {
  using InputError::InputError;
};

struct ImageError : InputError {
  using InputError::InputError;
};

/// Preference blocks applied out of order.
struct SequencingError : InputError {
  using InputError::InputError;
};

/// Neither "yes" nor "no" found in the first-token distribution.
struct ExtractionError : InputError {
  using InputError::InputError;
};

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return 2;
    case ErrorKind::kDependency: return 3;
    case ErrorKind::kBackend: return 4;
    case ErrorKind::kInput: return 1;
  }
  return 1;
}

}  // namespace msr
