#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pmedit {

enum class ErrorKind {
  DimensionMismatch,
  NotSPD,
  Singular,
  SingularGram,
  DegenerateKey,
  DuplicateKey,
  Diverged,
  InvalidConfig,
  UnknownFactId,
  SchemaMismatch,
  IoError,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::NotSPD: return "NotSPD";
    case ErrorKind::Singular: return "Singular";
    case ErrorKind::SingularGram: return "SingularGram";
    case ErrorKind::DegenerateKey: return "DegenerateKey";
    case ErrorKind::DuplicateKey: return "DuplicateKey";
    case ErrorKind::Diverged: return "Diverged";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::UnknownFactId: return "UnknownFactId";
    case ErrorKind::SchemaMismatch: return "SchemaMismatch";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

/// Numerical failures are the ones a caller can recover from by changing
/// a ridge, a step size or the batch composition.
constexpr bool is_numerical(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NotSPD:
    case ErrorKind::Singular:
    case ErrorKind::SingularGram:
    case ErrorKind::DegenerateKey:
    case ErrorKind::DuplicateKey:
    case ErrorKind::Diverged:
      return true;
    default:
      return false;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace pmedit
