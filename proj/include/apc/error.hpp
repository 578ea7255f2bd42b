#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace apc {

enum class Errc {
  InvalidLayout,
  UnknownField,
  ValueOutOfRange,
  EngineMismatch,
  InvalidHandle,
  LengthMismatch,
  ConstantPredicate,
  SyntaxError,
  UnknownBoxRef,
  DuplicatePort,
  BadConstraint,
  InvalidSnapshot,
  Inconsistent,
  UnknownPredicate,
  MissingMembership,
  BadIngress,
  ImageSplit,
  PreconditionViolation,
  LabelCollision,
  UnknownLabel,
  InfeasibleSpec,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::InvalidLayout: return "InvalidLayout";
    case Errc::UnknownField: return "UnknownField";
    case Errc::ValueOutOfRange: return "ValueOutOfRange";
    case Errc::EngineMismatch: return "EngineMismatch";
    case Errc::InvalidHandle: return "InvalidHandle";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::ConstantPredicate: return "ConstantPredicate";
    case Errc::SyntaxError: return "SyntaxError";
    case Errc::UnknownBoxRef: return "UnknownBoxRef";
    case Errc::DuplicatePort: return "DuplicatePort";
    case Errc::BadConstraint: return "BadConstraint";
    case Errc::InvalidSnapshot: return "InvalidSnapshot";
    case Errc::Inconsistent: return "Inconsistent";
    case Errc::UnknownPredicate: return "UnknownPredicate";
    case Errc::MissingMembership: return "MissingMembership";
    case Errc::BadIngress: return "BadIngress";
    case Errc::ImageSplit: return "ImageSplit";
    case Errc::PreconditionViolation: return "PreconditionViolation";
    case Errc::LabelCollision: return "LabelCollision";
    case Errc::UnknownLabel: return "UnknownLabel";
    case Errc::InfeasibleSpec: return "InfeasibleSpec";
  }
  return "Unknown";
}

/// Every failure the library reports is an `Error` carrying a stable code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace apc
