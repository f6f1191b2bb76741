// Copyright The spinepoi Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace spinepoi {

enum class ErrorCode {
  InvalidFrame,
  EmptySubregion,
  InsufficientVertebrae,
  DegenerateCenterline,
  EmptySpine,
  LabelDictionaryError,
  DegenerateOrientation,
  PreconditionViolation,
  RayOriginOutside,
  RayMiss,
  BisectionStartOutside,
  BisectionDiverged,
  PhantomDegenerate,
  ParseError,
  NotALabelMap,
  VersionError,
  FormatError,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidFrame: return "InvalidFrame";
    case ErrorCode::EmptySubregion: return "EmptySubregion";
    case ErrorCode::InsufficientVertebrae: return "InsufficientVertebrae";
    case ErrorCode::DegenerateCenterline: return "DegenerateCenterline";
    case ErrorCode::EmptySpine: return "EmptySpine";
    case ErrorCode::LabelDictionaryError: return "LabelDictionaryError";
    case ErrorCode::DegenerateOrientation: return "DegenerateOrientation";
    case ErrorCode::PreconditionViolation: return "PreconditionViolation";
    case ErrorCode::RayOriginOutside: return "RayOriginOutside";
    case ErrorCode::RayMiss: return "RayMiss";
    case ErrorCode::BisectionStartOutside: return "BisectionStartOutside";
    case ErrorCode::BisectionDiverged: return "BisectionDiverged";
    case ErrorCode::PhantomDegenerate: return "PhantomDegenerate";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::NotALabelMap: return "NotALabelMap";
    case ErrorCode::VersionError: return "VersionError";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers can branch on the kind without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace spinepoi
