// Copyright 2026 The voxelser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace voxelser {

enum class ErrorCode {
  CoordinateOutOfRange,
  KeyOutOfRange,
  UnknownCurve,
  EmptyScene,
  InvalidGroupSize,
  InvalidShiftConfig,
  ShapeMismatch,
  BackwardBeforeForward,
  NonDeterministicFunction,
  LabelOutOfRange,
  DegenerateClass,
  PrimitiveOutOfBounds,
  BadConfig,
  FileError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::CoordinateOutOfRange: return "CoordinateOutOfRange";
    case ErrorCode::KeyOutOfRange: return "KeyOutOfRange";
    case ErrorCode::UnknownCurve: return "UnknownCurve";
    case ErrorCode::EmptyScene: return "EmptyScene";
    case ErrorCode::InvalidGroupSize: return "InvalidGroupSize";
    case ErrorCode::InvalidShiftConfig: return "InvalidShiftConfig";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::BackwardBeforeForward: return "BackwardBeforeForward";
    case ErrorCode::NonDeterministicFunction: return "NonDeterministicFunction";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::DegenerateClass: return "DegenerateClass";
    case ErrorCode::PrimitiveOutOfBounds: return "PrimitiveOutOfBounds";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::FileError: return "FileError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so the
/// CLI can map it onto its exit-code contract.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

}  // namespace voxelser
