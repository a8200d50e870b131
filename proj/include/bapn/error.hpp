#pragma once

#include <stdexcept>
#include <string>

namespace bapn {

enum class ErrorCode {
  SilentInput,
  BadConfig,
  ShapeMismatch,
  BadOrientation,
  EmptyStack,
  UnknownClass,
  DegenerateBatch,
  LabelOutOfRange,
  MissingGrad,
  MissingTarget,
  DataMissing,
  DivergedLoss,
  CheckpointCorrupt,
  IoFailure,
  BadAudioFormat,
  NonpositiveGroundTruth,
  Internal,
};

inline const char* error_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::SilentInput: return "SilentInput";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::BadOrientation: return "BadOrientation";
    case ErrorCode::EmptyStack: return "EmptyStack";
    case ErrorCode::UnknownClass: return "UnknownClass";
    case ErrorCode::DegenerateBatch: return "DegenerateBatch";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::MissingGrad: return "MissingGrad";
    case ErrorCode::MissingTarget: return "MissingTarget";
    case ErrorCode::DataMissing: return "DataMissing";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::CheckpointCorrupt: return "CheckpointCorrupt";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::BadAudioFormat: return "BadAudioFormat";
    case ErrorCode::NonpositiveGroundTruth: return "NonpositiveGroundTruth";
    case ErrorCode::Internal: return "Internal";
  }
  return "Unknown";
}

/// Single exception type for the whole library; the code tells callers
/// (and the CLI's JSON error output) what went wrong.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(std::string(error_name(code)) + ": " + msg), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode c, const std::string& msg) { throw Error(c, msg); }

inline void require(bool cond, ErrorCode c, const std::string& msg) {
  if (!cond) fail(c, msg);
}

}  // namespace bapn
