#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace triage {

enum class ErrorCode {
  kUnreadableFile,
  kMissingColumn,
  kEmptyCorpus,
  kParseError,
  kInvalidDocument,
  kInvalidArgument,
  kNonFinite,
  kSingleClass,
  kUntrainedModel,
  kMissingText,
  kUnknownDocument,
  kPendingLabels,
  kWrongPhase,
  kIdSetMismatch,
  kTargetUnreachable,
  kConflict,
  kNotFound,
  kAdapterFailure,
  kIo,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-readable code alongside the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace triage
