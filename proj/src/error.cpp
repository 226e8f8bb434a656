#include "triage/error.hpp"

namespace triage {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUnreadableFile: return "unreadable_file";
    case ErrorCode::kMissingColumn: return "missing_column";
    case ErrorCode::kEmptyCorpus: return "empty_corpus";
    case ErrorCode::kParseError: return "parse_error";
    case ErrorCode::kInvalidDocument: return "invalid_document";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kSingleClass: return "single_class";
    case ErrorCode::kUntrainedModel: return "untrained_model";
    case ErrorCode::kMissingText: return "missing_text";
    case ErrorCode::kUnknownDocument: return "unknown_document";
    case ErrorCode::kPendingLabels: return "pending_labels";
    case ErrorCode::kWrongPhase: return "wrong_phase";
    case ErrorCode::kIdSetMismatch: return "id_set_mismatch";
    case ErrorCode::kTargetUnreachable: return "target_unreachable";
    case ErrorCode::kConflict: return "conflict";
    case ErrorCode::kNotFound: return "not_found";
    case ErrorCode::kAdapterFailure: return "adapter_failure";
    case ErrorCode::kIo: return "io_error";
  }
  return "unknown";
}

}  // namespace triage
