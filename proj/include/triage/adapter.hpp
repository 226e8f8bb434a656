#pragma once

#include <string>
#include <vector>

namespace triage {

// External classifier protocol. The adapter is a shell command speaking
// line-delimited JSON over stdin/stdout:
//
//   predict mode: request  {"doc_id": ..., "text": ...}
//                 response {"doc_id": ..., "logit0": ..., "logit1": ...}
//   train mode:   request  {"doc_id": ..., "text": ..., "label": 0|1}
//                 no response lines; exit status 0 acknowledges the fit.
//
// The mode is passed in the TRIAGE_ADAPTER_MODE environment variable. The
// reference regime for a transformer adapter (12-layer uncased encoder,
// hidden size 768, dropout 0.1, learning rate 1e-5, one warm-up epoch) lives
// in the adapter's own configuration; nothing here depends on it.

/// Runs `command` once, writes `requests` (one per line) to its stdin and
/// collects its stdout lines. Throws Error(kAdapterFailure) when the process
/// cannot start or exits non-zero.
std::vector<std::string> run_adapter(const std::string& command, const std::string& mode,
                                     const std::vector<std::string>& requests);

}  // namespace triage
