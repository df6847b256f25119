#include "fedstage/errors.hpp"

namespace fedstage {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidRequest: return "invalid-request";
    case ErrorCode::ShapeMismatch: return "shape-mismatch";
    case ErrorCode::TrainingDiverged: return "training-diverged";
    case ErrorCode::DuplicateClient: return "duplicate-client";
    case ErrorCode::IncompatibleUpdate: return "incompatible-update";
    case ErrorCode::StageOverflow: return "stage-overflow";
    case ErrorCode::StageIncomplete: return "stage-incomplete";
    case ErrorCode::EmptyStage: return "empty-stage";
    case ErrorCode::StaleStage: return "stale-stage";
    case ErrorCode::PairedLength: return "paired-length";
    case ErrorCode::DegenerateSample: return "degenerate-sample";
    case ErrorCode::Protocol: return "protocol";
    case ErrorCode::Unsupported: return "unsupported";
    case ErrorCode::Truncated: return "truncated";
    case ErrorCode::Format: return "format";
    case ErrorCode::Arithmetic: return "arithmetic";
    case ErrorCode::Config: return "config";
    case ErrorCode::Io: return "io";
    case ErrorCode::Network: return "network";
  }
  return "unknown";
}

}  // namespace fedstage
