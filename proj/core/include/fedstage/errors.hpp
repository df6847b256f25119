#pragma once

#include <stdexcept>
#include <string>

namespace fedstage {

enum class ErrorCode {
  InvalidRequest = 1,
  ShapeMismatch,
  TrainingDiverged,
  DuplicateClient,
  IncompatibleUpdate,
  StageOverflow,
  StageIncomplete,
  EmptyStage,
  StaleStage,
  PairedLength,
  DegenerateSample,
  Protocol,
  Unsupported,
  Truncated,
  Format,
  Arithmetic,
  Config,
  Io,
  Network,
};

const char* error_code_name(ErrorCode code);

class FedError : public std::runtime_error {
 public:
  FedError(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) {
  throw FedError(code, msg);
}

}  // namespace fedstage
