// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tabflow {

/// Every failure the engine reports carries one of these codes. The CLI maps
/// them onto exit codes and the HTTP service onto status codes.
enum class ErrorCode {
  // table-core
  DecodeError,
  EmptyInput,
  // preprocess
  NoBodyRows,
  TooSparse,
  // orchestrator
  MalformedToolCall,
  NoFinalAnswer,
  BackendFailure,
  // sandbox
  SetupError,
  SandboxBusy,
  // charttool
  SchemaError,
  RenderError,
  // corpus-filter
  JudgeUnparseable,
  EmptyCategory,
  // synthesis
  Ineligible,
  TooShallow,
  VerificationFailed,
  Unresolved,
  NoMajority,
  // grpo
  LengthMismatch,
  ShapeMismatch,
  // general
  InvalidArgument,
  NotFound,
  IoError,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

/// Schema violation reported by the chart tool; `field` names the offending
/// parameter so the model can repair its call.
class SchemaError : public Error {
public:
  SchemaError(std::string field, const std::string& reason)
      : Error(ErrorCode::SchemaError, field + ": " + reason), field_(std::move(field)),
        reason_(reason) {}

  const std::string& field() const noexcept { return field_; }
  const std::string& reason() const noexcept { return reason_; }

private:
  std::string field_;
  std::string reason_;
};

} // namespace tabflow
