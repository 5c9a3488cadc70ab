#pragma once

#include <stdexcept>
#include <string>

namespace usbl {

enum class ErrorCode {
  Usage,
  Io,
  MissingFile,
  BadMagic,
  DtypeMismatch,
  Truncated,
  BadManifest,
  ShapeMismatch,
  LabelMissing,
  ConditionLengthMismatch,
  MissingModality,
  ZeroVariance,
  DomainError,
  ZeroRow,
  DegenerateGeometry,
  NotPositiveDefinite,
  NonFinite,
  StratificationFailure,
  OneConditionOnly,
  DegenerateRT,
  WindowOutOfRange,
  InsufficientData,
  Undefined,
};

/// Broad class used by the C API and the CLI exit codes.
enum class ErrorClass { Usage, Data, Numerical };

const char* error_code_name(ErrorCode code);
ErrorClass error_class(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace usbl
