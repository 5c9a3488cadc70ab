#include "usbl/error.hpp"

namespace usbl {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::Usage: return "Usage";
    case ErrorCode::Io: return "Io";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::DtypeMismatch: return "DtypeMismatch";
    case ErrorCode::Truncated: return "Truncated";
    case ErrorCode::BadManifest: return "BadManifest";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::LabelMissing: return "LabelMissing";
    case ErrorCode::ConditionLengthMismatch: return "ConditionLengthMismatch";
    case ErrorCode::MissingModality: return "MissingModality";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::ZeroRow: return "ZeroRow";
    case ErrorCode::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::StratificationFailure: return "StratificationFailure";
    case ErrorCode::OneConditionOnly: return "OneConditionOnly";
    case ErrorCode::DegenerateRT: return "DegenerateRT";
    case ErrorCode::WindowOutOfRange: return "WindowOutOfRange";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::Undefined: return "Undefined";
  }
  return "Unknown";
}

ErrorClass error_class(ErrorCode code) {
  switch (code) {
    case ErrorCode::Usage:
      return ErrorClass::Usage;
    case ErrorCode::ZeroVariance:
    case ErrorCode::DomainError:
    case ErrorCode::ZeroRow:
    case ErrorCode::DegenerateGeometry:
    case ErrorCode::NotPositiveDefinite:
    case ErrorCode::NonFinite:
    case ErrorCode::DegenerateRT:
    case ErrorCode::Undefined:
      return ErrorClass::Numerical;
    default:
      return ErrorClass::Data;
  }
}

}  // namespace usbl
