#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace prevalshift {

/// Failure categories surfaced by the library. The CLI maps these onto exit codes.
enum class ErrorCode {
  EmptyDataset,
  InvalidFractions,
  LengthMismatch,
  ZeroTotalWeight,
  MissingScores,
  MissingLabels,
  SingleClassCalibration,
  DegenerateRates,
  DegenerateMeans,
  InvalidSourcePrevalence,
  SolverDiverged,
  SchemaMismatch,
  AllZeroWeights,
  MissingCalibratorFeatures,
  ZeroMeanScore,
  EmptyGroup,
  InsufficientData,
  InvalidEpsilon,
  BoundaryScore,
  SingleClass,
  UnknownMethod,
  FeatureNotFound,
  NonNumericFeature,
  ZeroTruth,
  InvalidArgument,
  InvalidConfig,
  ParseError,
  IoError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::InvalidFractions: return "InvalidFractions";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ZeroTotalWeight: return "ZeroTotalWeight";
    case ErrorCode::MissingScores: return "MissingScores";
    case ErrorCode::MissingLabels: return "MissingLabels";
    case ErrorCode::SingleClassCalibration: return "SingleClassCalibration";
    case ErrorCode::DegenerateRates: return "DegenerateRates";
    case ErrorCode::DegenerateMeans: return "DegenerateMeans";
    case ErrorCode::InvalidSourcePrevalence: return "InvalidSourcePrevalence";
    case ErrorCode::SolverDiverged: return "SolverDiverged";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::AllZeroWeights: return "AllZeroWeights";
    case ErrorCode::MissingCalibratorFeatures: return "MissingCalibratorFeatures";
    case ErrorCode::ZeroMeanScore: return "ZeroMeanScore";
    case ErrorCode::EmptyGroup: return "EmptyGroup";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::InvalidEpsilon: return "InvalidEpsilon";
    case ErrorCode::BoundaryScore: return "BoundaryScore";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::UnknownMethod: return "UnknownMethod";
    case ErrorCode::FeatureNotFound: return "FeatureNotFound";
    case ErrorCode::NonNumericFeature: return "NonNumericFeature";
    case ErrorCode::ZeroTruth: return "ZeroTruth";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace prevalshift
