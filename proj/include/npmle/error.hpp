#pragma once

#include <stdexcept>
#include <string>

namespace npmle {

enum class ErrorCode {
    DimensionMismatch,
    NotPositiveDefinite,
    EmptyDataset,
    InvalidArgument,
    AllWeightsOnUnderflowedAtoms,
    ZeroLikelihoodRow,
    GridTooLarge,
    DeltaOutOfRange,
    NonConvergence,
    AllResponsibilitiesUnderflow,
    ZeroDensity,
    SizeLimit,
    LengthMismatch,
    ParseError,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::AllWeightsOnUnderflowedAtoms: return "AllWeightsOnUnderflowedAtoms";
    case ErrorCode::ZeroLikelihoodRow: return "ZeroLikelihoodRow";
    case ErrorCode::GridTooLarge: return "GridTooLarge";
    case ErrorCode::DeltaOutOfRange: return "DeltaOutOfRange";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::AllResponsibilitiesUnderflow: return "AllResponsibilitiesUnderflow";
    case ErrorCode::ZeroDensity: return "ZeroDensity";
    case ErrorCode::SizeLimit: return "SizeLimit";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ParseError: return "ParseError";
    }
    return "Unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond)
        throw Error(code, what);
}

} // namespace npmle
