#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace spats {

enum class ErrorKind {
    DimensionMismatch,
    NonFinite,
    SingularMatrix,
    NoConvergence,
    SpectrumOverlap,
    NotStabilizable,
    AsymmetryDrift,
    PivotBreakdown,
    SingularFastBlock,
    InvalidParameter,
    NegativeWeight,
    LeaderUnreachable,
    NonPositiveEigenvalue,
    Infeasible,
    StepTooLarge,
    Divergence,
};

constexpr std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::SingularMatrix: return "SingularMatrix";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::SpectrumOverlap: return "SpectrumOverlap";
    case ErrorKind::NotStabilizable: return "NotStabilizable";
    case ErrorKind::AsymmetryDrift: return "AsymmetryDrift";
    case ErrorKind::PivotBreakdown: return "PivotBreakdown";
    case ErrorKind::SingularFastBlock: return "SingularFastBlock";
    case ErrorKind::InvalidParameter: return "InvalidParameter";
    case ErrorKind::NegativeWeight: return "NegativeWeight";
    case ErrorKind::LeaderUnreachable: return "LeaderUnreachable";
    case ErrorKind::NonPositiveEigenvalue: return "NonPositiveEigenvalue";
    case ErrorKind::Infeasible: return "Infeasible";
    case ErrorKind::StepTooLarge: return "StepTooLarge";
    case ErrorKind::Divergence: return "Divergence";
    }
    return "Unknown";
}

/// Every numerical failure in the library is reported through this type.
/// `kind()` is stable and meant for dispatch; `what()` is for humans.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

} // namespace spats
