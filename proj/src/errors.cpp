#include "cylcone/errors.hpp"

namespace cylcone {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidDimension: return "InvalidDimension";
    case ErrorKind::UnstableCone: return "UnstableCone";
    case ErrorKind::GapUnattainable: return "GapUnattainable";
    case ErrorKind::BlowUp: return "BlowUp";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::OutOfTable: return "OutOfTable";
    case ErrorKind::NoBarrier: return "NoBarrier";
    case ErrorKind::DegenerateRecurrence: return "DegenerateRecurrence";
    case ErrorKind::DivergentNorm: return "DivergentNorm";
    case ErrorKind::HypothesisFail: return "HypothesisFail";
    case ErrorKind::RegionOverflow: return "RegionOverflow";
    case ErrorKind::BadBeta: return "BadBeta";
    case ErrorKind::NewtonDiverged: return "NewtonDiverged";
    case ErrorKind::SingularJacobian: return "SingularJacobian";
    case ErrorKind::NotGraphical: return "NotGraphical";
    case ErrorKind::NegativityFail: return "NegativityFail";
    case ErrorKind::SandwichFail: return "SandwichFail";
    case ErrorKind::ResolutionExceeded: return "ResolutionExceeded";
    case ErrorKind::NoSignal: return "NoSignal";
    case ErrorKind::MassBoundFail: return "MassBoundFail";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Schema: return "Schema";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace cylcone
