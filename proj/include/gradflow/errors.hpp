#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace gradflow {

/// Failure categories. The CLI maps them onto exit codes.
enum class ErrorKind {
  Config,
  UnknownPreset,
  NoMinimumFound,
  HypothesisViolation,
  DegenerateBall,
  NonCoerciveBox,
  SpecEndpointMismatch,
  BlowUp,
  DriftExceeded,
  IntermediateZero,
  NeverEscapes,
  ChainMismatch,
  NoMatch,
  ChainBroken,
  NotConverged,
  NoSignChange,
  TransversalityLoss,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config: return "ConfigError";
    case ErrorKind::UnknownPreset: return "UnknownPreset";
    case ErrorKind::NoMinimumFound: return "NoMinimumFound";
    case ErrorKind::HypothesisViolation: return "HypothesisViolation";
    case ErrorKind::DegenerateBall: return "DegenerateBall";
    case ErrorKind::NonCoerciveBox: return "NonCoerciveBox";
    case ErrorKind::SpecEndpointMismatch: return "SpecEndpointMismatch";
    case ErrorKind::BlowUp: return "BlowUp";
    case ErrorKind::DriftExceeded: return "DriftExceeded";
    case ErrorKind::IntermediateZero: return "IntermediateZero";
    case ErrorKind::NeverEscapes: return "NeverEscapes";
    case ErrorKind::ChainMismatch: return "ChainMismatch";
    case ErrorKind::NoMatch: return "NoMatch";
    case ErrorKind::ChainBroken: return "ChainBroken";
    case ErrorKind::NotConverged: return "NotConverged";
    case ErrorKind::NoSignChange: return "NoSignChange";
    case ErrorKind::TransversalityLoss: return "TransversalityLoss";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  /// Offending point for HypothesisViolation, empty otherwise.
  std::vector<double> point;

  /// Core index for NoMatch, time for TopologyChange-like reports.
  double detail = 0.0;

 private:
  ErrorKind kind_;
};

/// True for errors the CLI reports as numerical failures (exit code 3).
inline bool is_numerical(ErrorKind k) {
  return k == ErrorKind::BlowUp || k == ErrorKind::DriftExceeded ||
         k == ErrorKind::NotConverged || k == ErrorKind::TransversalityLoss;
}

}  // namespace gradflow
