#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace prospector {

enum class ExecStatus { kSuccess, kFault, kUnsupportedExtension };

enum class SignalKind {
  kIllegalInstruction,
  kSegmentationFault,
  kBusError,
  kFloatingPoint,
  kTrap,
  kTimeout,
  kAbort,
  kOther,
};

constexpr std::string_view to_string(ExecStatus s) noexcept {
  switch (s) {
    case ExecStatus::kSuccess: return "success";
    case ExecStatus::kFault: return "fault";
    case ExecStatus::kUnsupportedExtension: return "unsupported";
  }
  return "unknown";
}

inline std::optional<ExecStatus> parse_exec_status(std::string_view s) {
  if (s == "success") return ExecStatus::kSuccess;
  if (s == "fault") return ExecStatus::kFault;
  if (s == "unsupported") return ExecStatus::kUnsupportedExtension;
  return std::nullopt;
}

constexpr std::string_view to_string(SignalKind k) noexcept {
  switch (k) {
    case SignalKind::kIllegalInstruction: return "illegal-instruction";
    case SignalKind::kSegmentationFault: return "segmentation-fault";
    case SignalKind::kBusError: return "bus-error";
    case SignalKind::kFloatingPoint: return "floating-point";
    case SignalKind::kTrap: return "trap";
    case SignalKind::kTimeout: return "timeout";
    case SignalKind::kAbort: return "abort";
    case SignalKind::kOther: return "other";
  }
  return "other";
}

inline std::optional<SignalKind> parse_signal_kind(std::string_view s) {
  for (auto k : {SignalKind::kIllegalInstruction, SignalKind::kSegmentationFault, SignalKind::kBusError,
                 SignalKind::kFloatingPoint, SignalKind::kTrap, SignalKind::kTimeout, SignalKind::kAbort,
                 SignalKind::kOther}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

/// Result of running one workload or snippet. Exactly one status.
struct ExecOutcome {
  ExecStatus status = ExecStatus::kSuccess;
  std::optional<SignalKind> signal;
  std::string fault_detail;

  static ExecOutcome success() { return {}; }
  static ExecOutcome fault(SignalKind kind, std::string detail = {}) {
    return {ExecStatus::kFault, kind, std::move(detail)};
  }
  static ExecOutcome unsupported(std::string detail = {}) {
    return {ExecStatus::kUnsupportedExtension, std::nullopt, std::move(detail)};
  }

  [[nodiscard]] bool ok() const noexcept { return status == ExecStatus::kSuccess; }
  friend bool operator==(const ExecOutcome&, const ExecOutcome&) = default;
};

}  // namespace prospector
