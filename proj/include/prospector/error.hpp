#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace prospector {

enum class ErrorKind {
  kInput,         // unreadable or malformed input
  kParse,         // structured file failed to parse
  kSlotRange,     // counter slot outside the backend's programmable range
  kState,         // operation invalid in the current state
  kBackend,       // backend unavailable or failed
  kCapability,    // requested a mode the backend cannot provide
  kNormalization,
  kInstantiation,
  kDegenerateData,
  kUsage,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kInput: return "input error";
    case ErrorKind::kParse: return "parse error";
    case ErrorKind::kSlotRange: return "slot-range error";
    case ErrorKind::kState: return "state error";
    case ErrorKind::kBackend: return "backend error";
    case ErrorKind::kCapability: return "capability error";
    case ErrorKind::kNormalization: return "normalization error";
    case ErrorKind::kInstantiation: return "instantiation error";
    case ErrorKind::kDegenerateData: return "degenerate-data error";
    case ErrorKind::kUsage: return "usage error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace prospector
