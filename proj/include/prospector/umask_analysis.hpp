#pragma once

// Per-event-code inference of which umask bits gate counting.

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <vector>

#include "prospector/event_space.hpp"
#include "prospector/hidden_collector.hpp"

namespace prospector {

struct RelevanceObservation {
  std::uint8_t event_code = 0;
  std::uint8_t umask = 0;
  bool counted = false;
};

struct RelevanceMask {
  std::uint8_t event_code = 0;
  std::uint8_t mask = 0;  // 0 encodes "counts for every umask"
  bool consistent = false;

  friend bool operator==(const RelevanceMask&, const RelevanceMask&) = default;
};

/// The gating predicate a relevance mask stands for.
[[nodiscard]] constexpr bool gates(std::uint8_t mask, std::uint8_t umask) noexcept {
  return mask == 0 || (umask & mask) != 0;
}

/// Infers the relevance mask for one event code.
///
/// Every non-counting umask u forces mask & u == 0, so all consistent nonzero
/// masks lie inside the complement of the union of non-counting umasks. That
/// complement is itself the maximal candidate: if it fails some counting
/// observation, every subset fails too, leaving only the "any umask" mask 0.
/// Inconsistent data falls back to the single bit with the fewest mismatches.
inline RelevanceMask infer_relevance_mask(std::span<const RelevanceObservation> observations) {
  RelevanceMask result;
  if (observations.empty()) return result;
  result.event_code = observations.front().event_code;

  // Collapse duplicates: a umask is "counted" if any observation counted it.
  std::array<int, 256> state{};  // 0 unseen, 1 quiet, 2 counted
  for (const auto& o : observations) state[o.umask] = std::max(state[o.umask], o.counted ? 2 : 1);

  unsigned quiet_union = 0;
  bool all_counted = true;
  for (unsigned u = 0; u < 256; ++u) {
    if (state[u] == 1) {
      quiet_union |= u;
      all_counted = false;
    }
  }
  const auto candidate = static_cast<std::uint8_t>(~quiet_union & 0xFFU);
  auto fits = [&](std::uint8_t mask) {
    for (unsigned u = 0; u < 256; ++u) {
      if (state[u] != 0 && gates(mask, static_cast<std::uint8_t>(u)) != (state[u] == 2)) return false;
    }
    return true;
  };
  if (candidate != 0 && fits(candidate)) {
    result.mask = candidate;
    result.consistent = true;
    return result;
  }
  if (all_counted) {
    result.mask = 0;
    result.consistent = true;
    return result;
  }

  std::size_t best_errors = std::numeric_limits<std::size_t>::max();
  for (unsigned bit = 0; bit < 8; ++bit) {
    const auto mask = static_cast<std::uint8_t>(1U << bit);
    std::size_t errors = 0;
    for (unsigned u = 0; u < 256; ++u) {
      if (state[u] != 0 && gates(mask, static_cast<std::uint8_t>(u)) != (state[u] == 2)) ++errors;
    }
    if (errors < best_errors) {
      best_errors = errors;
      result.mask = mask;
    }
  }
  result.consistent = false;
  return result;
}

/// Hidden selectors partitioned by event code, umasks ascending.
inline std::map<std::uint8_t, std::vector<std::uint8_t>> group_hidden_by_event_code(const ScanReport& report) {
  std::map<std::uint8_t, std::vector<std::uint8_t>> groups;
  for (const auto& [sel, ids] : report.hidden_events) groups[sel.event_code].push_back(sel.umask);
  for (auto& [code, umasks] : groups) std::sort(umasks.begin(), umasks.end());
  return groups;
}

/// Observations for every hidden event code: each umask seen in the report
/// counts as counted, every other umask of that code as quiet. Documented
/// umasks were never eligible to be hidden, so they stay unobserved when a
/// catalog is given. Valid for reports produced by a full-space scan.
inline std::map<std::uint8_t, std::vector<RelevanceObservation>> observations_from_report(
    const ScanReport& report, const EventCatalog* catalog = nullptr) {
  std::map<std::uint8_t, std::vector<RelevanceObservation>> out;
  for (const auto& [code, umasks] : group_hidden_by_event_code(report)) {
    std::array<bool, 256> counted{};
    for (auto u : umasks) counted[u] = true;
    auto& obs = out[code];
    for (unsigned u = 0; u < 256; ++u) {
      const EventSelector s{code, static_cast<std::uint8_t>(u)};
      if (catalog != nullptr && catalog->contains(s)) continue;
      obs.push_back({code, s.umask, counted[u]});
    }
  }
  return out;
}

struct DistributionPoint {
  std::uint8_t event_code = 0;
  std::uint8_t umask = 0;
};

/// Scatter dataset of hidden selectors, sorted by (event_code, umask).
inline std::vector<DistributionPoint> emit_distribution(const ScanReport& report) {
  std::vector<DistributionPoint> rows;
  for (const auto& [code, umasks] : group_hidden_by_event_code(report)) {
    for (auto u : umasks) rows.push_back({code, u});
  }
  return rows;
}

inline void write_distribution_csv(std::ostream& out, std::span<const DistributionPoint> rows) {
  out << "event_code,umask\n";
  for (const auto& r : rows) out << detail::hex_byte(r.event_code) << ',' << detail::hex_byte(r.umask) << '\n';
}

inline void write_relevance_csv(std::ostream& out, std::span<const RelevanceMask> masks) {
  out << "event_code,mask,consistent\n";
  for (const auto& m : masks) {
    out << detail::hex_byte(m.event_code) << ',' << detail::hex_byte(m.mask) << ','
        << (m.consistent ? "true" : "false") << '\n';
  }
}

}  // namespace prospector
