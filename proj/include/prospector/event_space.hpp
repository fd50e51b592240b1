#pragma once

// Event-selector encoding for the programmable PMU counters, enumeration of
// the full 16-bit selector space, and the documented-event catalog.

#include <bitset>
#include <charconv>
#include <compare>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "prospector/error.hpp"

namespace prospector {

inline constexpr std::size_t kEventSpaceSize = 1U << 16;

/// One point of the event space: Event Select (low byte) + Umask (high byte).
struct EventSelector {
  std::uint8_t event_code = 0;
  std::uint8_t umask = 0;

  [[nodiscard]] constexpr std::uint16_t packed() const noexcept {
    return static_cast<std::uint16_t>((static_cast<unsigned>(umask) << 8) | event_code);
  }

  [[nodiscard]] static constexpr EventSelector unpack(std::uint16_t id) noexcept {
    return {static_cast<std::uint8_t>(id & 0xFFU), static_cast<std::uint8_t>(id >> 8)};
  }

  friend constexpr bool operator==(EventSelector a, EventSelector b) noexcept {
    return a.packed() == b.packed();
  }
  friend constexpr std::strong_ordering operator<=>(EventSelector a, EventSelector b) noexcept {
    return a.packed() <=> b.packed();
  }
};

[[nodiscard]] constexpr std::uint16_t pack_selector(EventSelector s) noexcept { return s.packed(); }
[[nodiscard]] constexpr EventSelector unpack_selector(std::uint16_t id) noexcept {
  return EventSelector::unpack(id);
}

namespace detail {

inline constexpr char kHexDigits[] = "0123456789ABCDEF";

inline std::string hex_byte(std::uint8_t v) {
  return {'0', 'x', kHexDigits[v >> 4], kHexDigits[v & 0xF]};
}

inline std::optional<unsigned> parse_hex(std::string_view text, unsigned max_value) {
  if (text.size() < 3 || text[0] != '0' || (text[1] != 'x' && text[1] != 'X')) return std::nullopt;
  text.remove_prefix(2);
  unsigned value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value, 16);
  if (ec != std::errc{} || ptr != text.data() + text.size() || value > max_value) return std::nullopt;
  return value;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

/// Text form `0xUUEE` (umask, then event code), the packed identity in hex.
inline std::string to_string(EventSelector s) {
  const auto id = s.packed();
  return {'0', 'x', detail::kHexDigits[(id >> 12) & 0xF], detail::kHexDigits[(id >> 8) & 0xF],
          detail::kHexDigits[(id >> 4) & 0xF], detail::kHexDigits[id & 0xF]};
}

inline std::optional<EventSelector> parse_selector(std::string_view text) {
  auto v = detail::parse_hex(detail::trim(text), 0xFFFF);
  if (!v) return std::nullopt;
  return EventSelector::unpack(static_cast<std::uint16_t>(*v));
}

/// Image of one IA32_PERFEVTSELx register.
struct PerfEvtSelValue {
  EventSelector selector{};
  bool usr = false;
  bool os = false;
  bool edge = false;
  bool pin_control = false;
  bool interrupt_enable = false;
  bool any_thread = false;
  bool enable = false;
  bool invert = false;
  std::uint8_t counter_mask = 0;

  friend constexpr bool operator==(const PerfEvtSelValue&, const PerfEvtSelValue&) = default;
};

namespace evtsel_bits {
inline constexpr unsigned kUmaskShift = 8;
inline constexpr unsigned kUsr = 16;
inline constexpr unsigned kOs = 17;
inline constexpr unsigned kEdge = 18;
inline constexpr unsigned kPinControl = 19;
inline constexpr unsigned kInterruptEnable = 20;
inline constexpr unsigned kAnyThread = 21;
inline constexpr unsigned kEnable = 22;
inline constexpr unsigned kInvert = 23;
inline constexpr unsigned kCounterMaskShift = 24;
}  // namespace evtsel_bits

[[nodiscard]] constexpr std::uint64_t render_msr_value(const PerfEvtSelValue& v) noexcept {
  using namespace evtsel_bits;
  auto bit = [](bool flag, unsigned pos) { return static_cast<std::uint64_t>(flag) << pos; };
  return static_cast<std::uint64_t>(v.selector.event_code) |
         (static_cast<std::uint64_t>(v.selector.umask) << kUmaskShift) | bit(v.usr, kUsr) |
         bit(v.os, kOs) | bit(v.edge, kEdge) | bit(v.pin_control, kPinControl) |
         bit(v.interrupt_enable, kInterruptEnable) | bit(v.any_thread, kAnyThread) |
         bit(v.enable, kEnable) | bit(v.invert, kInvert) |
         (static_cast<std::uint64_t>(v.counter_mask) << kCounterMaskShift);
}

/// Inverse of render_msr_value. Bits 63:32 are ignored.
[[nodiscard]] constexpr PerfEvtSelValue decode_msr_value(std::uint64_t image) noexcept {
  using namespace evtsel_bits;
  auto bit = [image](unsigned pos) { return ((image >> pos) & 1U) != 0; };
  PerfEvtSelValue v;
  v.selector.event_code = static_cast<std::uint8_t>(image & 0xFFU);
  v.selector.umask = static_cast<std::uint8_t>((image >> kUmaskShift) & 0xFFU);
  v.usr = bit(kUsr);
  v.os = bit(kOs);
  v.edge = bit(kEdge);
  v.pin_control = bit(kPinControl);
  v.interrupt_enable = bit(kInterruptEnable);
  v.any_thread = bit(kAnyThread);
  v.enable = bit(kEnable);
  v.invert = bit(kInvert);
  v.counter_mask = static_cast<std::uint8_t>((image >> kCounterMaskShift) & 0xFFU);
  return v;
}

/// Least-filtered counting mode used for scanning: user + kernel, enabled.
[[nodiscard]] constexpr PerfEvtSelValue scan_control(EventSelector s, bool any_thread = false) noexcept {
  PerfEvtSelValue v;
  v.selector = s;
  v.usr = true;
  v.os = true;
  v.enable = true;
  v.any_thread = any_thread;
  return v;
}

/// All 65536 selectors in ascending packed order.
[[nodiscard]] inline std::vector<EventSelector> enumerate_space() {
  std::vector<EventSelector> out;
  out.reserve(kEventSpaceSize);
  for (std::size_t id = 0; id < kEventSpaceSize; ++id) {
    out.push_back(EventSelector::unpack(static_cast<std::uint16_t>(id)));
  }
  return out;
}

/// Documented (vendor-published) events. Membership is purely syntactic.
class EventCatalog {
 public:
  EventCatalog() = default;
  explicit EventCatalog(std::string source) : source_(std::move(source)) {}

  /// Returns false if the selector is already present.
  bool insert(EventSelector s, std::string name) {
    if (present_[s.packed()]) return false;
    present_[s.packed()] = true;
    names_.emplace(s.packed(), std::move(name));
    return true;
  }

  [[nodiscard]] bool contains(EventSelector s) const noexcept { return present_[s.packed()]; }
  [[nodiscard]] std::size_t size() const noexcept { return names_.size(); }
  [[nodiscard]] const std::string& source() const noexcept { return source_; }
  void set_source(std::string source) { source_ = std::move(source); }

  [[nodiscard]] std::optional<std::string> name_of(EventSelector s) const {
    auto it = names_.find(s.packed());
    if (it == names_.end()) return std::nullopt;
    return it->second;
  }

  [[nodiscard]] std::vector<EventSelector> selectors() const {
    std::vector<EventSelector> out;
    out.reserve(names_.size());
    for (const auto& [id, name] : names_) out.push_back(EventSelector::unpack(id));
    return out;
  }

 private:
  std::string source_;
  std::bitset<kEventSpaceSize> present_;
  std::map<std::uint16_t, std::string> names_;
};

[[nodiscard]] inline bool is_documented(EventSelector s, const EventCatalog& catalog) noexcept {
  return catalog.contains(s);
}

/// Reads `event_code,umask,name` CSV. Duplicate keys are a load error.
inline EventCatalog load_catalog(std::istream& in, std::string source) {
  EventCatalog catalog(std::move(source));
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    auto view = detail::trim(line);
    if (view.empty()) continue;
    if (!header_seen) {
      if (view != "event_code,umask,name") {
        throw Error(ErrorKind::kParse, "catalog line " + std::to_string(line_no) +
                                           ": expected header 'event_code,umask,name'");
      }
      header_seen = true;
      continue;
    }
    auto fields = detail::split(view, ',');
    if (fields.size() < 3) {
      throw Error(ErrorKind::kParse, "catalog line " + std::to_string(line_no) + ": expected 3 columns");
    }
    auto code = detail::parse_hex(detail::trim(fields[0]), 0xFF);
    auto umask = detail::parse_hex(detail::trim(fields[1]), 0xFF);
    if (!code || !umask) {
      throw Error(ErrorKind::kParse,
                  "catalog line " + std::to_string(line_no) + ": event_code/umask must be 0x-prefixed hex bytes");
    }
    // Names may themselves contain commas.
    std::string name(view.substr(static_cast<std::size_t>(fields[2].data() - view.data())));
    EventSelector s{static_cast<std::uint8_t>(*code), static_cast<std::uint8_t>(*umask)};
    if (!catalog.insert(s, std::string(detail::trim(name)))) {
      throw Error(ErrorKind::kParse,
                  "catalog line " + std::to_string(line_no) + ": duplicate selector " + to_string(s));
    }
  }
  if (!header_seen) throw Error(ErrorKind::kParse, "catalog is empty (missing header)");
  return catalog;
}

inline EventCatalog load_catalog_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kInput, "cannot open catalog '" + path + "'");
  return load_catalog(in, path);
}

inline void write_catalog(std::ostream& out, const EventCatalog& catalog) {
  out << "event_code,umask,name\n";
  for (auto s : catalog.selectors()) {
    out << detail::hex_byte(s.event_code) << ',' << detail::hex_byte(s.umask) << ','
        << *catalog.name_of(s) << '\n';
  }
}

}  // namespace prospector
