#pragma once

// Counter programming contract (program / read / delta) and the
// deterministic simulated PMU every test and acceptance run measures against.

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "prospector/error.hpp"
#include "prospector/event_space.hpp"
#include "prospector/outcome.hpp"
#include "prospector/seed.hpp"

namespace prospector {

inline constexpr unsigned kMaxProgrammableCounters = 4;

/// Index of a programmable counter (IA32_PMC0..3).
class CounterSlot {
 public:
  constexpr explicit CounterSlot(unsigned index) : index_(index) {
    if (index >= kMaxProgrammableCounters) {
      throw Error(ErrorKind::kSlotRange, "counter slot " + std::to_string(index) + " outside 0..3");
    }
  }
  [[nodiscard]] constexpr unsigned index() const noexcept { return index_; }

 private:
  unsigned index_;
};

struct BackendCapabilities {
  unsigned programmable_count = kMaxProgrammableCounters;
  bool supports_transactional_suppression = false;
  bool is_simulated = true;
};

/// Anything that can be programmed with an event and read back.
/// Programming a slot resets its count to zero.
template <class B>
concept CounterBackend = requires(B& backend, const B& cbackend, CounterSlot slot, const PerfEvtSelValue& value) {
  { cbackend.capabilities() } -> std::convertible_to<BackendCapabilities>;
  backend.program(slot, value);
  { backend.read(slot) } -> std::convertible_to<std::uint64_t>;
};

namespace detail {

template <class W>
ExecOutcome run_workload(W&& workload) {
  try {
    if constexpr (std::is_void_v<std::invoke_result_t<W&>>) {
      workload();
      return ExecOutcome::success();
    } else {
      return ExecOutcome(workload());
    }
  } catch (const std::exception& e) {
    return ExecOutcome::fault(SignalKind::kOther, e.what());
  }
}

}  // namespace detail

struct DeltaResult {
  std::int64_t delta = 0;
  ExecOutcome outcome;
};

/// Programs `slot`, runs the workload once, returns read-after minus
/// read-before. A faulting workload still yields its partial delta.
template <CounterBackend B, class W>
DeltaResult measure_delta(B& backend, CounterSlot slot, const PerfEvtSelValue& value, W&& workload) {
  if (backend.capabilities().programmable_count <= slot.index()) {
    throw Error(ErrorKind::kSlotRange, "slot " + std::to_string(slot.index()) + " not available on backend");
  }
  backend.program(slot, value);
  const auto before = backend.read(slot);
  auto outcome = detail::run_workload(std::forward<W>(workload));
  const auto after = backend.read(slot);
  return {static_cast<std::int64_t>(after - before), std::move(outcome)};
}

template <CounterBackend B, class W>
DeltaResult measure_delta(B& backend, const PerfEvtSelValue& value, W&& workload) {
  return measure_delta(backend, CounterSlot(0), value, std::forward<W>(workload));
}

struct BatchDeltaResult {
  std::array<std::int64_t, kMaxProgrammableCounters> deltas{};
  std::size_t count = 0;
  ExecOutcome outcome;
};

/// Measures up to one selector per available slot around a single workload run.
template <CounterBackend B, class W>
BatchDeltaResult measure_batch(B& backend, std::span<const PerfEvtSelValue> values, W&& workload) {
  const auto slots = backend.capabilities().programmable_count;
  if (values.size() > slots || values.size() > kMaxProgrammableCounters) {
    throw Error(ErrorKind::kSlotRange, "batch of " + std::to_string(values.size()) + " exceeds " +
                                           std::to_string(slots) + " programmable counters");
  }
  BatchDeltaResult result;
  result.count = values.size();
  std::array<std::uint64_t, kMaxProgrammableCounters> before{};
  for (std::size_t i = 0; i < values.size(); ++i) backend.program(CounterSlot(static_cast<unsigned>(i)), values[i]);
  for (std::size_t i = 0; i < values.size(); ++i) before[i] = backend.read(CounterSlot(static_cast<unsigned>(i)));
  result.outcome = detail::run_workload(std::forward<W>(workload));
  for (std::size_t i = 0; i < values.size(); ++i) {
    result.deltas[i] = static_cast<std::int64_t>(backend.read(CounterSlot(static_cast<unsigned>(i))) - before[i]);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Simulated PMU

/// Logical core a simulated instruction retires on, relative to the monitor.
enum class LogicalContext : std::uint8_t { kOwn = 0, kSibling = 1 };

/// A family of simulated events sharing one event code. A selector belongs to
/// the family when its umask intersects relevance_mask (mask 0: any umask).
struct SimEventFamily {
  std::uint8_t event_code = 0;
  std::uint8_t relevance_mask = 0;
  std::set<std::string> trigger_classes;
  std::uint64_t increment = 1;
  double noise_stddev = 0.0;
  std::uint64_t seed = 0;

  [[nodiscard]] bool matches(EventSelector s) const noexcept {
    return s.event_code == event_code && (relevance_mask == 0 || (s.umask & relevance_mask) != 0);
  }
  [[nodiscard]] bool triggered_by(std::string_view class_tag) const {
    return trigger_classes.find(std::string(class_tag)) != trigger_classes.end();
  }

  friend bool operator==(const SimEventFamily&, const SimEventFamily&) = default;
};

struct SimModel {
  std::uint64_t seed = 0;
  unsigned programmable_count = kMaxProgrammableCounters;
  bool supports_transactional_suppression = false;
  std::vector<SimEventFamily> families;
  /// Corpus entries that fault when executed by the simulated executor.
  std::map<std::int64_t, SignalKind> faults;

  friend bool operator==(const SimModel&, const SimModel&) = default;
};

class SimulatedPmu {
 public:
  explicit SimulatedPmu(SimModel model) : model_(std::move(model)) {
    if (model_.programmable_count < 1 || model_.programmable_count > kMaxProgrammableCounters) {
      throw Error(ErrorKind::kBackend, "simulated programmable_count must be in 1..4");
    }
    for (std::size_t i = 0; i < model_.families.size(); ++i) {
      if (model_.families[i].noise_stddev < 0.0 || !std::isfinite(model_.families[i].noise_stddev)) {
        throw Error(ErrorKind::kBackend, "family noise_stddev must be a non-negative finite number");
      }
      by_code_[model_.families[i].event_code].push_back(i);
    }
  }

  [[nodiscard]] BackendCapabilities capabilities() const noexcept {
    return {model_.programmable_count, model_.supports_transactional_suppression, true};
  }

  [[nodiscard]] const SimModel& model() const noexcept { return model_; }

  /// Restarts every noise stream from `stream`; equal streams replay equal noise.
  void reseed(std::uint64_t stream) {
    stream_ = stream;
    rngs_.clear();
  }

  void program(CounterSlot slot, const PerfEvtSelValue& value) {
    check_slot(slot);
    auto& st = slots_[slot.index()];
    st.value = value;
    st.count = 0;
    st.matching.clear();
    for (auto idx : by_code_[value.selector.event_code]) {
      if (model_.families[idx].matches(value.selector)) st.matching.push_back(idx);
    }
  }

  [[nodiscard]] std::uint64_t read(CounterSlot slot) const {
    check_slot(slot);
    const auto& st = slots_[slot.index()];
    if (!st.value) {
      throw Error(ErrorKind::kState, "counter slot " + std::to_string(slot.index()) + " read before program");
    }
    return st.count;
  }

  /// Retires `times` instructions of `class_tag` on `context`. Triggered
  /// families add their increment (sibling activity only with any_thread);
  /// noisy families over-count on every retirement.
  void dispatch(std::string_view class_tag, LogicalContext context = LogicalContext::kOwn, std::uint64_t times = 1) {
    for (unsigned i = 0; i < model_.programmable_count; ++i) {
      auto& st = slots_[i];
      if (!st.value || !st.value->enable || (!st.value->usr && !st.value->os) || st.matching.empty()) continue;
      const bool attributed = context == LogicalContext::kOwn || st.value->any_thread;
      for (auto idx : st.matching) {
        const auto& family = model_.families[idx];
        const bool triggered = attributed && family.triggered_by(class_tag);
        if (triggered) st.count += family.increment * times;
        if (family.noise_stddev > 0.0) {
          auto& rng = noise_rng(i, idx);
          std::normal_distribution<double> dist(0.0, family.noise_stddev);
          for (std::uint64_t t = 0; t < times; ++t) {
            st.count += static_cast<std::uint64_t>(std::max(0.0, std::round(dist(rng))));
          }
        }
      }
    }
  }

 private:
  struct SlotState {
    std::optional<PerfEvtSelValue> value;
    std::uint64_t count = 0;
    std::vector<std::size_t> matching;
  };

  void check_slot(CounterSlot slot) const {
    if (slot.index() >= model_.programmable_count) {
      throw Error(ErrorKind::kSlotRange, "slot " + std::to_string(slot.index()) + " beyond simulated counters");
    }
  }

  std::mt19937_64& noise_rng(unsigned slot, std::size_t family) {
    auto key = std::make_pair(slot, family);
    auto it = rngs_.find(key);
    if (it == rngs_.end()) {
      auto seed = combine_seeds({model_.seed, model_.families[family].seed, slot, stream_});
      it = rngs_.emplace(key, std::mt19937_64(seed)).first;
    }
    return it->second;
  }

  SimModel model_;
  std::array<std::vector<std::size_t>, 256> by_code_{};
  std::array<SlotState, kMaxProgrammableCounters> slots_{};
  std::map<std::pair<unsigned, std::size_t>, std::mt19937_64> rngs_;
  std::uint64_t stream_ = 0;
};

static_assert(CounterBackend<SimulatedPmu>);

// ---------------------------------------------------------------------------
// Simulated model JSON

namespace detail {

inline std::uint8_t json_byte(const nlohmann::json& j, const char* field) {
  if (j.is_number_unsigned() && j.get<std::uint64_t>() <= 0xFF) return j.get<std::uint8_t>();
  if (j.is_string()) {
    if (auto v = parse_hex(j.get<std::string>(), 0xFF)) return static_cast<std::uint8_t>(*v);
  }
  throw Error(ErrorKind::kParse, std::string("field '") + field + "' must be a byte (integer or 0x-hex string)");
}

}  // namespace detail

inline nlohmann::json to_json(const SimModel& model) {
  nlohmann::json families = nlohmann::json::array();
  for (const auto& f : model.families) {
    families.push_back({{"event_code", detail::hex_byte(f.event_code)},
                        {"relevance_mask", detail::hex_byte(f.relevance_mask)},
                        {"trigger_classes", f.trigger_classes},
                        {"increment", f.increment},
                        {"noise_stddev", f.noise_stddev},
                        {"seed", f.seed}});
  }
  nlohmann::json faults = nlohmann::json::array();
  for (const auto& [id, kind] : model.faults) {
    faults.push_back({{"instruction", id}, {"signal", std::string(to_string(kind))}});
  }
  return {{"seed", model.seed},
          {"programmable_count", model.programmable_count},
          {"supports_transactional_suppression", model.supports_transactional_suppression},
          {"families", families},
          {"faults", faults}};
}

inline SimModel sim_model_from_json(const nlohmann::json& j) {
  try {
    SimModel m;
    m.seed = j.value("seed", std::uint64_t{0});
    m.programmable_count = j.value("programmable_count", kMaxProgrammableCounters);
    m.supports_transactional_suppression = j.value("supports_transactional_suppression", false);
    for (const auto& f : j.value("families", nlohmann::json::array())) {
      SimEventFamily fam;
      fam.event_code = detail::json_byte(f.at("event_code"), "event_code");
      fam.relevance_mask = detail::json_byte(f.value("relevance_mask", nlohmann::json(0)), "relevance_mask");
      fam.trigger_classes = f.at("trigger_classes").get<std::set<std::string>>();
      fam.increment = f.value("increment", std::uint64_t{1});
      fam.noise_stddev = f.value("noise_stddev", 0.0);
      fam.seed = f.value("seed", std::uint64_t{0});
      if (fam.noise_stddev < 0.0) throw Error(ErrorKind::kParse, "noise_stddev must be non-negative");
      m.families.push_back(std::move(fam));
    }
    for (const auto& f : j.value("faults", nlohmann::json::array())) {
      auto kind = parse_signal_kind(f.value("signal", std::string("illegal-instruction")));
      if (!kind) throw Error(ErrorKind::kParse, "unknown fault signal kind");
      m.faults[f.at("instruction").get<std::int64_t>()] = *kind;
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("simulated model: ") + e.what());
  }
}

inline SimModel load_sim_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kInput, "cannot open simulated model '" + path + "'");
  try {
    return sim_model_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kParse, path + " at byte " + std::to_string(e.byte) + ": " + e.what());
  }
}

}  // namespace prospector
