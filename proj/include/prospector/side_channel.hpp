#pragma once

// PMU side channel: a gadget compares a guess with a secret byte inside a
// transient window and, on equality, retires a transmit instruction bound to
// the monitored event. Recovery accumulates deltas per candidate and decodes
// by argmax.

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "prospector/counter_backend.hpp"
#include "prospector/error.hpp"
#include "prospector/event_space.hpp"
#include "prospector/format.hpp"
#include "prospector/instruction_corpus.hpp"
#include "prospector/seed.hpp"

namespace prospector {

enum class AttackStyle { kMeltdown, kSpectreV2, kSpectreV1 };

constexpr std::string_view to_string(AttackStyle s) noexcept {
  switch (s) {
    case AttackStyle::kMeltdown: return "meltdown";
    case AttackStyle::kSpectreV2: return "spectre_v2";
    case AttackStyle::kSpectreV1: return "spectre_v1";
  }
  return "unknown";
}

inline std::optional<AttackStyle> parse_attack_style(std::string_view s) {
  if (s == "meltdown") return AttackStyle::kMeltdown;
  if (s == "spectre_v2") return AttackStyle::kSpectreV2;
  if (s == "spectre_v1") return AttackStyle::kSpectreV1;
  return std::nullopt;
}

/// Spectre v1 through this gadget is known not to leak (the gadget's own
/// branches disturb mistraining); the simulation keeps that behavior.
constexpr bool expected_to_fail(AttackStyle s) noexcept { return s == AttackStyle::kSpectreV1; }

struct GadgetSpec {
  EventSelector bound_selector;
  std::string transmit_class = "memory-load";
  unsigned iterations = 10;
  SuppressionMode suppression = SuppressionMode::kSignalHandler;
  std::size_t secret_length = 1;
  AttackStyle style = AttackStyle::kMeltdown;
  bool any_thread = false;
};

/// Modeled seconds per gadget execution. The defaults put the throughput of
/// TSX-suppressed Meltdown, signal-suppressed Meltdown and Spectre v2 at
/// roughly 790, 498 and 149 bytes/s for 10 iterations.
struct TrialCostModel {
  double gadget_s = 1.0e-7;
  double tsx_suppression_s = 3.95e-7;
  double signal_suppression_s = 6.85e-7;
  double branch_training_s = 2.53e-6;

  [[nodiscard]] double trial_seconds(const GadgetSpec& spec) const noexcept {
    if (spec.style == AttackStyle::kMeltdown) {
      return gadget_s +
             (spec.suppression == SuppressionMode::kTransactional ? tsx_suppression_s : signal_suppression_s);
    }
    return gadget_s + branch_training_s;
  }
};

/// Simulated victim holding the secret. On a mismatched guess the transmit
/// instruction still fires with false_fire_probability; on a match it is
/// dropped with miss_probability.
class SimulatedVictim {
 public:
  SimulatedVictim(std::vector<std::uint8_t> secret, std::uint64_t seed, double false_fire_probability = 0.0,
                  double miss_probability = 0.0)
      : secret_(std::move(secret)), rng_(seed), false_fire_(false_fire_probability), miss_(miss_probability) {}

  [[nodiscard]] const std::vector<std::uint8_t>& secret() const noexcept { return secret_; }

  bool transient_transmit(AttackStyle style, std::uint8_t guess, std::size_t position) {
    if (expected_to_fail(style)) return false;
    const bool equal = secret_.at(position) == guess;
    std::bernoulli_distribution coin(equal ? miss_ : false_fire_);
    const bool flip = (equal ? miss_ : false_fire_) > 0.0 && coin(rng_);
    return equal != flip;
  }

 private:
  std::vector<std::uint8_t> secret_;
  std::mt19937_64 rng_;
  double false_fire_;
  double miss_;
};

inline void check_gadget(const GadgetSpec& spec, const BackendCapabilities& caps) {
  if (spec.iterations < 1) throw Error(ErrorKind::kUsage, "gadget iterations must be >= 1");
  if (spec.secret_length < 1) throw Error(ErrorKind::kUsage, "secret length must be >= 1");
  if (spec.suppression == SuppressionMode::kTransactional && !caps.supports_transactional_suppression) {
    throw Error(ErrorKind::kCapability, "transactional suppression not supported by backend");
  }
}

/// One gadget execution: zero the counter, compare guess against the secret
/// byte (cmp + jz), transmit on equality, read the counter.
inline std::int64_t run_trial(const GadgetSpec& spec, std::uint8_t guess, std::size_t position, SimulatedPmu& backend,
                              SimulatedVictim& victim) {
  check_gadget(spec, backend.capabilities());
  if (position >= spec.secret_length || position >= victim.secret().size()) {
    throw Error(ErrorKind::kUsage, "position " + std::to_string(position) + " outside secret");
  }
  auto r = measure_delta(backend, CounterSlot(0), scan_control(spec.bound_selector, spec.any_thread), [&] {
    backend.dispatch("alu");     // cmp
    backend.dispatch("branch");  // jz
    if (victim.transient_transmit(spec.style, guess, position)) backend.dispatch(spec.transmit_class);
  });
  return r.delta;
}

struct ByteRecovery {
  std::uint8_t value = 0;
  std::array<std::int64_t, 256> scores{};
  bool low_confidence = false;  // top score shared by several candidates
};

/// argmax with ties resolved toward the lowest byte value.
inline ByteRecovery decode_scores(const std::array<std::int64_t, 256>& scores) {
  ByteRecovery r;
  r.scores = scores;
  std::size_t best = 0;
  for (std::size_t g = 1; g < 256; ++g) {
    if (scores[g] > scores[best]) best = g;
  }
  r.value = static_cast<std::uint8_t>(best);
  r.low_confidence = std::count(scores.begin(), scores.end(), scores[best]) > 1;
  return r;
}

inline ByteRecovery recover_byte(const GadgetSpec& spec, std::size_t position, SimulatedPmu& backend,
                                 SimulatedVictim& victim) {
  std::array<std::int64_t, 256> scores{};
  for (unsigned it = 0; it < spec.iterations; ++it) {
    for (unsigned g = 0; g < 256; ++g) {
      scores[g] += run_trial(spec, static_cast<std::uint8_t>(g), position, backend, victim);
    }
  }
  return decode_scores(scores);
}

struct RecoveryResult {
  std::vector<std::uint8_t> recovered;
  std::vector<std::array<std::int64_t, 256>> per_byte_scores;
  std::vector<bool> low_confidence;
  double elapsed = 0.0;  // seconds
  AttackStyle attack_kind = AttackStyle::kMeltdown;
};

inline RecoveryResult recover_secret(const GadgetSpec& spec, SimulatedPmu& backend, SimulatedVictim& victim,
                                     const TrialCostModel& cost = {}) {
  check_gadget(spec, backend.capabilities());
  RecoveryResult result;
  result.attack_kind = spec.style;
  for (std::size_t pos = 0; pos < spec.secret_length; ++pos) {
    auto b = recover_byte(spec, pos, backend, victim);
    result.recovered.push_back(b.value);
    result.per_byte_scores.push_back(b.scores);
    result.low_confidence.push_back(b.low_confidence);
  }
  const double trials = static_cast<double>(spec.secret_length) * 256.0 * spec.iterations;
  result.elapsed = trials * cost.trial_seconds(spec);
  return result;
}

struct ChannelMetrics {
  double throughput_bps = 0.0;
  double error_rate = 0.0;
};

inline ChannelMetrics channel_metrics(std::span<const std::uint8_t> recovered, std::span<const std::uint8_t> secret,
                                      double elapsed_seconds) {
  if (recovered.size() != secret.size() || secret.empty()) {
    throw Error(ErrorKind::kUsage, "recovered and secret lengths must match and be non-zero");
  }
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < secret.size(); ++i) wrong += recovered[i] != secret[i];
  ChannelMetrics m;
  m.throughput_bps = elapsed_seconds > 0.0 ? static_cast<double>(secret.size()) / elapsed_seconds : 0.0;
  m.error_rate = static_cast<double>(wrong) / static_cast<double>(secret.size());
  return m;
}

/// Share of a position's above-baseline score held by the decoded byte. The
/// baseline (minimum over candidates) removes counts every trial produces
/// regardless of the guess, such as the gadget's own cmp/jz.
inline double byte_confidence(const std::array<std::int64_t, 256>& scores, std::uint8_t value) {
  const auto floor = *std::min_element(scores.begin(), scores.end());
  std::int64_t total = 0;
  for (auto s : scores) total += s - floor;
  return total > 0 ? static_cast<double>(scores[value] - floor) / static_cast<double>(total) : 0.0;
}

struct ChannelScreenConfig {
  double min_accuracy = 0.80;
  double false_fire_probability = 0.0;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
};

struct ChannelScreenRow {
  EventSelector selector;
  double accuracy = 0.0;
  bool passed = false;
};

/// Recovers `test_secret` once per selector (each on its own simulated PMU
/// and victim) and reports accuracy = 1 - error rate.
inline std::vector<ChannelScreenRow> evaluate_channel_events(std::span<const EventSelector> selectors,
                                                             const GadgetSpec& spec_template, const SimModel& model,
                                                             std::span<const std::uint8_t> test_secret,
                                                             const ChannelScreenConfig& config = {}) {
  std::vector<ChannelScreenRow> rows(selectors.size());
  std::vector<std::exception_ptr> errors(selectors.size());
  auto work = [&](std::size_t i) {
    try {
      SimModel m = model;
      m.seed = combine_seeds({model.seed, substream_seed(config.seed, "channel-noise"), selectors[i].packed()});
      SimulatedPmu pmu(std::move(m));
      SimulatedVictim victim({test_secret.begin(), test_secret.end()},
                             combine_seeds({substream_seed(config.seed, "channel-victim"), selectors[i].packed()}),
                             config.false_fire_probability);
      auto spec = spec_template;
      spec.bound_selector = selectors[i];
      spec.secret_length = test_secret.size();
      auto result = recover_secret(spec, pmu, victim);
      auto metrics = channel_metrics(result.recovered, test_secret, result.elapsed);
      rows[i] = {selectors[i], 1.0 - metrics.error_rate, 1.0 - metrics.error_rate >= config.min_accuracy};
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const unsigned jobs = std::max(1U, config.jobs);
  {
    std::vector<std::jthread> workers;
    for (unsigned j = 0; j < jobs; ++j) {
      workers.emplace_back([&, j] {
        for (std::size_t i = j; i < selectors.size(); i += jobs) work(i);
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return rows;
}

/// Selectors whose recovery accuracy reaches config.min_accuracy.
inline std::vector<std::pair<EventSelector, double>> screen_channel_events(
    std::span<const EventSelector> selectors, const GadgetSpec& spec_template, const SimModel& model,
    std::span<const std::uint8_t> test_secret, const ChannelScreenConfig& config = {}) {
  std::vector<std::pair<EventSelector, double>> out;
  for (const auto& row : evaluate_channel_events(selectors, spec_template, model, test_secret, config)) {
    if (row.passed) out.emplace_back(row.selector, row.accuracy);
  }
  return out;
}

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  for (auto b : bytes) {
    out += kDigits[b >> 4];
    out += kDigits[b & 0xF];
  }
  return out;
}

inline nlohmann::ordered_json recovery_to_json(const GadgetSpec& spec, const RecoveryResult& r,
                                               const ChannelMetrics& m) {
  nlohmann::ordered_json confidence = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.recovered.size(); ++i) {
    confidence.push_back(byte_confidence(r.per_byte_scores[i], r.recovered[i]));
  }
  nlohmann::ordered_json j;
  j["attack"] = std::string(to_string(r.attack_kind));
  j["selector"] = to_string(spec.bound_selector);
  j["iterations"] = spec.iterations;
  j["suppression"] = std::string(to_string(spec.suppression));
  j["recovered_hex"] = to_hex(r.recovered);
  j["confidence"] = std::move(confidence);
  j["low_confidence"] = r.low_confidence;
  j["elapsed_s"] = r.elapsed;
  j["throughput_bps"] = m.throughput_bps;
  j["error_rate"] = m.error_rate;
  return j;
}

}  // namespace prospector
