#pragma once

// Full scan of the instruction corpus against the event space, aggregation
// of hidden (undocumented, readable) events, and report persistence.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "prospector/counter_backend.hpp"
#include "prospector/error.hpp"
#include "prospector/event_space.hpp"
#include "prospector/instruction_corpus.hpp"
#include "prospector/outcome.hpp"

namespace prospector {

struct ScanConfig {
  unsigned repetitions = 5;
  std::int64_t quiet_threshold = 1;  // readable when median delta >= threshold
  SuppressionMode mode = SuppressionMode::kSignalHandler;
  OperandPool pool = default_pool();
  std::string microarchitecture_label = "simulated";
  unsigned jobs = 1;
  bool any_thread = false;
};

struct ScanRecord {
  EventSelector selector;
  std::int64_t instruction_id = 0;
  std::int64_t delta = 0;  // median over repetitions
  ExecStatus outcome = ExecStatus::kSuccess;
  unsigned repetitions = 1;
  bool quiet = true;

  friend bool operator==(const ScanRecord&, const ScanRecord&) = default;
};

/// A selector the backend could not measure for one instruction.
struct ScanGap {
  EventSelector selector;
  std::int64_t instruction_id = 0;
  std::string message;

  friend bool operator==(const ScanGap&, const ScanGap&) = default;
};

struct InstructionScan {
  std::vector<ScanRecord> records;
  std::vector<ScanGap> gaps;
  ExecOutcome outcome;
};

struct ScanReport {
  std::string microarchitecture_label;
  std::size_t total_instructions = 0;
  std::size_t executed_success = 0;
  std::size_t executed_fault = 0;
  std::size_t unsupported = 0;
  std::map<EventSelector, std::set<std::int64_t>> hidden_events;
  std::string catalog_source;
  std::vector<ScanGap> gaps;

  friend bool operator==(const ScanReport&, const ScanReport&) = default;
};

namespace detail {

inline std::int64_t lower_median(std::vector<std::int64_t>& values) {
  auto mid = values.begin() + static_cast<std::ptrdiff_t>((values.size() - 1) / 2);
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

}  // namespace detail

/// Measures one corpus entry against `selectors`, batching one selector per
/// programmable counter. Yields one record per measurable selector; backend
/// failures become gaps instead of aborting.
template <CounterBackend B, SnippetExecutor E>
InstructionScan scan_instruction(const InstructionEntry& entry, std::span<const EventSelector> selectors, B& backend,
                                 E& executor, const ScanConfig& config) {
  if (config.repetitions < 1) throw Error(ErrorKind::kUsage, "repetitions must be >= 1");
  InstructionScan scan;
  scan.records.reserve(selectors.size());

  Snippet snippet;
  try {
    snippet = instantiate(entry, config.pool);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kInstantiation) throw;
    scan.outcome = ExecOutcome::unsupported(e.what());
    for (auto s : selectors) {
      scan.records.push_back({s, entry.id, 0, ExecStatus::kUnsupportedExtension, config.repetitions, true});
    }
    return scan;
  }

  const std::size_t width = std::max<std::size_t>(1, backend.capabilities().programmable_count);
  auto workload = [&] { return executor.execute(snippet, config.mode); };
  bool have_outcome = false;

  auto measure = [&](std::span<const EventSelector> batch) {
    std::vector<PerfEvtSelValue> values;
    for (auto s : batch) values.push_back(scan_control(s, config.any_thread));
    std::vector<std::vector<std::int64_t>> samples(batch.size());
    // Noise keyed by (instruction, batch) keeps results independent of partitioning.
    if constexpr (requires { backend.reseed(std::uint64_t{}); }) {
      backend.reseed(combine_seeds({static_cast<std::uint64_t>(entry.id), batch.front().packed(), batch.size()}));
    }
    ExecStatus status = ExecStatus::kSuccess;
    for (unsigned rep = 0; rep < config.repetitions; ++rep) {
      auto r = measure_batch(backend, std::span<const PerfEvtSelValue>(values), workload);
      if (!have_outcome) {
        scan.outcome = r.outcome;
        have_outcome = true;
      }
      if (!r.outcome.ok() && status == ExecStatus::kSuccess) status = r.outcome.status;
      for (std::size_t i = 0; i < batch.size(); ++i) samples[i].push_back(r.deltas[i]);
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto median = detail::lower_median(samples[i]);
      scan.records.push_back(
          {batch[i], entry.id, median, status, config.repetitions, median < config.quiet_threshold});
    }
  };

  for (std::size_t start = 0; start < selectors.size(); start += width) {
    auto batch = selectors.subspan(start, std::min(width, selectors.size() - start));
    try {
      measure(batch);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kCapability || e.kind() == ErrorKind::kUsage) throw;
      // Retry one at a time so a single bad selector only loses itself.
      for (auto s : batch) {
        try {
          measure(std::span<const EventSelector>(&s, 1));
        } catch (const Error& single) {
          if (single.kind() == ErrorKind::kCapability) throw;
          scan.gaps.push_back({s, entry.id, single.what()});
        }
      }
    }
  }
  return scan;
}

/// A backend plus the executor that drives it; one per worker.
template <class S>
concept ScanStation = requires(S& s) {
  requires CounterBackend<std::remove_cvref_t<decltype(s.backend())>>;
  requires SnippetExecutor<std::remove_cvref_t<decltype(s.executor())>>;
};

class SimStation {
 public:
  explicit SimStation(SimModel model) : pmu_(std::move(model)), executor_(pmu_) {}
  SimStation(const SimStation&) = delete;
  SimStation& operator=(const SimStation&) = delete;

  SimulatedPmu& backend() noexcept { return pmu_; }
  SimulatedExecutor& executor() noexcept { return executor_; }

 private:
  SimulatedPmu pmu_;
  SimulatedExecutor executor_;
};

static_assert(ScanStation<SimStation>);

using RecordSink = std::function<void(const ScanRecord&)>;

/// Scans every corpus entry against `selectors` (normally the full space).
/// The selector range is partitioned across `config.jobs` stations; records
/// reach `sink` in (instruction, packed selector) order regardless of jobs.
template <class StationFactory>
ScanReport full_scan(const std::vector<InstructionEntry>& corpus, const EventCatalog& catalog,
                     StationFactory&& make_station, const ScanConfig& config,
                     std::span<const EventSelector> selectors, const RecordSink& sink = {}) {
  const unsigned jobs = std::max(1U, config.jobs);
  using StationPtr = decltype(make_station());
  std::vector<StationPtr> stations;
  for (unsigned j = 0; j < jobs; ++j) stations.push_back(make_station());
  if (config.mode == SuppressionMode::kTransactional &&
      !stations.front()->backend().capabilities().supports_transactional_suppression) {
    throw Error(ErrorKind::kCapability, "transactional suppression requested but not supported by backend");
  }

  // Partition boundaries aligned to the counter batch width.
  const std::size_t width = kMaxProgrammableCounters;
  const std::size_t batches = (selectors.size() + width - 1) / width;
  std::vector<std::span<const EventSelector>> parts;
  for (unsigned j = 0; j < jobs; ++j) {
    const std::size_t lo = std::min(selectors.size(), batches * j / jobs * width);
    const std::size_t hi = std::min(selectors.size(), batches * (j + 1) / jobs * width);
    parts.push_back(selectors.subspan(lo, hi - lo));
  }

  ScanReport report;
  report.microarchitecture_label = config.microarchitecture_label;
  report.catalog_source = catalog.source();
  report.total_instructions = corpus.size();

  std::vector<InstructionScan> results(jobs);
  for (const auto& entry : corpus) {
    if (jobs == 1) {
      results[0] = scan_instruction(entry, parts[0], stations[0]->backend(), stations[0]->executor(), config);
    } else {
      std::vector<std::exception_ptr> errors(jobs);
      {
        std::vector<std::jthread> workers;
        for (unsigned j = 0; j < jobs; ++j) {
          workers.emplace_back([&, j] {
            try {
              results[j] = scan_instruction(entry, parts[j], stations[j]->backend(), stations[j]->executor(), config);
            } catch (...) {
              errors[j] = std::current_exception();
            }
          });
        }
      }
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    }

    ExecStatus status = results[0].outcome.status;
    for (const auto& r : results) {
      if (!r.records.empty() || !r.gaps.empty()) {
        status = r.outcome.status;
        break;
      }
    }
    switch (status) {
      case ExecStatus::kSuccess: ++report.executed_success; break;
      case ExecStatus::kFault: ++report.executed_fault; break;
      case ExecStatus::kUnsupportedExtension: ++report.unsupported; break;
    }

    for (auto& r : results) {
      for (const auto& rec : r.records) {
        if (sink) sink(rec);
        if (!rec.quiet && rec.outcome != ExecStatus::kUnsupportedExtension && !is_documented(rec.selector, catalog)) {
          report.hidden_events[rec.selector].insert(rec.instruction_id);
        }
      }
      for (auto& g : r.gaps) report.gaps.push_back(std::move(g));
      r = {};
    }
  }
  return report;
}

template <class StationFactory>
ScanReport full_scan(const std::vector<InstructionEntry>& corpus, const EventCatalog& catalog,
                     StationFactory&& make_station, const ScanConfig& config, const RecordSink& sink = {}) {
  static const auto space = enumerate_space();
  return full_scan(corpus, catalog, std::forward<StationFactory>(make_station), config,
                   std::span<const EventSelector>(space), sink);
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::json record_to_json(const ScanRecord& r) {
  return {{"selector", to_string(r.selector)},
          {"instruction", r.instruction_id},
          {"delta", r.delta},
          {"outcome", std::string(to_string(r.outcome))}};
}

/// One newline-delimited JSON object per record.
inline void write_record(std::ostream& out, const ScanRecord& r) { out << record_to_json(r).dump() << '\n'; }

inline nlohmann::ordered_json report_to_json(const ScanReport& r) {
  nlohmann::ordered_json hidden = nlohmann::ordered_json::array();
  for (const auto& [sel, ids] : r.hidden_events) {
    hidden.push_back({{"selector", to_string(sel)}, {"instructions", ids}});
  }
  nlohmann::ordered_json gaps = nlohmann::ordered_json::array();
  for (const auto& g : r.gaps) {
    gaps.push_back({{"selector", to_string(g.selector)}, {"instruction", g.instruction_id}, {"message", g.message}});
  }
  nlohmann::ordered_json j;
  j["microarchitecture"] = r.microarchitecture_label;
  j["catalog_source"] = r.catalog_source;
  j["total_instructions"] = r.total_instructions;
  j["executed_success"] = r.executed_success;
  j["executed_fault"] = r.executed_fault;
  j["unsupported"] = r.unsupported;
  j["hidden_event_count"] = r.hidden_events.size();
  j["hidden_events"] = std::move(hidden);
  j["gaps"] = std::move(gaps);
  return j;
}

inline ScanReport report_from_json(const nlohmann::json& j) {
  try {
    ScanReport r;
    r.microarchitecture_label = j.at("microarchitecture").get<std::string>();
    r.catalog_source = j.at("catalog_source").get<std::string>();
    r.total_instructions = j.at("total_instructions").get<std::size_t>();
    r.executed_success = j.at("executed_success").get<std::size_t>();
    r.executed_fault = j.value("executed_fault", std::size_t{0});
    r.unsupported = j.value("unsupported", std::size_t{0});
    for (const auto& h : j.at("hidden_events")) {
      auto sel = parse_selector(h.at("selector").get<std::string>());
      if (!sel) throw Error(ErrorKind::kParse, "bad selector '" + h.at("selector").get<std::string>() + "'");
      r.hidden_events[*sel] = h.at("instructions").get<std::set<std::int64_t>>();
    }
    for (const auto& g : j.value("gaps", nlohmann::json::array())) {
      auto sel = parse_selector(g.at("selector").get<std::string>());
      if (!sel) throw Error(ErrorKind::kParse, "bad gap selector");
      r.gaps.push_back({*sel, g.at("instruction").get<std::int64_t>(), g.at("message").get<std::string>()});
    }
    if (r.executed_success > r.total_instructions) {
      throw Error(ErrorKind::kParse, "executed_success exceeds total_instructions");
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("scan report schema: ") + e.what());
  }
}

inline void persist_report(const ScanReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kInput, "cannot write report '" + path + "'");
  out << report_to_json(report).dump(2) << '\n';
}

inline ScanReport parse_report(std::string_view text, const std::string& origin = "report") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kParse, origin + " at byte offset " + std::to_string(e.byte) + ": " + e.what());
  }
  return report_from_json(j);
}

inline ScanReport load_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kInput, "cannot open report '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_report(text, path);
}

}  // namespace prospector
