#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "prospector/hidden_collector.hpp"
#include "prospector/sim_presets.hpp"
#include "support/planted.hpp"

using namespace prospector;

namespace {

auto station_for(const SimModel& m) {
  return [m] { return std::make_unique<SimStation>(m); };
}

std::set<std::uint16_t> reported(const ScanReport& r) {
  std::set<std::uint16_t> out;
  for (const auto& [s, ids] : r.hidden_events) out.insert(s.packed());
  return out;
}

InstructionEntry alu_entry(std::int64_t id, std::string cls = "alu") {
  return {id, "ADD", {"r64", "r64"}, "BASE", false, std::move(cls)};
}

std::vector<EventSelector> umasks_of(std::uint8_t code) {
  std::vector<EventSelector> out;
  for (unsigned u = 0; u < 256; ++u) out.push_back({code, static_cast<std::uint8_t>(u)});
  return out;
}

}  // namespace

TEST(LowerMedian, OddAndEven) {
  std::vector<std::int64_t> odd{5, 1, 3};
  EXPECT_EQ(detail::lower_median(odd), 3);
  std::vector<std::int64_t> even{4, 1, 3, 2};
  EXPECT_EQ(detail::lower_median(even), 2);
  std::vector<std::int64_t> spike{0, 0, 0, 0, 100};
  EXPECT_EQ(detail::lower_median(spike), 0);
}

TEST(ScanInstruction, PlantedFamilyOverAllUmasks) {
  SimModel m;
  m.families = {{0x6C, 0xA0, {"alu"}, 2, 0, 0}};
  SimStation st(m);
  ScanConfig cfg;
  auto sel = umasks_of(0x6C);
  auto scan = scan_instruction(alu_entry(1), sel, st.backend(), st.executor(), cfg);
  ASSERT_EQ(scan.records.size(), 256U);
  for (const auto& r : scan.records) {
    const bool expect = (r.selector.umask & 0xA0) != 0;
    EXPECT_EQ(r.delta, expect ? 2 : 0) << to_string(r.selector);
    EXPECT_EQ(r.quiet, !expect);
    EXPECT_EQ(r.outcome, ExecStatus::kSuccess);
  }
}

TEST(ScanInstruction, UntriggeredEntryIsQuiet) {
  SimModel m;
  m.families = {{0x6C, 0, {"memory-load"}, 2, 0, 0}};
  SimStation st(m);
  auto sel = umasks_of(0x6C);
  auto scan = scan_instruction(alu_entry(1), sel, st.backend(), st.executor(), ScanConfig{});
  for (const auto& r : scan.records) EXPECT_EQ(r.delta, 0);
}

TEST(ScanInstruction, FaultingEntryContinues) {
  SimModel m;
  m.families = {{0x6C, 0, {"alu"}, 2, 0, 0}};
  m.faults = {{3, SignalKind::kIllegalInstruction}};
  SimStation st(m);
  auto sel = umasks_of(0x6C);
  auto scan = scan_instruction(alu_entry(3), sel, st.backend(), st.executor(), ScanConfig{});
  ASSERT_EQ(scan.records.size(), 256U);
  EXPECT_EQ(scan.outcome.status, ExecStatus::kFault);
  for (const auto& r : scan.records) EXPECT_EQ(r.outcome, ExecStatus::kFault);
}

TEST(ScanInstruction, MedianSuppressesSpikes) {
  // Noise large enough to spike sometimes but rarely three times in five.
  SimModel m;
  m.seed = 3;
  m.families = {{0x6C, 0, {"none"}, 1, 0.35, 1}};
  SimStation st(m);
  auto sel = umasks_of(0x6C);
  ScanConfig one;
  one.repetitions = 1;
  ScanConfig five;
  std::size_t loud1 = 0, loud5 = 0;
  for (std::int64_t id = 0; id < 20; ++id) {
    for (const auto& r : scan_instruction(alu_entry(id), sel, st.backend(), st.executor(), one).records) loud1 += !r.quiet;
    for (const auto& r : scan_instruction(alu_entry(id), sel, st.backend(), st.executor(), five).records) loud5 += !r.quiet;
  }
  EXPECT_GT(loud1, 0U);
  EXPECT_LT(loud5 * 10, loud1);
}

namespace {

/// Backend that refuses one specific selector.
class PickyBackend {
 public:
  explicit PickyBackend(SimModel m) : pmu_(std::move(m)) {}
  BackendCapabilities capabilities() const { return pmu_.capabilities(); }
  void program(CounterSlot slot, const PerfEvtSelValue& v) {
    if (v.selector == EventSelector{0x6C, 0x05}) throw Error(ErrorKind::kBackend, "selector rejected");
    pmu_.program(slot, v);
  }
  std::uint64_t read(CounterSlot slot) const { return pmu_.read(slot); }
  SimulatedPmu pmu_;
};

}  // namespace

TEST(ScanInstruction, BackendFailureBecomesGap) {
  SimModel m;
  m.families = {{0x6C, 0, {"alu"}, 1, 0, 0}};
  PickyBackend backend(m);
  SimulatedExecutor exec(backend.pmu_);
  auto sel = umasks_of(0x6C);
  auto scan = scan_instruction(alu_entry(1), sel, backend, exec, ScanConfig{});
  ASSERT_EQ(scan.gaps.size(), 1U);
  EXPECT_EQ(scan.gaps[0].selector, (EventSelector{0x6C, 0x05}));
  EXPECT_EQ(scan.records.size(), 255U);
}

TEST(FullScan, PlantedFamiliesExactly) {
  SimModel m;
  m.families = {{0x10, 0x01, {"alu"}, 1, 0, 0},
                {0x20, 0x80, {"memory-load"}, 2, 0, 0},
                {0x30, 0x00, {"alu"}, 1, 0, 0},
                {0x3C, 0x00, {"alu", "memory-load"}, 1, 0, 0}};
  EventCatalog cat("doc");
  for (unsigned u = 0; u < 256; ++u) cat.insert({0x3C, static_cast<std::uint8_t>(u)}, "CLK");
  std::vector<InstructionEntry> corpus{alu_entry(1), alu_entry(2, "memory-load")};
  ScanConfig cfg;
  auto report = full_scan(corpus, cat, station_for(m), cfg);

  std::set<std::uint16_t> expected;
  for (unsigned u = 0; u < 256; ++u) {
    if (u & 0x01) expected.insert(EventSelector{0x10, static_cast<std::uint8_t>(u)}.packed());
    if (u & 0x80) expected.insert(EventSelector{0x20, static_cast<std::uint8_t>(u)}.packed());
    expected.insert(EventSelector{0x30, static_cast<std::uint8_t>(u)}.packed());
  }
  EXPECT_EQ(reported(report), expected);
  EXPECT_EQ(report.total_instructions, 2U);
  EXPECT_EQ(report.executed_success, 2U);
  EXPECT_EQ(report.catalog_source, "doc");
  EXPECT_EQ(report.hidden_events.at({0x20, 0x80}), (std::set<std::int64_t>{2}));
}

TEST(FullScan, EmptyCorpus) {
  auto report = full_scan({}, EventCatalog{}, station_for(default_sim_model(1)), ScanConfig{});
  EXPECT_TRUE(report.hidden_events.empty());
  EXPECT_EQ(report.total_instructions, 0U);
}

TEST(FullScan, RandomPlantedConfigurations) {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    auto c = planted::make(seed, 1 + seed % 10);
    auto report = full_scan(c.corpus, c.catalog, station_for(c.model), ScanConfig{});
    ASSERT_EQ(reported(report), c.expected) << "seed " << seed;
    EXPECT_EQ(report.executed_success + report.executed_fault + report.unsupported, report.total_instructions);
    EXPECT_EQ(report.executed_fault, 1U);
    EXPECT_EQ(report.unsupported, 1U);
    for (const auto& [s, ids] : report.hidden_events) ASSERT_FALSE(is_documented(s, c.catalog));
  }
}

TEST(FullScan, DeterministicAcrossJobs) {
  auto c = planted::make(42, 6);
  for (auto& f : c.model.families) f.noise_stddev = 0.6;
  std::vector<ScanRecord> seq1, seq3;
  ScanConfig one;
  ScanConfig three;
  three.jobs = 3;
  auto r1 = full_scan(c.corpus, c.catalog, station_for(c.model), one, [&](const ScanRecord& r) { seq1.push_back(r); });
  auto r3 = full_scan(c.corpus, c.catalog, station_for(c.model), three, [&](const ScanRecord& r) { seq3.push_back(r); });
  EXPECT_EQ(r1, r3);
  ASSERT_EQ(seq1.size(), seq3.size());
  EXPECT_TRUE(seq1 == seq3);
  for (std::size_t i = 1; i < seq1.size(); ++i) {
    if (seq1[i].instruction_id == seq1[i - 1].instruction_id) {
      ASSERT_LT(seq1[i - 1].selector.packed(), seq1[i].selector.packed());
    }
  }
}

TEST(FullScan, ThresholdMonotonicity) {
  auto c = planted::make(9, 8);
  for (auto& f : c.model.families) f.noise_stddev = 1.0;
  std::set<std::uint16_t> previous;
  bool first = true;
  for (std::int64_t threshold : {1, 2, 3, 5, 8}) {
    ScanConfig cfg;
    cfg.quiet_threshold = threshold;
    auto now = reported(full_scan(c.corpus, c.catalog, station_for(c.model), cfg));
    if (!first) {
      for (auto s : now) ASSERT_TRUE(previous.count(s)) << "threshold " << threshold << " added " << s;
    }
    previous = now;
    first = false;
  }
}

TEST(FullScan, TransactionalNeedsCapability) {
  auto c = planted::make(5, 2);
  ScanConfig cfg;
  cfg.mode = SuppressionMode::kTransactional;
  try {
    (void)full_scan(c.corpus, c.catalog, station_for(c.model), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kCapability);
  }
  c.model.supports_transactional_suppression = true;
  EXPECT_EQ(reported(full_scan(c.corpus, c.catalog, station_for(c.model), cfg)), c.expected);
}

TEST(Report, JsonRoundTrip) {
  ScanReport r;
  r.microarchitecture_label = "Skylake";
  r.total_instructions = 5492;
  r.executed_success = 3412;
  r.executed_fault = 1000;
  r.unsupported = 1080;
  r.catalog_source = "skylake.csv";
  r.hidden_events[{0x6C, 0x01}] = {1, 2};
  r.hidden_events[{0x6C, 0x03}] = {7};
  r.hidden_events[{0x10, 0x02}] = {3};
  r.gaps.push_back({{0x6C, 0x05}, 4, "rejected"});
  auto text = report_to_json(r).dump(2);
  EXPECT_EQ(parse_report(text), r);
  auto j = nlohmann::json::parse(text);
  EXPECT_EQ(j["hidden_event_count"], 3);
  EXPECT_EQ(j["total_instructions"], 5492);
}

TEST(Report, TruncatedFileIsParseError) {
  ScanReport r;
  r.hidden_events[{0x6C, 0x01}] = {1};
  auto text = report_to_json(r).dump(2);
  try {
    (void)parse_report(text.substr(0, text.size() / 2), "cut.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kParse);
    EXPECT_NE(std::string(e.what()).find("byte offset"), std::string::npos);
  }
  EXPECT_THROW((void)parse_report("{\"hidden_events\": 3}"), Error);
}

TEST(Report, LargeReportRoundTripThroughFile) {
  ScanReport r;
  r.microarchitecture_label = "Skylake";
  r.total_instructions = 5492;
  r.executed_success = 3412;
  std::mt19937_64 rng(20599);
  while (r.hidden_events.size() < 20599) {
    r.hidden_events[unpack_selector(static_cast<std::uint16_t>(rng()))].insert(static_cast<std::int64_t>(rng() % 5492));
  }
  auto path = (std::filesystem::temp_directory_path() / "prospector_large_report.json").string();
  persist_report(r, path);
  auto back = load_report(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.hidden_events.size(), 20599U);
  EXPECT_EQ(back, r);
}

TEST(Report, NdjsonRecords) {
  std::ostringstream out;
  write_record(out, {{0x6C, 0x01}, 7, 3, ExecStatus::kFault, 5, false});
  auto j = nlohmann::json::parse(out.str());
  EXPECT_EQ(j["selector"], "0x016C");
  EXPECT_EQ(j["instruction"], 7);
  EXPECT_EQ(j["delta"], 3);
  EXPECT_EQ(j["outcome"], "fault");
  EXPECT_EQ(out.str().back(), '\n');
}
