#pragma once

// Plot-ready CSV emission and the human-readable collector summary.

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "prospector/attack_detection.hpp"
#include "prospector/format.hpp"
#include "prospector/hidden_collector.hpp"
#include "prospector/seed.hpp"
#include "prospector/side_channel.hpp"

namespace prospector {

inline constexpr std::size_t kDetectionPlotSample = 400;
inline constexpr std::size_t kChannelPlotSample = 100;

/// Uniform sample of `k` rows without replacement, original order kept.
/// Fewer rows than `k` returns all of them.
template <class T>
std::vector<T> sample_rows(std::span<const T> rows, std::size_t k, std::uint64_t seed) {
  if (rows.size() <= k) return {rows.begin(), rows.end()};
  std::vector<T> out;
  out.reserve(k);
  std::mt19937_64 rng(seed);
  std::sample(rows.begin(), rows.end(), std::back_inserter(out), k, rng);
  return out;
}

inline void write_detection_plot_csv(std::ostream& out, std::span<const ScreeningRow> rows, std::size_t k,
                                     std::uint64_t run_seed) {
  auto picked = sample_rows(rows, k, substream_seed(run_seed, "plot-detection"));
  out << "selector,accuracy,precision,recall,f1,auc\n";
  for (const auto& r : picked) {
    out << to_string(r.selector) << ',' << format_double(r.metrics.accuracy) << ','
        << format_double(r.metrics.precision) << ',' << format_double(r.metrics.recall) << ','
        << format_double(r.metrics.f1) << ',' << format_double(r.metrics.auc) << '\n';
  }
}

inline void write_channel_csv(std::ostream& out, std::span<const ChannelScreenRow> rows) {
  out << "selector,accuracy,passed\n";
  for (const auto& r : rows) {
    out << to_string(r.selector) << ',' << format_double(r.accuracy) << ',' << (r.passed ? "true" : "false") << '\n';
  }
}

inline std::vector<ChannelScreenRow> read_channel_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "selector,accuracy,passed") {
    throw Error(ErrorKind::kParse, "channel accuracy line 1: unexpected header");
  }
  std::vector<ChannelScreenRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    auto v = detail::trim(line);
    if (v.empty()) continue;
    auto f = detail::split(v, ',');
    auto sel = f.size() == 3 ? parse_selector(f[0]) : std::nullopt;
    auto acc = f.size() == 3 ? parse_double(f[1]) : std::nullopt;
    if (!sel || !acc || (f[2] != "true" && f[2] != "false")) {
      throw Error(ErrorKind::kParse, "channel accuracy line " + std::to_string(line_no) + ": malformed row");
    }
    rows.push_back({*sel, *acc, f[2] == "true"});
  }
  return rows;
}

inline void write_channel_plot_csv(std::ostream& out, std::span<const ChannelScreenRow> rows, std::size_t k,
                                   std::uint64_t run_seed) {
  auto picked = sample_rows(rows, k, substream_seed(run_seed, "plot-channel"));
  out << "selector,accuracy\n";
  for (const auto& r : picked) out << to_string(r.selector) << ',' << format_double(r.accuracy) << '\n';
}

/// Collector summary with one row per report.
inline void write_summary_table(std::ostream& out, std::span<const ScanReport> reports) {
  out << std::left << std::setw(20) << "Micro-Architecture" << std::right << std::setw(20) << "Total Instructions"
      << std::setw(20) << "Execution Success" << std::setw(20) << "Hidden PMU Events" << '\n';
  for (const auto& r : reports) {
    out << std::left << std::setw(20) << r.microarchitecture_label << std::right << std::setw(20)
        << r.total_instructions << std::setw(20) << r.executed_success << std::setw(20) << r.hidden_events.size()
        << '\n';
  }
}

}  // namespace prospector
