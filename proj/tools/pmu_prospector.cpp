// pmu_prospector: hidden PMU event discovery and exploitation toolkit.
//
//   scan           corpus x event-space scan, writes a scan report
//   analyze-umask  umask distribution + relevance masks from a report
//   detect         collect | train | screen per-event attack detectors
//   sidechannel    run | screen PMU side-channel recovery
//   report         collector summary table
//   plot           plot-ready CSV samples
//   synth          write a synthetic corpus, catalog and sim model

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "prospector/native.hpp"
#include "prospector/prospector.hpp"

namespace fs = std::filesystem;
using namespace prospector;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct RunConfig {
  std::string backend = "sim";
  std::string sim_model_path;
  std::string corpus_path;
  std::string catalog_path;
  std::uint64_t seed = 0;
  std::string output_dir = ".";
  unsigned jobs = 1;
};

SimModel resolve_sim_model(const RunConfig& rc) {
  if (rc.sim_model_path.empty()) return default_sim_model(substream_seed(rc.seed, "sim-model"));
  auto m = load_sim_model_file(rc.sim_model_path);
  m.seed = combine_seeds({m.seed, substream_seed(rc.seed, "sim-model")});
  return m;
}

std::string output_path(const RunConfig& rc, const std::string& given, const std::string& fallback) {
  if (!given.empty()) return given;
  fs::create_directories(rc.output_dir);
  return (fs::path(rc.output_dir) / fallback).string();
}

std::ofstream open_out(const std::string& path) {
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kInput, "cannot write '" + path + "'");
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kInput, "cannot open '" + path + "'");
  return in;
}

EventSelector selector_arg(const std::string& text) {
  auto s = parse_selector(text);
  if (!s) throw Error(ErrorKind::kUsage, "selector must look like 0xUUEE, got '" + text + "'");
  return *s;
}

std::vector<std::uint8_t> read_secret(const std::string& path) {
  auto in = open_in(path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty()) throw Error(ErrorKind::kInput, "secret file '" + path + "' is empty");
  return bytes;
}

std::vector<EventSelector> hidden_selectors(const std::string& report_path) {
  std::vector<EventSelector> out;
  for (const auto& [sel, ids] : load_report(report_path).hidden_events) out.push_back(sel);
  return out;
}

// --- scan -------------------------------------------------------------------

struct ScanArgs {
  unsigned repetitions = 5;
  std::int64_t quiet_threshold = 1;
  std::string out;
  std::string records;
  bool all_records = false;
  std::string label = "simulated";
  bool transactional = false;
  bool any_thread = false;
  unsigned cpu = 0;
};

class NativeStation {
 public:
  NativeStation(unsigned cpu) : backend_(cpu) {}
  MsrBackend& backend() noexcept { return backend_; }
  NativeExecutor& executor() noexcept { return executor_; }

 private:
  MsrBackend backend_;
  NativeExecutor executor_;
};

int run_scan(const RunConfig& rc, const ScanArgs& a) {
  auto parsed = parse_corpus_file(rc.corpus_path);
  for (const auto& d : parsed.diagnostics) {
    std::cerr << rc.corpus_path << ":" << d.line << ": skipped malformed line: " << d.message << '\n';
  }
  auto catalog = load_catalog_file(rc.catalog_path);

  ScanConfig config;
  config.repetitions = a.repetitions;
  config.quiet_threshold = a.quiet_threshold;
  config.mode = a.transactional ? SuppressionMode::kTransactional : SuppressionMode::kSignalHandler;
  config.microarchitecture_label = a.label;
  config.jobs = rc.jobs;
  config.any_thread = a.any_thread;

  const auto report_path = output_path(rc, a.out, "scan_report.json");
  std::unique_ptr<std::ofstream> records;
  if (!a.records.empty()) records = std::make_unique<std::ofstream>(open_out(a.records));
  RecordSink sink;
  if (records) {
    sink = [&](const ScanRecord& r) {
      if (a.all_records || !r.quiet) write_record(*records, r);
    };
  }

  ScanReport report;
  if (rc.backend == "native") {
    auto probe = probe_native(a.cpu);
    if (!probe.available) {
      std::cerr << describe(probe) << '\n';
      return kExitRuntime;
    }
    config.jobs = 1;
    report = full_scan(parsed.entries, catalog, [&] { return std::make_unique<NativeStation>(a.cpu); }, config, sink);
  } else {
    auto model = resolve_sim_model(rc);
    report = full_scan(parsed.entries, catalog, [&] { return std::make_unique<SimStation>(model); }, config, sink);
  }
  persist_report(report, report_path);
  std::cout << "scanned " << report.total_instructions << " instructions (" << report.executed_success
            << " succeeded), " << report.hidden_events.size() << " hidden events -> " << report_path << '\n';
  return kExitOk;
}

// --- analyze-umask ----------------------------------------------------------

int run_analyze(const std::string& report_path, const std::string& catalog_path, const std::string& out_dir) {
  auto report = load_report(report_path);
  std::optional<EventCatalog> catalog;
  if (!catalog_path.empty()) catalog = load_catalog_file(catalog_path);
  fs::create_directories(out_dir);
  auto rows = emit_distribution(report);
  {
    auto out = open_out((fs::path(out_dir) / "distribution.csv").string());
    write_distribution_csv(out, rows);
  }
  std::vector<RelevanceMask> masks;
  for (const auto& [code, obs] : observations_from_report(report, catalog ? &*catalog : nullptr)) {
    masks.push_back(infer_relevance_mask(obs));
  }
  {
    auto out = open_out((fs::path(out_dir) / "relevance_masks.csv").string());
    write_relevance_csv(out, masks);
  }
  std::cout << rows.size() << " hidden selectors across " << masks.size() << " event codes -> " << out_dir << '\n';
  return kExitOk;
}

// --- detect -----------------------------------------------------------------

struct DetectArgs {
  std::string attack = "meltdown";
  std::size_t samples = 2000;
  std::string selector;
  std::string dataset;
  std::string report;
  std::vector<std::string> selectors;
  std::string out;
  std::string model_out;
  bool clean_only = false;
  bool any_thread = false;
  bool exclude_perfect = false;
  bool exclude_f1_band = false;
};

AttackName attack_arg(const std::string& s) {
  auto a = parse_attack_name(s);
  if (!a) throw Error(ErrorKind::kUsage, "unknown attack '" + s + "'");
  return *a;
}

ScreenCriteria criteria_from(const DetectArgs& a) {
  ScreenCriteria c;
  c.exclude_perfect = a.exclude_perfect;
  c.exclude_f1_band = a.exclude_f1_band;
  return c;
}

int run_detect_collect(const RunConfig& rc, const DetectArgs& a) {
  auto selector = selector_arg(a.selector);
  auto model = resolve_sim_model(rc);
  model.seed = combine_seeds({model.seed, substream_seed(rc.seed, "detect-noise"), selector.packed()});
  SimulatedPmu pmu(model);
  auto ds = build_dataset(selector, attack_arg(a.attack), a.samples, pmu, substream_seed(rc.seed, "detect-split"),
                          !a.clean_only, {a.any_thread});
  const auto path = output_path(rc, a.out, "dataset.csv");
  auto out = open_out(path);
  write_dataset_csv(out, ds.samples);
  std::cout << ds.samples.size() << " samples -> " << path << '\n';
  return kExitOk;
}

int run_detect_train(const RunConfig& rc, const DetectArgs& a) {
  auto in = open_in(a.dataset);
  LabeledDataset ds{a.selector.empty() ? EventSelector{} : selector_arg(a.selector), read_dataset_csv(in),
                    substream_seed(rc.seed, "detect-split")};
  auto report = evaluate_dataset(ds);
  ScreeningRow row{ds.selector, report.metrics, passes(report.metrics, criteria_from(a))};
  const auto path = output_path(rc, a.out, "metrics.csv");
  {
    auto out = open_out(path);
    write_screening_csv(out, std::span<const ScreeningRow>(&row, 1));
  }
  if (!a.model_out.empty()) {
    nlohmann::ordered_json j;
    j["selector"] = to_string(ds.selector);
    j["weight"] = report.model.weight;
    j["bias"] = report.model.bias;
    j["feature_mean"] = report.model.feature_mean;
    j["feature_stddev"] = report.model.feature_stddev;
    j["epochs"] = report.model.epochs;
    j["converged"] = report.model.converged;
    auto out = open_out(a.model_out);
    out << j.dump(2) << '\n';
  }
  std::cout << "accuracy=" << format_double(row.metrics.accuracy) << " f1=" << format_double(row.metrics.f1)
            << " auc=" << format_double(row.metrics.auc) << (row.passed ? " PASS" : " FAIL") << '\n';
  return kExitOk;
}

int run_detect_screen(const RunConfig& rc, const DetectArgs& a) {
  std::vector<EventSelector> selectors;
  if (!a.report.empty()) selectors = hidden_selectors(a.report);
  for (const auto& s : a.selectors) selectors.push_back(selector_arg(s));
  if (selectors.empty()) throw Error(ErrorKind::kUsage, "detect screen needs --report or --selector");
  DetectionSuiteConfig config;
  config.attack = attack_arg(a.attack);
  config.samples_per_class = a.samples;
  config.seed = rc.seed;
  config.include_no_attack = !a.clean_only;
  config.collect.any_thread = a.any_thread;
  config.jobs = rc.jobs;
  auto results = run_detection_suite(selectors, resolve_sim_model(rc), config);
  std::vector<ScreeningRow> rows;
  std::size_t passed = 0;
  for (const auto& [sel, rep] : results) {
    rows.push_back({sel, rep.metrics, passes(rep.metrics, criteria_from(a))});
    passed += rows.back().passed;
  }
  const auto path = output_path(rc, a.out, "screening.csv");
  auto out = open_out(path);
  write_screening_csv(out, rows);
  std::cout << passed << " of " << rows.size() << " events pass the " << a.attack << " screen -> " << path << '\n';
  return kExitOk;
}

// --- sidechannel ------------------------------------------------------------

struct ChannelArgs {
  std::string attack = "meltdown";
  std::string selector;
  unsigned iterations = 10;
  std::string secret_file;
  std::string out;
  std::string report;
  std::string suppression = "signal";
  std::string transmit_class = "memory-load";
  double false_fire = 0.0;
};

GadgetSpec gadget_from(const ChannelArgs& a) {
  GadgetSpec spec;
  auto style = parse_attack_style(a.attack);
  if (!style) throw Error(ErrorKind::kUsage, "unknown side-channel attack '" + a.attack + "'");
  spec.style = *style;
  spec.iterations = a.iterations;
  spec.transmit_class = a.transmit_class;
  spec.suppression = a.suppression == "tsx" ? SuppressionMode::kTransactional : SuppressionMode::kSignalHandler;
  return spec;
}

int run_channel(const RunConfig& rc, const ChannelArgs& a) {
  auto spec = gadget_from(a);
  spec.bound_selector = selector_arg(a.selector);
  auto secret = read_secret(a.secret_file);
  spec.secret_length = secret.size();
  auto model = resolve_sim_model(rc);
  if (spec.suppression == SuppressionMode::kTransactional) model.supports_transactional_suppression = true;
  SimulatedPmu pmu(model);
  SimulatedVictim victim(secret, substream_seed(rc.seed, "channel-victim"), a.false_fire);
  auto result = recover_secret(spec, pmu, victim);
  auto metrics = channel_metrics(result.recovered, secret, result.elapsed);
  const auto path = output_path(rc, a.out, "sidechannel.json");
  auto out = open_out(path);
  out << recovery_to_json(spec, result, metrics).dump(2) << '\n';
  std::cout << "throughput=" << format_double(metrics.throughput_bps)
            << " Bps error_rate=" << format_double(metrics.error_rate) << " -> " << path << '\n';
  return kExitOk;
}

int run_channel_screen(const RunConfig& rc, const ChannelArgs& a) {
  auto spec = gadget_from(a);
  auto secret = read_secret(a.secret_file);
  auto model = resolve_sim_model(rc);
  if (spec.suppression == SuppressionMode::kTransactional) model.supports_transactional_suppression = true;
  ChannelScreenConfig config;
  config.false_fire_probability = a.false_fire;
  config.seed = rc.seed;
  config.jobs = rc.jobs;
  auto rows = evaluate_channel_events(hidden_selectors(a.report), spec, model, secret, config);
  const auto path = output_path(rc, a.out, "channel_accuracy.csv");
  auto out = open_out(path);
  write_channel_csv(out, rows);
  std::size_t passed = 0;
  for (const auto& r : rows) passed += r.passed;
  std::cout << passed << " of " << rows.size() << " events reach accuracy >= 0.80 -> " << path << '\n';
  return kExitOk;
}

// --- report / plot / synth --------------------------------------------------

int run_report(const std::vector<std::string>& inputs, const std::string& out_path) {
  std::vector<ScanReport> reports;
  for (const auto& p : inputs) reports.push_back(load_report(p));
  std::ostringstream table;
  write_summary_table(table, reports);
  std::cout << table.str();
  if (!out_path.empty()) {
    auto out = open_out(out_path);
    out << table.str();
  }
  return kExitOk;
}

int run_plot(const RunConfig& rc, const std::string& kind, const std::string& in_path, const std::string& out_path,
             std::optional<std::size_t> sample) {
  const auto path = output_path(rc, out_path, "plot_" + kind + ".csv");
  if (kind == "distribution") {
    auto rows = emit_distribution(load_report(in_path));
    auto out = open_out(path);
    write_distribution_csv(out, rows);
  } else if (kind == "detection") {
    auto in = open_in(in_path);
    auto rows = read_screening_csv(in);
    std::vector<ScreeningRow> passed;
    for (const auto& r : rows) {
      if (r.passed) passed.push_back(r);
    }
    auto out = open_out(path);
    write_detection_plot_csv(out, passed, sample.value_or(kDetectionPlotSample), rc.seed);
  } else if (kind == "sidechannel") {
    auto in = open_in(in_path);
    auto rows = read_channel_csv(in);
    std::vector<ChannelScreenRow> passed;
    for (const auto& r : rows) {
      if (r.passed) passed.push_back(r);
    }
    auto out = open_out(path);
    write_channel_plot_csv(out, passed, sample.value_or(kChannelPlotSample), rc.seed);
  } else {
    throw Error(ErrorKind::kUsage, "unknown plot kind '" + kind + "'");
  }
  std::cout << kind << " plot data -> " << path << '\n';
  return kExitOk;
}

int run_synth(const std::string& dir, std::size_t size, std::uint64_t seed) {
  fs::create_directories(dir);
  auto corpus = synthetic_corpus(size);
  auto model = default_sim_model(seed);
  model.faults = corpus.faults;
  {
    auto out = open_out((fs::path(dir) / "corpus.tsv").string());
    out << "# id\tmnemonic\toperands\textension\tclass_tag\n";
    write_corpus(out, corpus.entries);
  }
  {
    auto out = open_out((fs::path(dir) / "catalog.csv").string());
    write_catalog(out, default_catalog());
  }
  {
    auto out = open_out((fs::path(dir) / "sim_model.json").string());
    out << to_json(model).dump(2) << '\n';
  }
  std::cout << "wrote corpus.tsv, catalog.csv, sim_model.json -> " << dir << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hidden PMU event discovery and exploitation toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value config file (flags override it)")->envname("PMU_PROSPECTOR_CONFIG");

  RunConfig rc;
  app.add_option("--seed", rc.seed, "Run seed; every random stream derives from it");
  app.add_option("--jobs", rc.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--output-dir", rc.output_dir, "Directory for outputs without an explicit path");
  app.add_option("--sim-model", rc.sim_model_path, "Simulated PMU model (JSON); built-in default if absent");

  auto* scan = app.add_subcommand("scan", "Scan a corpus against the full event space");
  ScanArgs scan_args;
  scan->add_option("--corpus", rc.corpus_path, "Instruction corpus (TSV)")->required();
  scan->add_option("--catalog", rc.catalog_path, "Documented event catalog (CSV)")->required();
  scan->add_option("--backend", rc.backend, "Counter backend")->check(CLI::IsMember({"sim", "native"}));
  scan->add_option("--repetitions", scan_args.repetitions, "Executions per (instruction, selector)")
      ->check(CLI::PositiveNumber);
  scan->add_option("--quiet-threshold", scan_args.quiet_threshold, "Minimum median delta of a readable event");
  scan->add_option("--out", scan_args.out, "Scan report (JSON)");
  scan->add_option("--records", scan_args.records, "Per-record output (NDJSON)");
  scan->add_flag("--all-records", scan_args.all_records, "Also write quiet records");
  scan->add_option("--label", scan_args.label, "Microarchitecture label for the report");
  scan->add_flag("--transactional", scan_args.transactional, "Suppress faults transactionally");
  scan->add_flag("--any-thread", scan_args.any_thread, "Set the AnyThread bit when counting");
  scan->add_option("--cpu", scan_args.cpu, "Logical CPU for the native backend");
  scan->add_option("--sim-model", rc.sim_model_path, "Simulated PMU model (JSON)");
  scan->add_option("--seed", rc.seed, "Run seed");
  scan->add_option("--jobs", rc.jobs, "Worker threads")->check(CLI::PositiveNumber);

  auto* analyze = app.add_subcommand("analyze-umask", "Umask distribution and relevance masks");
  std::string analyze_report, analyze_catalog, analyze_out = "umask";
  analyze->add_option("--report", analyze_report, "Scan report")->required();
  analyze->add_option("--catalog", analyze_catalog, "Catalog used by the scan (documented umasks stay unobserved)");
  analyze->add_option("--out", analyze_out, "Output directory");

  auto* detect = app.add_subcommand("detect", "Per-event attack detection");
  detect->require_subcommand(1);
  DetectArgs det;
  auto common_detect = [&](CLI::App* sub) {
    sub->add_option("--attack", det.attack, "Attack name")
        ->check(CLI::IsMember({"spectre_v1", "spectre_v2", "meltdown", "spectre_v4", "zombieload_v1",
                               "zombieload_v2"}));
    sub->add_option("--samples", det.samples, "Samples per class")->check(CLI::PositiveNumber);
    sub->add_option("--seed", rc.seed, "Run seed");
    sub->add_option("--out", det.out, "Output path");
    sub->add_option("--sim-model", rc.sim_model_path, "Simulated PMU model (JSON)");
    sub->add_flag("--clean-only", det.clean_only, "Label-0 pool from Clean only (omit No-Attack)");
    sub->add_flag("--any-thread", det.any_thread, "Count sibling-core activity");
    sub->add_flag("--exclude-perfect", det.exclude_perfect, "Screen out metrics equal to 1");
    sub->add_flag("--exclude-f1-band", det.exclude_f1_band, "Screen out F1 in (0.9, 1)");
  };
  auto* collect = detect->add_subcommand("collect", "Collect a labeled dataset for one selector");
  common_detect(collect);
  collect->add_option("--selector", det.selector, "Selector 0xUUEE")->required();
  auto* train_cmd = detect->add_subcommand("train", "Train and evaluate a detector on a dataset");
  common_detect(train_cmd);
  train_cmd->add_option("--dataset", det.dataset, "Dataset CSV")->required();
  train_cmd->add_option("--selector", det.selector, "Selector the dataset belongs to");
  train_cmd->add_option("--model-out", det.model_out, "Write the fitted model (JSON)");
  auto* screen_cmd = detect->add_subcommand("screen", "Collect, train and screen every hidden event");
  common_detect(screen_cmd);
  screen_cmd->add_option("--report", det.report, "Scan report providing hidden events");
  screen_cmd->add_option("--selector", det.selectors, "Explicit selectors");
  screen_cmd->add_option("--jobs", rc.jobs, "Worker threads")->check(CLI::PositiveNumber);

  auto* channel = app.add_subcommand("sidechannel", "PMU side channel");
  channel->require_subcommand(1);
  ChannelArgs ch;
  auto common_channel = [&](CLI::App* sub) {
    sub->add_option("--attack", ch.attack, "meltdown | spectre_v2 | spectre_v1")
        ->check(CLI::IsMember({"meltdown", "spectre_v2", "spectre_v1"}));
    sub->add_option("--iterations", ch.iterations, "Gadget iterations per candidate")->check(CLI::PositiveNumber);
    sub->add_option("--secret-file", ch.secret_file, "Secret planted in the simulated victim")->required();
    sub->add_option("--out", ch.out, "Output path");
    sub->add_option("--suppression", ch.suppression, "Fault suppression")->check(CLI::IsMember({"signal", "tsx"}));
    sub->add_option("--transmit-class", ch.transmit_class, "Instruction class of the transmit instruction");
    sub->add_option("--false-fire", ch.false_fire, "False-fire probability of the transmit")
        ->check(CLI::Range(0.0, 1.0));
    sub->add_option("--seed", rc.seed, "Run seed");
    sub->add_option("--sim-model", rc.sim_model_path, "Simulated PMU model (JSON)");
  };
  auto* channel_run = channel->add_subcommand("run", "Recover a secret through one selector");
  common_channel(channel_run);
  channel_run->add_option("--selector", ch.selector, "Bound selector 0xUUEE")->required();
  auto* channel_screen = channel->add_subcommand("screen", "Accuracy of every hidden event as a channel");
  common_channel(channel_screen);
  channel_screen->add_option("--report", ch.report, "Scan report providing hidden events")->required();
  channel_screen->add_option("--jobs", rc.jobs, "Worker threads")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "Collector summary table");
  std::vector<std::string> report_in;
  std::string report_out;
  report->add_option("--in", report_in, "Scan report(s)")->required();
  report->add_option("--out", report_out, "Also write the table here");

  auto* plot = app.add_subcommand("plot", "Plot-ready CSV data");
  std::string plot_kind, plot_in, plot_out;
  std::optional<std::size_t> plot_sample;
  plot->add_option("--kind", plot_kind, "distribution | detection | sidechannel")
      ->required()
      ->check(CLI::IsMember({"distribution", "detection", "sidechannel"}));
  plot->add_option("--in", plot_in, "Scan report, screening CSV or channel accuracy CSV")->required();
  plot->add_option("--out", plot_out, "Output CSV");
  plot->add_option("--sample", plot_sample, "Rows to sample (400 detection, 100 sidechannel)");
  plot->add_option("--seed", rc.seed, "Run seed");

  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus, catalog and simulated model");
  std::string synth_dir = "synthetic";
  std::size_t synth_size = 48;
  synth->add_option("--out", synth_dir, "Output directory");
  synth->add_option("--size", synth_size, "Corpus entries")->check(CLI::PositiveNumber);
  synth->add_option("--seed", rc.seed, "Model seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code == 0) return kExitOk;
    std::cerr << '\n' << app.help();
    return kExitUsage;
  }

  try {
    if (*scan) return run_scan(rc, scan_args);
    if (*analyze) return run_analyze(analyze_report, analyze_catalog, analyze_out);
    if (*collect) return run_detect_collect(rc, det);
    if (*train_cmd) return run_detect_train(rc, det);
    if (*screen_cmd) return run_detect_screen(rc, det);
    if (*channel_run) return run_channel(rc, ch);
    if (*channel_screen) return run_channel_screen(rc, ch);
    if (*report) return run_report(report_in, report_out);
    if (*plot) return run_plot(rc, plot_kind, plot_in, plot_out, plot_sample);
    if (*synth) return run_synth(synth_dir, synth_size, rc.seed);
  } catch (const Error& e) {
    std::cerr << "pmu_prospector: " << e.what() << '\n';
    return e.kind() == ErrorKind::kUsage ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "pmu_prospector: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
