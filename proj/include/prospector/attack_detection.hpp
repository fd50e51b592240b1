#pragma once

// Per-event transient-execution attack detection: labeled sample
// collection under Clean / No-Attack / Attack scenarios, a scalar logistic
// regression detector, the metric suite, and threshold screening.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "prospector/counter_backend.hpp"
#include "prospector/error.hpp"
#include "prospector/event_space.hpp"
#include "prospector/format.hpp"
#include "prospector/seed.hpp"

namespace prospector {

enum class AttackName { kSpectreV1, kSpectreV2, kMeltdown, kSpectreV4, kZombieloadV1, kZombieloadV2 };

inline constexpr std::array<AttackName, 6> kAllAttacks = {AttackName::kSpectreV1,    AttackName::kSpectreV2,
                                                          AttackName::kMeltdown,     AttackName::kSpectreV4,
                                                          AttackName::kZombieloadV1, AttackName::kZombieloadV2};

constexpr std::string_view to_string(AttackName a) noexcept {
  switch (a) {
    case AttackName::kSpectreV1: return "spectre_v1";
    case AttackName::kSpectreV2: return "spectre_v2";
    case AttackName::kMeltdown: return "meltdown";
    case AttackName::kSpectreV4: return "spectre_v4";
    case AttackName::kZombieloadV1: return "zombieload_v1";
    case AttackName::kZombieloadV2: return "zombieload_v2";
  }
  return "unknown";
}

inline std::optional<AttackName> parse_attack_name(std::string_view s) {
  for (auto a : kAllAttacks) {
    if (to_string(a) == s) return a;
  }
  return std::nullopt;
}

/// Instruction class the attack primitive retires in the simulated attacker.
constexpr std::string_view attack_primitive_class(AttackName a) noexcept {
  switch (a) {
    case AttackName::kSpectreV1: return "branch-mispredict";
    case AttackName::kSpectreV2: return "indirect-branch-mistrain";
    case AttackName::kMeltdown: return "transient-load";
    case AttackName::kSpectreV4: return "store-bypass";
    case AttackName::kZombieloadV1: return "fill-buffer-sample";
    case AttackName::kZombieloadV2: return "tsx-async-abort";
  }
  return "";
}

enum class ScenarioKind { kClean, kNoAttack, kAttack };

constexpr std::string_view to_string(ScenarioKind k) noexcept {
  switch (k) {
    case ScenarioKind::kClean: return "clean";
    case ScenarioKind::kNoAttack: return "no_attack";
    case ScenarioKind::kAttack: return "attack";
  }
  return "unknown";
}

struct ActivityItem {
  std::string class_tag;
  LogicalContext context = LogicalContext::kOwn;
  std::uint64_t count = 1;

  friend bool operator==(const ActivityItem&, const ActivityItem&) = default;
};

/// Instruction-class activity retired during one sample window.
using WorkloadProfile = std::vector<ActivityItem>;

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::kClean;
  std::optional<AttackName> attack_name;
  WorkloadProfile workload_profile;
};

namespace profiles {

// The victim and the text read/write background run on the sibling logical
// core; the attacker (and the monitor) on the measured one.
inline WorkloadProfile victim() {
  return {{"memory-load", LogicalContext::kSibling, 8},
          {"alu", LogicalContext::kSibling, 16},
          {"branch", LogicalContext::kSibling, 4}};
}

inline WorkloadProfile background_io() {
  return {{"syscall", LogicalContext::kSibling, 2}, {"memory-store", LogicalContext::kSibling, 4}};
}

/// Attacker code surrounding the primitive (probe setup and reload loop).
inline WorkloadProfile attack_scaffold() {
  return {{"cache-flush", LogicalContext::kOwn, 4},
          {"memory-load", LogicalContext::kOwn, 4},
          {"alu", LogicalContext::kOwn, 8},
          {"branch", LogicalContext::kOwn, 2}};
}

inline WorkloadProfile attack_primitive(AttackName a, std::uint64_t count = 4) {
  return {{std::string(attack_primitive_class(a)), LogicalContext::kOwn, count}};
}

}  // namespace profiles

inline ScenarioSpec make_scenario(ScenarioKind kind, std::optional<AttackName> attack = std::nullopt) {
  if ((kind == ScenarioKind::kClean) == attack.has_value()) {
    throw Error(ErrorKind::kUsage, "attack name is required for no_attack/attack scenarios and absent for clean");
  }
  ScenarioSpec spec{kind, attack, {}};
  auto append = [&spec](const WorkloadProfile& p) {
    spec.workload_profile.insert(spec.workload_profile.end(), p.begin(), p.end());
  };
  append(profiles::victim());
  append(profiles::background_io());
  if (kind != ScenarioKind::kClean) append(profiles::attack_scaffold());
  if (kind == ScenarioKind::kAttack) append(profiles::attack_primitive(*attack));
  return spec;
}

struct Sample {
  std::int64_t delta = 0;
  int label = 0;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct CollectOptions {
  bool any_thread = false;
};

/// n samples, one scenario workload window each.
inline std::vector<Sample> collect_samples(EventSelector selector, const ScenarioSpec& scenario, std::size_t n,
                                           SimulatedPmu& backend, CollectOptions options = {}) {
  if (n < 1) throw Error(ErrorKind::kUsage, "sample count must be >= 1");
  const int label = scenario.kind == ScenarioKind::kAttack ? 1 : 0;
  const auto value = scan_control(selector, options.any_thread);
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    DeltaResult r;
    try {
      r = measure_delta(backend, CounterSlot(0), value, [&] {
        for (const auto& item : scenario.workload_profile) backend.dispatch(item.class_tag, item.context, item.count);
      });
    } catch (const Error& e) {
      throw Error(ErrorKind::kBackend, std::string("collection failed: ") + e.what());
    }
    if (!r.outcome.ok()) throw Error(ErrorKind::kBackend, "collection workload faulted: " + r.outcome.fault_detail);
    out.push_back({r.delta, label});
  }
  return out;
}

struct LabeledDataset {
  EventSelector selector;
  std::vector<Sample> samples;
  std::uint64_t split_seed = 0;
};

/// Balanced dataset for one attack: n attack samples (label 1) against n
/// benign samples (label 0) drawn from Clean and, optionally, No-Attack.
inline LabeledDataset build_dataset(EventSelector selector, AttackName attack, std::size_t n_per_class,
                                    SimulatedPmu& backend, std::uint64_t split_seed, bool include_no_attack = true,
                                    CollectOptions options = {}) {
  LabeledDataset ds{selector, {}, split_seed};
  const std::size_t no_attack_n = include_no_attack ? n_per_class / 2 : 0;
  const std::size_t clean_n = n_per_class - no_attack_n;
  auto append = [&](std::vector<Sample> s) { ds.samples.insert(ds.samples.end(), s.begin(), s.end()); };
  append(collect_samples(selector, make_scenario(ScenarioKind::kAttack, attack), n_per_class, backend, options));
  if (clean_n) append(collect_samples(selector, make_scenario(ScenarioKind::kClean), clean_n, backend, options));
  if (no_attack_n) {
    append(collect_samples(selector, make_scenario(ScenarioKind::kNoAttack, attack), no_attack_n, backend, options));
  }
  return ds;
}

struct DatasetSplit {
  std::vector<Sample> train;
  std::vector<Sample> test;
};

/// Stratified split: each class contributes round(train_fraction * n_class)
/// samples to training, chosen by a shuffle seeded with split_seed.
inline DatasetSplit split_dataset(const LabeledDataset& ds, double train_fraction = 0.7) {
  std::array<std::vector<Sample>, 2> by_label;
  for (const auto& s : ds.samples) by_label[s.label == 1 ? 1 : 0].push_back(s);
  std::mt19937_64 rng(substream_seed(ds.split_seed, "split"));
  DatasetSplit split;
  for (auto& cls : by_label) {
    std::shuffle(cls.begin(), cls.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(cls.size())));
    split.train.insert(split.train.end(), cls.begin(), cls.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.test.insert(split.test.end(), cls.begin() + static_cast<std::ptrdiff_t>(n_train), cls.end());
  }
  return split;
}

struct LogisticModel {
  double weight = 0.0;
  double bias = 0.0;
  double feature_mean = 0.0;
  double feature_stddev = 1.0;
  std::size_t epochs = 0;
  bool converged = false;

  [[nodiscard]] double logit(std::int64_t delta) const noexcept {
    return weight * ((static_cast<double>(delta) - feature_mean) / feature_stddev) + bias;
  }

  /// sigmoid(logit), clamped to stay strictly inside (0, 1).
  [[nodiscard]] double predict(std::int64_t delta) const noexcept {
    const double x = logit(delta);
    const double p = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    constexpr double kEps = std::numeric_limits<double>::epsilon();
    return std::clamp(p, std::numeric_limits<double>::min(), 1.0 - kEps);
  }

  friend bool operator==(const LogisticModel&, const LogisticModel&) = default;
};

struct TrainConfig {
  double learning_rate = 0.1;
  std::size_t max_epochs = 2000;
  double gradient_tolerance = 1e-6;
  double train_fraction = 0.7;
};

/// Full-batch gradient descent on the mean log-loss of z-scored deltas.
inline LogisticModel fit_logistic(std::span<const Sample> train, const TrainConfig& config = {}) {
  std::size_t positives = 0;
  for (const auto& s : train) positives += s.label == 1;
  if (train.empty() || positives == 0 || positives == train.size()) {
    throw Error(ErrorKind::kDegenerateData, "training split must contain both labels");
  }
  LogisticModel m;
  const double n = static_cast<double>(train.size());
  double sum = 0.0;
  for (const auto& s : train) sum += static_cast<double>(s.delta);
  m.feature_mean = sum / n;
  double var = 0.0;
  for (const auto& s : train) var += std::pow(static_cast<double>(s.delta) - m.feature_mean, 2);
  m.feature_stddev = std::sqrt(var / n);
  if (!(m.feature_stddev > 0.0)) m.feature_stddev = 1.0;

  std::vector<double> z(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    z[i] = (static_cast<double>(train[i].delta) - m.feature_mean) / m.feature_stddev;
  }
  for (m.epochs = 0; m.epochs < config.max_epochs; ++m.epochs) {
    double gw = 0.0, gb = 0.0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      const double x = m.weight * z[i] + m.bias;
      const double p = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      const double err = p - static_cast<double>(train[i].label);
      gw += err * z[i];
      gb += err;
    }
    gw /= n;
    gb /= n;
    if (std::max(std::abs(gw), std::abs(gb)) < config.gradient_tolerance) {
      m.converged = true;
      break;
    }
    m.weight -= config.learning_rate * gw;
    m.bias -= config.learning_rate * gb;
  }
  return m;
}

struct TrainedDetector {
  LogisticModel model;
  DatasetSplit split;
};

/// Splits the dataset 70/30 (stratified) and fits on the training part.
inline TrainedDetector train(const LabeledDataset& dataset, const TrainConfig& config = {}) {
  auto split = split_dataset(dataset, config.train_fraction);
  auto model = fit_logistic(split.train, config);
  return {model, std::move(split)};
}

struct MetricsReport {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0, auc = 0.0;
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
  bool auc_undefined = false;
};

inline MetricsReport metrics_from_confusion(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
  MetricsReport m{tp, fp, fn, tn};
  const auto total = tp + fp + fn + tn;
  m.accuracy = total ? static_cast<double>(tp + tn) / static_cast<double>(total) : 0.0;
  if (tp + fp) m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  else m.precision_undefined = true;
  if (tp + fn) m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  else m.recall_undefined = true;
  if (m.precision + m.recall > 0.0) m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  else m.f1_undefined = true;
  return m;
}

/// Mann-Whitney rank statistic with tied scores sharing their average rank,
/// i.e. P(score+ > score-) + 0.5 P(score+ == score-). nullopt without both labels.
inline std::optional<double> rank_auc(std::span<const double> scores, std::span<const int> labels) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        positive_rank_sum += avg_rank;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  const double p = static_cast<double>(pos);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

inline MetricsReport compute_metrics_from_scores(std::span<const double> probabilities, std::span<const int> labels,
                                                 double threshold = 0.5) {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const bool predicted = probabilities[i] >= threshold;
    const bool actual = labels[i] == 1;
    tp += predicted && actual;
    fp += predicted && !actual;
    fn += !predicted && actual;
    tn += !predicted && !actual;
  }
  auto m = metrics_from_confusion(tp, fp, fn, tn);
  if (auto auc = rank_auc(probabilities, labels)) m.auc = *auc;
  else m.auc_undefined = true;
  return m;
}

/// Metrics of a trained model on held-out samples. The AUC ranks by logit,
/// which orders identically to the probability without saturation ties.
inline MetricsReport compute_metrics(const LogisticModel& model, std::span<const Sample> test, double threshold = 0.5) {
  if (test.empty()) throw Error(ErrorKind::kUsage, "test set is empty");
  std::vector<double> probs, logits;
  std::vector<int> labels;
  for (const auto& s : test) {
    probs.push_back(model.predict(s.delta));
    logits.push_back(model.logit(s.delta));
    labels.push_back(s.label);
  }
  auto m = compute_metrics_from_scores(probs, labels, threshold);
  if (auto auc = rank_auc(logits, labels)) m.auc = *auc;
  return m;
}

struct ScreenCriteria {
  double min_accuracy = 0.8;  // strict
  double min_f1 = 0.8;        // strict
  double min_auc = 0.7;       // strict
  bool exclude_perfect = false;  // drop any selector with a metric exactly 1.0
  bool exclude_f1_band = false;  // drop F1 in the open interval (0.9, 1)
};

[[nodiscard]] inline bool passes(const MetricsReport& m, const ScreenCriteria& c) {
  if (!(m.accuracy > c.min_accuracy && m.f1 > c.min_f1 && m.auc > c.min_auc)) return false;
  if (c.exclude_perfect) {
    for (double v : {m.accuracy, m.precision, m.recall, m.f1, m.auc}) {
      if (v == 1.0) return false;
    }
  }
  if (c.exclude_f1_band && m.f1 > 0.9 && m.f1 < 1.0) return false;
  return true;
}

inline std::vector<EventSelector> screen(const std::map<EventSelector, MetricsReport>& reports,
                                         const ScreenCriteria& criteria = {}) {
  std::vector<EventSelector> out;
  for (const auto& [sel, m] : reports) {
    if (passes(m, criteria)) out.push_back(sel);
  }
  return out;
}

struct DetectionReport {
  EventSelector selector;
  LogisticModel model;
  MetricsReport metrics;
};

inline DetectionReport evaluate_dataset(const LabeledDataset& ds, const TrainConfig& config = {}) {
  auto trained = train(ds, config);
  return {ds.selector, trained.model, compute_metrics(trained.model, trained.split.test)};
}

struct DetectionSuiteConfig {
  AttackName attack = AttackName::kMeltdown;
  std::size_t samples_per_class = 2000;
  std::uint64_t seed = 0;
  bool include_no_attack = true;
  CollectOptions collect;
  TrainConfig train;
  unsigned jobs = 1;
};

/// Runs collect + train + evaluate for every selector on its own simulated
/// PMU (seeded per selector), so results do not depend on `jobs`.
inline std::map<EventSelector, DetectionReport> run_detection_suite(std::span<const EventSelector> selectors,
                                                                    const SimModel& model,
                                                                    const DetectionSuiteConfig& config) {
  std::vector<std::optional<DetectionReport>> results(selectors.size());
  std::vector<std::exception_ptr> errors(selectors.size());
  auto work = [&](std::size_t i) {
    try {
      SimModel m = model;
      m.seed = combine_seeds({model.seed, substream_seed(config.seed, "detect-noise"), selectors[i].packed()});
      SimulatedPmu pmu(std::move(m));
      const auto split_seed = combine_seeds({substream_seed(config.seed, "detect-split"), selectors[i].packed()});
      auto ds = build_dataset(selectors[i], config.attack, config.samples_per_class, pmu, split_seed,
                              config.include_no_attack, config.collect);
      results[i] = evaluate_dataset(ds, config.train);
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
  std::map<EventSelector, DetectionReport> out;
  for (std::size_t i = 0; i < selectors.size(); ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    out.emplace(selectors[i], *results[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV formats

inline void write_dataset_csv(std::ostream& out, std::span<const Sample> samples) {
  out << "delta,label\n";
  for (const auto& s : samples) out << s.delta << ',' << s.label << '\n';
}

inline std::vector<Sample> read_dataset_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<Sample> out;
  if (!std::getline(in, line) || detail::trim(line) != "delta,label") {
    throw Error(ErrorKind::kParse, "dataset line 1: expected header 'delta,label'");
  }
  ++line_no;
  while (std::getline(in, line)) {
    ++line_no;
    auto v = detail::trim(line);
    if (v.empty()) continue;
    auto f = detail::split(v, ',');
    auto delta = f.size() == 2 ? parse_int<std::int64_t>(f[0]) : std::nullopt;
    auto label = f.size() == 2 ? parse_int<int>(f[1]) : std::nullopt;
    if (!delta || !label || (*label != 0 && *label != 1)) {
      throw Error(ErrorKind::kParse, "dataset line " + std::to_string(line_no) + ": expected '<int>,<0|1>'");
    }
    out.push_back({*delta, *label});
  }
  return out;
}

struct ScreeningRow {
  EventSelector selector;
  MetricsReport metrics;
  bool passed = false;
};

inline void write_screening_csv(std::ostream& out, std::span<const ScreeningRow> rows) {
  out << "selector,accuracy,precision,recall,f1,auc,passed\n";
  for (const auto& r : rows) {
    out << to_string(r.selector) << ',' << format_double(r.metrics.accuracy) << ','
        << format_double(r.metrics.precision) << ',' << format_double(r.metrics.recall) << ','
        << format_double(r.metrics.f1) << ',' << format_double(r.metrics.auc) << ','
        << (r.passed ? "true" : "false") << '\n';
  }
}

inline std::vector<ScreeningRow> read_screening_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || detail::trim(line) != "selector,accuracy,precision,recall,f1,auc,passed") {
    throw Error(ErrorKind::kParse, "screening line 1: unexpected header");
  }
  std::vector<ScreeningRow> rows;
  while (std::getline(in, line)) {
    ++line_no;
    auto v = detail::trim(line);
    if (v.empty()) continue;
    auto f = detail::split(v, ',');
    if (f.size() != 7) throw Error(ErrorKind::kParse, "screening line " + std::to_string(line_no) + ": 7 columns");
    ScreeningRow row;
    auto sel = parse_selector(f[0]);
    std::array<std::optional<double>, 5> vals{parse_double(f[1]), parse_double(f[2]), parse_double(f[3]),
                                              parse_double(f[4]), parse_double(f[5])};
    if (!sel || std::any_of(vals.begin(), vals.end(), [](auto& x) { return !x; }) ||
        (f[6] != "true" && f[6] != "false")) {
      throw Error(ErrorKind::kParse, "screening line " + std::to_string(line_no) + ": malformed row");
    }
    row.selector = *sel;
    row.metrics.accuracy = *vals[0];
    row.metrics.precision = *vals[1];
    row.metrics.recall = *vals[2];
    row.metrics.f1 = *vals[3];
    row.metrics.auc = *vals[4];
    row.passed = f[6] == "true";
    rows.push_back(row);
  }
  return rows;
}

}  // namespace prospector
