#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "prospector/attack_detection.hpp"
#include "support/oracles.hpp"

using namespace prospector;

namespace {

SimModel detection_model(double noise = 0.0) {
  SimModel m;
  m.seed = 17;
  m.families = {
      {0x8A, 0xA0, {"transient-load"}, 4, noise, 1},          // attack primitive only
      {0x21, 0x80, {"cache-flush"}, 1, 0.0, 2},               // scaffold only
      {0x3C, 0x00, {"alu", "memory-load", "branch"}, 1, 0.0, 3},  // everything on own core
      {0x77, 0x01, {"never"}, 1, 0.0, 4},                     // no trigger overlap
  };
  return m;
}

LabeledDataset separated(std::size_t n, std::uint64_t seed) {
  LabeledDataset ds{{0x8A, 0x80}, {}, seed};
  for (std::size_t i = 0; i < n; ++i) ds.samples.push_back({0, 0});
  for (std::size_t i = 0; i < n; ++i) ds.samples.push_back({100, 1});
  return ds;
}

}  // namespace

TEST(Scenario, AttackNamePresentIffNeeded) {
  EXPECT_NO_THROW(make_scenario(ScenarioKind::kClean));
  EXPECT_THROW(make_scenario(ScenarioKind::kClean, AttackName::kMeltdown), Error);
  EXPECT_THROW(make_scenario(ScenarioKind::kAttack), Error);
  EXPECT_THROW(make_scenario(ScenarioKind::kNoAttack), Error);
}

TEST(Scenario, NoAttackIsAttackMinusPrimitive) {
  for (auto a : kAllAttacks) {
    auto attack = make_scenario(ScenarioKind::kAttack, a).workload_profile;
    auto no_attack = make_scenario(ScenarioKind::kNoAttack, a).workload_profile;
    WorkloadProfile stripped;
    for (const auto& item : attack) {
      if (item.class_tag != attack_primitive_class(a)) stripped.push_back(item);
    }
    EXPECT_EQ(stripped, no_attack) << to_string(a);
    EXPECT_EQ(parse_attack_name(to_string(a)), a);
  }
  EXPECT_FALSE(parse_attack_name("rowhammer").has_value());
}

TEST(Collect, CleanWithoutOverlapIsZero) {
  SimulatedPmu pmu(detection_model());
  for (const auto& s : collect_samples({0x77, 0x01}, make_scenario(ScenarioKind::kClean), 50, pmu)) {
    EXPECT_EQ(s.delta, 0);
    EXPECT_EQ(s.label, 0);
  }
}

TEST(Collect, AttackDeltasAtLeastIncrement) {
  SimulatedPmu pmu(detection_model(0.8));
  for (const auto& s : collect_samples({0x8A, 0x20}, make_scenario(ScenarioKind::kAttack, AttackName::kMeltdown), 200, pmu)) {
    EXPECT_GE(s.delta, 4);
    EXPECT_EQ(s.label, 1);
  }
}

TEST(Collect, NoAttackMatchesProfileDifference) {
  SimulatedPmu pmu(detection_model());
  const EventSelector sel{0x3C, 0x00};
  auto clean = collect_samples(sel, make_scenario(ScenarioKind::kClean), 5, pmu);
  auto no_attack = collect_samples(sel, make_scenario(ScenarioKind::kNoAttack, AttackName::kMeltdown), 5, pmu);
  const EventSelector flush{0x21, 0x80};
  auto na_flush = collect_samples(flush, make_scenario(ScenarioKind::kNoAttack, AttackName::kMeltdown), 5, pmu);
  auto at_8a = collect_samples({0x8A, 0x80}, make_scenario(ScenarioKind::kAttack, AttackName::kMeltdown), 5, pmu);
  auto na_8a = collect_samples({0x8A, 0x80}, make_scenario(ScenarioKind::kNoAttack, AttackName::kMeltdown), 5, pmu);
  // Own-core scaffold: memory-load 4 + alu 8 + branch 2; victim runs on the sibling.
  for (const auto& s : clean) EXPECT_EQ(s.delta, 0);
  for (const auto& s : no_attack) EXPECT_EQ(s.delta, 14);
  for (const auto& s : na_flush) EXPECT_EQ(s.delta, 4);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_LT(na_8a[i].delta, at_8a[i].delta);

  CollectOptions any{true};
  auto clean_any = collect_samples(sel, make_scenario(ScenarioKind::kClean), 3, pmu, any);
  for (const auto& s : clean_any) EXPECT_EQ(s.delta, 8 + 16 + 4);
}

TEST(Dataset, BalancedAndSplit7030) {
  SimulatedPmu pmu(detection_model(0.5));
  auto ds = build_dataset({0x8A, 0x80}, AttackName::kMeltdown, 2000, pmu, 5);
  ASSERT_EQ(ds.samples.size(), 4000U);
  std::size_t ones = 0;
  for (const auto& s : ds.samples) ones += s.label;
  EXPECT_EQ(ones, 2000U);
  auto split = split_dataset(ds);
  EXPECT_EQ(split.train.size(), 2800U);
  EXPECT_EQ(split.test.size(), 1200U);
  std::size_t train_ones = 0;
  for (const auto& s : split.train) train_ones += s.label;
  EXPECT_EQ(train_ones, 1400U);
}

TEST(Dataset, StratifiedForOddSizes) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    LabeledDataset ds{{}, {}, rng()};
    const std::size_t n1 = 2 + rng() % 50, n0 = 2 + rng() % 50;
    for (std::size_t i = 0; i < n1; ++i) ds.samples.push_back({static_cast<std::int64_t>(i), 1});
    for (std::size_t i = 0; i < n0; ++i) ds.samples.push_back({static_cast<std::int64_t>(i), 0});
    auto split = split_dataset(ds);
    std::size_t t1 = 0;
    for (const auto& s : split.train) t1 += s.label;
    const double want1 = 0.7 * static_cast<double>(n1), want0 = 0.7 * static_cast<double>(n0);
    ASSERT_LE(std::abs(static_cast<double>(t1) - want1), 1.0);
    ASSERT_LE(std::abs(static_cast<double>(split.train.size() - t1) - want0), 1.0);
    ASSERT_EQ(split.train.size() + split.test.size(), n0 + n1);
  }
}

TEST(Train, PerfectlySeparatedData) {
  auto ds = separated(200, 9);
  auto rep = evaluate_dataset(ds);
  std::vector<std::pair<double, int>> pts;
  for (const auto& s : ds.samples) pts.emplace_back(static_cast<double>(s.delta), s.label);
  ASSERT_EQ(oracle::best_threshold_accuracy(pts), 1.0);
  EXPECT_EQ(rep.metrics.accuracy, 1.0);
  EXPECT_EQ(rep.metrics.auc, 1.0);
  EXPECT_GT(rep.model.weight, 0.0);
}

TEST(Train, IdenticalDistributionsNearChance) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> d(50, 10);
  LabeledDataset ds{{}, {}, 4};
  for (int i = 0; i < 4000; ++i) ds.samples.push_back({std::llround(d(rng)), i % 2});
  auto rep = evaluate_dataset(ds);
  EXPECT_NEAR(rep.metrics.accuracy, 0.5, 0.1);
}

TEST(Train, DeterministicUnderSplitSeed) {
  SimulatedPmu a(detection_model(1.0)), b(detection_model(1.0));
  auto da = build_dataset({0x8A, 0x80}, AttackName::kMeltdown, 300, a, 77);
  auto db = build_dataset({0x8A, 0x80}, AttackName::kMeltdown, 300, b, 77);
  ASSERT_EQ(da.samples, db.samples);
  auto ta = train(da), tb = train(db);
  EXPECT_EQ(ta.model, tb.model);
}

TEST(Train, PredictionStrictlyInsideUnitInterval) {
  auto rep = evaluate_dataset(separated(100, 1));
  for (std::int64_t d : {-1000000LL, -100LL, 0LL, 50LL, 100LL, 1000000LL}) {
    const double p = rep.model.predict(d);
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
}

TEST(Train, DegenerateSplit) {
  LabeledDataset ds{{}, {{1, 0}, {2, 0}, {3, 0}}, 0};
  try {
    (void)train(ds);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDegenerateData);
  }
}

TEST(Metrics, ReferenceConfusion) {
  auto m = metrics_from_confusion(3, 1, 1, 5);
  EXPECT_DOUBLE_EQ(m.precision, 0.75);
  EXPECT_DOUBLE_EQ(m.recall, 0.75);
  EXPECT_DOUBLE_EQ(m.f1, 0.75);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.8);
}

TEST(Metrics, UndefinedRatiosAreZeroAndFlagged) {
  auto m = metrics_from_confusion(0, 0, 0, 4);
  EXPECT_EQ(m.precision, 0.0);
  EXPECT_TRUE(m.precision_undefined);
  EXPECT_TRUE(m.recall_undefined);
  EXPECT_TRUE(m.f1_undefined);
  EXPECT_EQ(m.accuracy, 1.0);
}

TEST(Metrics, ExhaustiveSmallConfusions) {
  for (long tp = 0; tp <= 20; ++tp) {
    for (long fp = 0; tp + fp <= 20; ++fp) {
      for (long fn = 0; tp + fp + fn <= 20; ++fn) {
        for (long tn = 0; tp + fp + fn + tn <= 20; ++tn) {
          oracle::Confusion c{tp, fp, fn, tn};
          auto m = metrics_from_confusion(tp, fp, fn, tn);
          ASSERT_EQ(m.precision, oracle::precision(c));
          ASSERT_EQ(m.recall, oracle::recall(c));
          ASSERT_EQ(m.f1, oracle::f1(c));
          ASSERT_EQ(m.accuracy, oracle::accuracy(c));
        }
      }
    }
  }
}

TEST(Auc, ReferenceSets) {
  std::vector<double> s{0.9, 0.4, 0.8, 0.1};
  std::vector<int> l{1, 1, 0, 0};
  EXPECT_DOUBLE_EQ(*rank_auc(s, l), 0.75);
  std::vector<double> ordered{0.1, 0.2, 0.8, 0.9};
  std::vector<int> ol{0, 0, 1, 1};
  EXPECT_EQ(*rank_auc(ordered, ol), 1.0);
  std::vector<int> one_class{1, 1, 1, 1};
  EXPECT_FALSE(rank_auc(ordered, one_class).has_value());
}

TEST(Auc, MatchesAllPairsOnRandomSets) {
  std::mt19937_64 rng(1001);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng() % 199;
    std::vector<double> scores;
    std::vector<int> labels;
    std::vector<double> pos, neg;
    const bool coarse = trial % 2 == 0;  // many ties
    for (std::size_t i = 0; i < n; ++i) {
      double s = coarse ? double(rng() % 7) : std::uniform_real_distribution<double>(0, 1)(rng);
      int l = static_cast<int>(rng() % 2);
      if (i == 0) l = 0;
      if (i == 1) l = 1;
      scores.push_back(s);
      labels.push_back(l);
      (l ? pos : neg).push_back(s);
    }
    ASSERT_NEAR(*rank_auc(scores, labels), oracle::auc_all_pairs(pos, neg), 1e-12);
  }
}

TEST(Screen, Predicate) {
  MetricsReport m;
  m.accuracy = 0.85;
  m.f1 = 0.82;
  m.auc = 0.9;
  EXPECT_TRUE(passes(m, {}));
  m.auc = 1.0;
  EXPECT_TRUE(passes(m, {}));
  ScreenCriteria overfit;
  overfit.exclude_perfect = true;
  EXPECT_FALSE(passes(m, overfit));
  m.auc = 0.9;
  m.f1 = 0.95;
  ScreenCriteria band;
  band.exclude_f1_band = true;
  EXPECT_TRUE(passes(m, {}));
  EXPECT_FALSE(passes(m, band));
  m.accuracy = 0.8;  // strict
  EXPECT_FALSE(passes(m, {}));
}

TEST(Screen, PlantedPassingEvents) {
  std::mt19937_64 rng(12);
  std::map<EventSelector, MetricsReport> reports;
  std::set<std::uint16_t> planted;
  for (unsigned i = 0; i < 100; ++i) {
    const bool good = rng() % 3 == 0;
    // Good: 45/50 per class right; bad: 30/50.
    auto m = good ? metrics_from_confusion(45, 5, 5, 45) : metrics_from_confusion(30, 20, 20, 30);
    m.auc = good ? 0.93 : 0.6;
    EventSelector s = unpack_selector(static_cast<std::uint16_t>(i * 613));
    reports[s] = m;
    if (good) planted.insert(s.packed());
  }
  std::set<std::uint16_t> got;
  for (auto s : screen(reports)) got.insert(s.packed());
  EXPECT_EQ(got, planted);
}

TEST(Suite, SeparatesPrimitiveEventAndIsJobIndependent) {
  std::vector<EventSelector> sel{{0x8A, 0x80}, {0x3C, 0x00}, {0x77, 0x01}};
  DetectionSuiteConfig cfg;
  cfg.samples_per_class = 400;
  cfg.seed = 3;
  auto one = run_detection_suite(sel, detection_model(0.5), cfg);
  cfg.jobs = 3;
  auto three = run_detection_suite(sel, detection_model(0.5), cfg);
  for (auto s : sel) {
    EXPECT_EQ(one.at(s).model, three.at(s).model);
  }
  EXPECT_TRUE(passes(one.at({0x8A, 0x80}).metrics, {}));
  EXPECT_FALSE(passes(one.at({0x77, 0x01}).metrics, {}));
}

TEST(Csv, DatasetAndScreeningRoundTrip) {
  std::vector<Sample> samples{{0, 0}, {17, 1}, {-3, 0}};
  std::ostringstream out;
  write_dataset_csv(out, samples);
  EXPECT_EQ(out.str().substr(0, 12), "delta,label\n");
  std::istringstream in(out.str());
  EXPECT_EQ(read_dataset_csv(in), samples);

  auto m = metrics_from_confusion(3, 1, 1, 5);
  m.auc = 0.1 + 0.2;
  std::vector<ScreeningRow> rows{{{0x6C, 0x01}, m, true}};
  std::ostringstream sout;
  write_screening_csv(sout, rows);
  EXPECT_EQ(sout.str().substr(0, 43), "selector,accuracy,precision,recall,f1,auc,p");
  std::istringstream sin(sout.str());
  auto back = read_screening_csv(sin);
  ASSERT_EQ(back.size(), 1U);
  EXPECT_EQ(back[0].selector, rows[0].selector);
  EXPECT_EQ(back[0].metrics.auc, m.auc);
  EXPECT_EQ(back[0].metrics.accuracy, m.accuracy);
  EXPECT_TRUE(back[0].passed);

  std::istringstream bad("delta,label\n1,2\n");
  EXPECT_THROW((void)read_dataset_csv(bad), Error);
}
