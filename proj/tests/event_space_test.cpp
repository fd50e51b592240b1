#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>

#include "prospector/event_space.hpp"
#include "support/oracles.hpp"

using namespace prospector;

namespace {

PerfEvtSelValue from_fields(const oracle::Fields& f) {
  PerfEvtSelValue v;
  v.selector = {static_cast<std::uint8_t>(f.event_code), static_cast<std::uint8_t>(f.umask)};
  v.usr = f.usr;
  v.os = f.os;
  v.edge = f.edge;
  v.pin_control = f.pc;
  v.interrupt_enable = f.intr;
  v.any_thread = f.any;
  v.enable = f.en;
  v.invert = f.inv;
  v.counter_mask = static_cast<std::uint8_t>(f.cmask);
  return v;
}

oracle::Fields random_fields(std::mt19937_64& rng) {
  std::uniform_int_distribution<unsigned> byte(0, 255), bit(0, 1);
  return {byte(rng), byte(rng), bit(rng) == 1, bit(rng) == 1, bit(rng) == 1, bit(rng) == 1,
          bit(rng) == 1, bit(rng) == 1, bit(rng) == 1, bit(rng) == 1, byte(rng)};
}

}  // namespace

TEST(Pack, KnownSelectors) {
  EXPECT_EQ(pack_selector({0x6C, 0x01}), 0x016C);
  EXPECT_EQ(pack_selector({0x00, 0x00}), 0x0000);
  EXPECT_EQ(pack_selector({0xFF, 0xFF}), 0xFFFF);
}

TEST(Pack, RoundTripsEverySelector) {
  for (unsigned id = 0; id < kEventSpaceSize; ++id) {
    auto s = unpack_selector(static_cast<std::uint16_t>(id));
    ASSERT_EQ(s.packed(), id);
    ASSERT_EQ(s.packed(), s.umask * 256U + s.event_code);
    ASSERT_EQ(unpack_selector(pack_selector(s)), s);
  }
}

TEST(Render, ScanControlImage) {
  EXPECT_EQ(render_msr_value(scan_control({0x3C, 0x00})), 0x000000000043003CULL);
  EXPECT_EQ(render_msr_value(PerfEvtSelValue{}), 0ULL);
}

TEST(Render, CounterMaskExampleMatchesFieldOracle) {
  PerfEvtSelValue v;
  v.selector = {0x6C, 0x01};
  v.enable = true;
  v.usr = true;
  v.counter_mask = 2;
  oracle::Fields f{0x6C, 0x01, true, false, false, false, false, false, true, false, 2};
  // usr is bit 16, so the image carries 0x01 in bits 23:16 alongside enable.
  EXPECT_EQ(oracle::render(f), 0x000000000241016CULL);
  EXPECT_EQ(render_msr_value(v), oracle::render(f));

  // 0x0242016C is the same selector counted in ring 0 instead.
  auto os_only = decode_msr_value(0x000000000242016CULL);
  EXPECT_TRUE(os_only.os);
  EXPECT_FALSE(os_only.usr);
  EXPECT_TRUE(os_only.enable);
  EXPECT_EQ(os_only.counter_mask, 2);
}

TEST(Render, RandomImagesMatchOracleAndDecode) {
  std::mt19937_64 rng(20240611);
  for (int i = 0; i < 10000; ++i) {
    auto f = random_fields(rng);
    auto v = from_fields(f);
    const auto image = render_msr_value(v);
    ASSERT_EQ(image, oracle::render(f));
    ASSERT_EQ(image >> 32, 0U);
    ASSERT_EQ(decode_msr_value(image), v);
    ASSERT_EQ(render_msr_value(decode_msr_value(image)), image);
  }
}

TEST(Render, IsConstexpr) {
  static_assert(render_msr_value(scan_control({0x3C, 0x00})) == 0x43003CULL);
  static_assert(decode_msr_value(0x43003CULL).enable);
}

TEST(EnumerateSpace, OrderAndUniqueness) {
  auto space = enumerate_space();
  ASSERT_EQ(space.size(), 65536U);
  EXPECT_EQ(space.front(), (EventSelector{0, 0}));
  EXPECT_EQ(space[0x016C], (EventSelector{0x6C, 0x01}));
  std::set<std::uint16_t> ids;
  for (auto s : space) ids.insert(s.packed());
  EXPECT_EQ(ids.size(), 65536U);
}

TEST(Selector, TextRoundTrip) {
  EXPECT_EQ(to_string(EventSelector{0x6C, 0x01}), "0x016C");
  EXPECT_EQ(parse_selector("0x016C"), (EventSelector{0x6C, 0x01}));
  EXPECT_EQ(parse_selector("0x16c"), (EventSelector{0x6C, 0x01}));
  EXPECT_FALSE(parse_selector("016C").has_value());
  EXPECT_FALSE(parse_selector("0x10000").has_value());
  EXPECT_FALSE(parse_selector("0xZZ").has_value());
}

TEST(Catalog, MembershipAndComplement) {
  EventCatalog empty;
  EXPECT_FALSE(is_documented({0x3C, 0x00}, empty));

  EventCatalog c("test");
  std::mt19937_64 rng(7);
  std::set<std::uint16_t> planted;
  while (planted.size() < 200) planted.insert(static_cast<std::uint16_t>(rng()));
  for (auto id : planted) ASSERT_TRUE(c.insert(unpack_selector(id), "E"));
  EXPECT_EQ(c.size(), 200U);
  std::size_t undocumented = 0;
  for (auto s : enumerate_space()) undocumented += !is_documented(s, c);
  EXPECT_EQ(undocumented, 65336U);
  EXPECT_TRUE(is_documented(unpack_selector(*planted.begin()), c));
}

TEST(Catalog, LoadWriteRoundTrip) {
  std::istringstream in(
      "event_code,umask,name\n"
      "0x3C,0x00,CPU_CLK_UNHALTED.THREAD_P\n"
      "0xd1,0x01,\"MEM_LOAD, L1 hit\"\n");
  auto c = load_catalog(in, "inline");
  EXPECT_EQ(c.size(), 2U);
  EXPECT_EQ(c.source(), "inline");
  EXPECT_EQ(c.name_of({0xD1, 0x01}), "\"MEM_LOAD, L1 hit\"");

  std::ostringstream out;
  write_catalog(out, c);
  std::istringstream back(out.str());
  auto c2 = load_catalog(back, "again");
  EXPECT_EQ(c2.selectors(), c.selectors());
  EXPECT_EQ(c2.name_of({0x3C, 0x00}), c.name_of({0x3C, 0x00}));
}

TEST(Catalog, DuplicateKeyIsLoadError) {
  std::istringstream in("event_code,umask,name\n0x3C,0x00,A\n0x3c,0x00,B\n");
  try {
    (void)load_catalog(in, "dup");
    FAIL() << "expected parse error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kParse);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(Catalog, MalformedInputs) {
  for (const char* text : {"", "code,umask,name\n", "event_code,umask,name\n3C,00,A\n",
                           "event_code,umask,name\n0x3C,0x100,A\n", "event_code,umask,name\n0x3C\n"}) {
    std::istringstream in(text);
    EXPECT_THROW((void)load_catalog(in, "bad"), Error) << text;
  }
}
