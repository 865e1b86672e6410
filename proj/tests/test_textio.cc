#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "prescribe/error.h"
#include "prescribe/rng.h"
#include "prescribe/textio.h"
#include "prescribe/timeutil.h"

namespace prescribe {
namespace {

TEST(Timestamp, ParsesIsoVariants) {
  const auto z = parse_timestamp("2016-01-01T09:51:15.304Z");
  ASSERT_TRUE(z);
  EXPECT_EQ(format_timestamp(*z), "2016-01-01T09:51:15.304Z");
  const auto offset = parse_timestamp("2016-01-01T11:51:15.304+02:00");
  ASSERT_TRUE(offset);
  EXPECT_EQ(*offset, *z);
  const auto bare = parse_timestamp("2016-01-01 09:51:15.304");
  ASSERT_TRUE(bare);
  EXPECT_EQ(*bare, *z);
  EXPECT_FALSE(parse_timestamp("not-a-date"));
  EXPECT_FALSE(parse_timestamp(""));
}

TEST(Timestamp, CustomFormat) {
  const auto t = parse_timestamp("01/02/2020 13:30", "%d/%m/%Y %H:%M");
  ASSERT_TRUE(t);
  EXPECT_EQ(format_timestamp(*t), "2020-02-01T13:30:00.000Z");
}

TEST(Timestamp, CalendarFields) {
  // 2024-06-03 was a Monday.
  const auto f = calendar_fields(*parse_timestamp("2024-06-03T17:05:00Z"));
  EXPECT_EQ(f.month, 6);
  EXPECT_EQ(f.weekday, 0);
  EXPECT_EQ(f.hour, 17);
  EXPECT_DOUBLE_EQ(days_between(*parse_timestamp("2024-06-03T00:00:00Z"),
                                *parse_timestamp("2024-06-04T12:00:00Z")),
                   1.5);
}

TEST(Numbers, FormatRoundTrips) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal() * std::pow(10.0, static_cast<double>(rng.index(20)) - 10);
    const auto back = parse_double(format_double(v));
    ASSERT_TRUE(back);
    EXPECT_EQ(*back, v);
  }
  EXPECT_EQ(format_double(0.5), "0.5");
  EXPECT_FALSE(parse_double("abc"));
  EXPECT_FALSE(parse_double("1.5x"));
  EXPECT_EQ(*parse_int(" 42 "), 42);
}

TEST(Csv, ReaderHandlesQuotesAndLines) {
  std::istringstream in("a,\"b,c\",\"d\"\"e\"\n\"multi\nline\",x,y\n");
  CsvReader r(in);
  std::vector<std::string> f;
  ASSERT_TRUE(r.next(f));
  EXPECT_EQ(f, (std::vector<std::string>{"a", "b,c", "d\"e"}));
  EXPECT_EQ(r.line(), 1u);
  ASSERT_TRUE(r.next(f));
  EXPECT_EQ(f[0], "multi\nline");
  EXPECT_EQ(r.line(), 2u);
  EXPECT_FALSE(r.next(f));
}

TEST(Csv, EscapeRoundTrip) {
  const std::vector<std::string> row = {"plain", "with,comma", "with \"quote\"", "new\nline", ""};
  std::ostringstream out;
  write_csv_row(out, row);
  std::istringstream in(out.str());
  CsvReader r(in);
  std::vector<std::string> back;
  ASSERT_TRUE(r.next(back));
  EXPECT_EQ(back, row);
}

TEST(KeyValue, CommentsAndOverrides) {
  std::istringstream in("# header\na = 1\nb = x, y ,z  # trailing\na = 2\n");
  const auto cfg = KeyValueConfig::parse(in);
  EXPECT_EQ(cfg.get_int("a", 0), 2);
  EXPECT_EQ(cfg.get_list("b"), (std::vector<std::string>{"x", "y", "z"}));
  EXPECT_EQ(cfg.get_or("missing", "d"), "d");
  EXPECT_THROW(cfg.get("missing"), ConfigError);
}

TEST(Hash, Fnv1aKnownValue) {
  // Standard 64-bit FNV-1a test vector.
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(Rng, SeedDerivationIsStable) {
  Rng a(derive_seed(5, 1)), b(derive_seed(5, 1)), c(derive_seed(5, 2));
  EXPECT_EQ(a.next(), b.next());
  EXPECT_NE(Rng(derive_seed(5, 1)).next(), c.next());
  Rng r(1);
  for (int i = 0; i < 1000; ++i) {
    EXPECT_LT(r.index(7), 7u);
    const double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

}  // namespace
}  // namespace prescribe
