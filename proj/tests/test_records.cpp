#include <gtest/gtest.h>

#include "hiercast/records.hpp"

using namespace hiercast;

TEST(Calendar, WeekdayIsMondayZero) {
  EXPECT_EQ(CivilDate::from_yyyymmdd(20210104).day_of_week(), 0);  // a Monday
  EXPECT_EQ(CivilDate::from_yyyymmdd(20210110).day_of_week(), 6);
  EXPECT_EQ(CivilDate::from_yyyymmdd(20240229).day_of_week(), 3);
}

TEST(Calendar, PlusDaysCrossesMonthAndLeapDay) {
  EXPECT_EQ(CivilDate::from_yyyymmdd(20240228).plus_days(1).yyyymmdd(), 20240229);
  EXPECT_EQ(CivilDate::from_yyyymmdd(20240228).plus_days(2).yyyymmdd(), 20240301);
  EXPECT_EQ(CivilDate::from_yyyymmdd(20211231).plus_days(1).yyyymmdd(), 20220101);
  EXPECT_FALSE(CivilDate::from_yyyymmdd(20230229).valid());
}

TEST(DayNames, CaseInsensitiveLookup) {
  EXPECT_EQ(parse_day_name("Monday"), 0);
  EXPECT_EQ(parse_day_name("sunday"), 6);
  EXPECT_EQ(parse_day_name("WEDNESDAY"), 2);
  EXPECT_FALSE(parse_day_name("Funday"));
  EXPECT_FALSE(parse_day_name(""));
}

TEST(Timestamp, ParsesAndFormats) {
  auto t = Timestamp::parse("2021-03-05 14:07");
  ASSERT_TRUE(t);
  EXPECT_EQ(t->date.yyyymmdd(), 20210305);
  EXPECT_EQ(t->minute_of_day, 14 * 60 + 7);
  EXPECT_EQ(t->to_string(), "2021-03-05 14:07");
  EXPECT_TRUE(Timestamp::parse("2021-03-05T14:07:59"));
  EXPECT_FALSE(Timestamp::parse("2021-03-05 24:00"));
  EXPECT_FALSE(Timestamp::parse("2021-02-30 10:00"));
  EXPECT_FALSE(Timestamp::parse("2021/03/05 10:00"));
  EXPECT_FALSE(Timestamp::parse("yesterday"));
}

TEST(Text, NumbersRoundTrip) {
  for (double v : {0.1, -1.75, 1e-300, 123456.789, 2.0 / 3.0}) {
    const auto s = format_number(v);
    ASSERT_TRUE(parse_number<double>(s));
    EXPECT_EQ(*parse_number<double>(s), v);
  }
  EXPECT_EQ(parse_number<int>(" 42 "), 42);
  EXPECT_FALSE(parse_number<int>("4x"));
  EXPECT_FALSE(parse_number<int>(""));
}

TEST(Text, CsvSplitHandlesQuotes) {
  auto f = split_csv_line("a,\"b,c\",\"say \"\"hi\"\"\",\r");
  ASSERT_EQ(f.size(), 4u);
  EXPECT_EQ(f[0], "a");
  EXPECT_EQ(f[1], "b,c");
  EXPECT_EQ(f[2], "say \"hi\"");
  EXPECT_EQ(f[3], "");
}
