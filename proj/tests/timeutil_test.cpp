#include <doctest.h>

#include "patrolscope/errors.hpp"
#include "patrolscope/timeutil.hpp"

using namespace patrolscope;
using timeutil::CivilDate;
using timeutil::MonthId;
using timeutil::Timezone;

TEST_CASE("date parsing") {
  const auto d = timeutil::parse_date("2017-02-28");
  CHECK(d.year == 2017);
  CHECK(d.month == 2);
  CHECK(d.day == 28);
  CHECK(timeutil::format_date(d) == "2017-02-28");

  CHECK_THROWS_AS(timeutil::parse_date("2017-02-29"), InputError);  // not a leap year
  CHECK_NOTHROW(timeutil::parse_date("2016-02-29"));
  CHECK_THROWS_AS(timeutil::parse_date("2017-13-01"), InputError);
  CHECK_THROWS_AS(timeutil::parse_date("2017-00-10"), InputError);
  CHECK_THROWS_AS(timeutil::parse_date("17-01-01"), InputError);
  CHECK_THROWS_AS(timeutil::parse_date("2017/01/01"), InputError);
  CHECK_THROWS_AS(timeutil::parse_date("2017-04-31"), InputError);
}

TEST_CASE("epoch conversions") {
  CHECK(timeutil::ts_from_date_utc({1970, 1, 1}) == 0);
  CHECK(timeutil::ts_from_date_utc({1970, 1, 2}) == 86400);
  CHECK(timeutil::ts_from_date_utc({2017, 6, 1}) == 1496275200);
  CHECK(timeutil::ts_from_civil_utc({2017, 6, 1}, 12, 30, 15) == 1496275200 + 45015);
  CHECK(timeutil::ts_from_date_utc({2000, 3, 1}) == 951868800);  // leap-century boundary
}

TEST_CASE("utc parts round trip") {
  const auto parts = timeutil::utc_parts(1496275200);
  CHECK(parts.date == CivilDate{2017, 6, 1});
  CHECK(parts.hour == 0);
  CHECK(parts.weekday == 4);  // 2017-06-01 was a Thursday

  const auto p2 = timeutil::utc_parts(1496275200 - 1);
  CHECK(p2.date == CivilDate{2017, 5, 31});
  CHECK(p2.hour == 23);
  CHECK(p2.minute == 59);
  CHECK(p2.second == 59);
}

TEST_CASE("month ids") {
  MonthId m{2017, 1};
  CHECK(m.str() == "2017-01");
  CHECK(m.next() == MonthId{2017, 2});
  CHECK(MonthId{2017, 12}.next() == MonthId{2018, 1});
  CHECK(MonthId{2017, 12} < MonthId{2018, 1});
  CHECK(timeutil::days_in_month({2016, 2}) == 29);
  CHECK(timeutil::days_in_month({2017, 2}) == 28);
  CHECK(timeutil::days_in_month({2017, 9}) == 30);
}

TEST_CASE("fixed offset timezones") {
  const auto utc = Timezone::parse("UTC");
  CHECK(utc.offset_s_at(0) == 0);
  CHECK(utc.is_utc());

  const auto minus5 = Timezone::parse("UTC-05");
  CHECK(minus5.offset_s_at(1496275200) == -5 * 3600);
  const auto parts = minus5.local(1496275200);  // 2017-06-01 00:00 UTC
  CHECK(parts.date == CivilDate{2017, 5, 31});
  CHECK(parts.hour == 19);

  CHECK(Timezone::parse("UTC+05:30").offset_s_at(0) == 5 * 3600 + 1800);
  CHECK(Timezone::parse("+01:30").offset_s_at(0) == 5400);
  CHECK(Timezone::parse("UTC+0").offset_s_at(0) == 0);
  CHECK_THROWS_AS(Timezone::parse("Mars/Olympus"), InputError);
  CHECK_THROWS_AS(Timezone::parse("UTC+27"), InputError);
}

TEST_CASE("us daylight saving rules") {
  const auto ny = Timezone::parse("America/New_York");
  // 2017 transitions: spring forward Mar 12 07:00 UTC, fall back Nov 5 06:00 UTC.
  const auto before_spring = timeutil::ts_from_civil_utc({2017, 3, 12}, 6, 59, 59);
  const auto after_spring = timeutil::ts_from_civil_utc({2017, 3, 12}, 7, 0, 0);
  CHECK(ny.offset_s_at(before_spring) == -5 * 3600);
  CHECK(ny.offset_s_at(after_spring) == -4 * 3600);

  const auto before_fall = timeutil::ts_from_civil_utc({2017, 11, 5}, 5, 59, 59);
  const auto after_fall = timeutil::ts_from_civil_utc({2017, 11, 5}, 6, 0, 0);
  CHECK(ny.offset_s_at(before_fall) == -4 * 3600);
  CHECK(ny.offset_s_at(after_fall) == -5 * 3600);

  const auto phoenix = Timezone::parse("America/Phoenix");  // no DST
  CHECK(phoenix.offset_s_at(before_spring) == -7 * 3600);
  CHECK(phoenix.offset_s_at(after_spring) == -7 * 3600);

  const auto la = Timezone::parse("America/Los_Angeles");
  CHECK(la.offset_s_at(timeutil::ts_from_civil_utc({2017, 7, 1}, 12, 0, 0)) == -7 * 3600);
  CHECK(la.offset_s_at(timeutil::ts_from_civil_utc({2017, 1, 1}, 12, 0, 0)) == -8 * 3600);
}

TEST_CASE("local day numbers are distinct per civil day") {
  const auto tz = Timezone::parse("UTC-05");
  const auto a = tz.local(timeutil::ts_from_civil_utc({2017, 6, 1}, 4, 0, 0));   // May 31 local
  const auto b = tz.local(timeutil::ts_from_civil_utc({2017, 6, 1}, 5, 0, 0));   // Jun 1 local
  const auto c = tz.local(timeutil::ts_from_civil_utc({2017, 6, 1}, 23, 0, 0));  // Jun 1 local
  CHECK(a.day_number() != b.day_number());
  CHECK(b.day_number() == c.day_number());
  CHECK(a.month_id() == MonthId{2017, 5});
  CHECK(b.month_id() == MonthId{2017, 6});
}
