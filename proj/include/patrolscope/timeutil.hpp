#pragma once

#include <cstdint>
#include <string>

namespace patrolscope::timeutil {

struct CivilDate {
  int year = 1970;
  int month = 1;  // 1..12
  int day = 1;    // 1..31

  friend auto operator<=>(const CivilDate&, const CivilDate&) = default;
};

// Calendar month, totally ordered. index = year*12 + (month-1).
struct MonthId {
  int year = 1970;
  int month = 1;

  int index() const { return year * 12 + (month - 1); }
  static MonthId from_index(int idx) { return MonthId{idx / 12, idx % 12 + 1}; }
  MonthId next() const { return from_index(index() + 1); }
  std::string str() const;  // "2017-02"

  friend auto operator<=>(const MonthId& a, const MonthId& b) {
    return a.index() <=> b.index();
  }
  friend bool operator==(const MonthId& a, const MonthId& b) {
    return a.index() == b.index();
  }
};

int days_in_month(MonthId m);

// "YYYY-MM-DD"; throws InputError on malformed or invalid dates.
CivilDate parse_date(const std::string& s);
std::string format_date(const CivilDate& d);

// UTC seconds since epoch for midnight of d.
std::int64_t ts_from_date_utc(const CivilDate& d);
std::int64_t ts_from_civil_utc(const CivilDate& d, int hh, int mm, int ss);

struct LocalParts {
  CivilDate date;
  int hour = 0;    // 0..23
  int minute = 0;
  int second = 0;
  int weekday = 0;  // 0 = Sunday .. 6 = Saturday

  MonthId month_id() const { return MonthId{date.year, date.month}; }
  // Days since epoch in local civil time; distinct values are distinct days.
  std::int64_t day_number() const;
};

// Wall-clock rules for one location. Supported names:
//   "UTC", fixed offsets "UTC+5" / "UTC-08:00" / "+01:30",
//   and the continental-US IANA names (America/New_York, Chicago, Denver,
//   Phoenix, Los_Angeles) with post-2007 US DST rules built in.
// The platform toolchain ships no tzdb, so anything else is rejected.
class Timezone {
public:
  Timezone() = default;  // UTC

  static Timezone parse(const std::string& name);

  const std::string& name() const { return name_; }
  int offset_s_at(std::int64_t utc_ts) const;
  LocalParts local(std::int64_t utc_ts) const;

  bool is_utc() const { return std_offset_s_ == 0 && !us_dst_; }

private:
  std::string name_ = "UTC";
  int std_offset_s_ = 0;
  bool us_dst_ = false;
};

// Civil parts of a UTC timestamp (weekday included).
LocalParts utc_parts(std::int64_t ts);

}  // namespace patrolscope::timeutil
