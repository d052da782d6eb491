#include "patrolscope/timeutil.hpp"

#include <chrono>
#include <cstdio>
#include <map>

#include "patrolscope/errors.hpp"

namespace patrolscope::timeutil {

namespace chr = std::chrono;

namespace {

constexpr std::int64_t kDay = 86'400;

std::int64_t days_from_civil(const CivilDate& d) {
  const auto ymd = chr::year{d.year} / chr::month{static_cast<unsigned>(d.month)} /
                   chr::day{static_cast<unsigned>(d.day)};
  return chr::sys_days{ymd}.time_since_epoch().count();
}

CivilDate civil_from_days(std::int64_t days) {
  const chr::year_month_day ymd{chr::sys_days{chr::days{days}}};
  return CivilDate{int(ymd.year()), int(unsigned(ymd.month())), int(unsigned(ymd.day()))};
}

bool valid_civil(const CivilDate& d) {
  const auto ymd = chr::year{d.year} / chr::month{static_cast<unsigned>(d.month)} /
                   chr::day{static_cast<unsigned>(d.day)};
  return ymd.ok();
}

// Day-of-month of the n-th given weekday (0=Sun) in year/month.
int nth_weekday(int year, int month, int weekday, int n) {
  const std::int64_t first = days_from_civil(CivilDate{year, month, 1});
  // 1970-01-01 was a Thursday (weekday 4).
  const int wd_first = int(((first % 7) + 7 + 4) % 7);
  const int day1 = 1 + (weekday - wd_first + 7) % 7;
  return day1 + 7 * (n - 1);
}

struct UsZone {
  int std_offset_h;
  bool dst;
};

const std::map<std::string, UsZone>& us_zones() {
  static const std::map<std::string, UsZone> zones = {
      {"America/New_York", {-5, true}}, {"America/Chicago", {-6, true}},
      {"America/Denver", {-7, true}},   {"America/Phoenix", {-7, false}},
      {"America/Los_Angeles", {-8, true}},
  };
  return zones;
}

}  // namespace

std::string MonthId::str() const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d", year, month);
  return buf;
}

int days_in_month(MonthId m) {
  const auto ymdl = chr::year{m.year} / chr::month{static_cast<unsigned>(m.month)} / chr::last;
  return int(unsigned(ymdl.day()));
}

CivilDate parse_date(const std::string& s) {
  bool shaped = s.size() == 10 && s[4] == '-' && s[7] == '-';
  for (std::size_t i = 0; shaped && i < s.size(); ++i) {
    if (i != 4 && i != 7 && (s[i] < '0' || s[i] > '9')) shaped = false;
  }
  if (!shaped) throw InputError("bad date \"" + s + "\" (want YYYY-MM-DD)");
  int y = 0, mo = 0, d = 0;
  std::sscanf(s.c_str(), "%d-%d-%d", &y, &mo, &d);
  const CivilDate date{y, mo, d};
  if (!valid_civil(date)) throw InputError("invalid calendar date \"" + s + "\"");
  return date;
}

std::string format_date(const CivilDate& d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", d.year, d.month, d.day);
  return buf;
}

std::int64_t ts_from_date_utc(const CivilDate& d) { return days_from_civil(d) * kDay; }

std::int64_t ts_from_civil_utc(const CivilDate& d, int hh, int mm, int ss) {
  return ts_from_date_utc(d) + hh * 3600 + mm * 60 + ss;
}

std::int64_t LocalParts::day_number() const { return days_from_civil(date); }

LocalParts utc_parts(std::int64_t ts) {
  std::int64_t days = ts / kDay;
  std::int64_t rem = ts % kDay;
  if (rem < 0) {
    rem += kDay;
    --days;
  }
  LocalParts p;
  p.date = civil_from_days(days);
  p.hour = int(rem / 3600);
  p.minute = int(rem / 60 % 60);
  p.second = int(rem % 60);
  p.weekday = int(((days % 7) + 7 + 4) % 7);
  return p;
}

Timezone Timezone::parse(const std::string& name) {
  Timezone tz;
  tz.name_ = name;
  if (name.empty() || name == "UTC" || name == "utc" || name == "Z") {
    tz.name_ = "UTC";
    return tz;
  }
  if (auto it = us_zones().find(name); it != us_zones().end()) {
    tz.std_offset_s_ = it->second.std_offset_h * 3600;
    tz.us_dst_ = it->second.dst;
    return tz;
  }
  std::string rest = name;
  if (rest.rfind("UTC", 0) == 0) rest = rest.substr(3);
  if (!rest.empty() && (rest[0] == '+' || rest[0] == '-')) {
    const int sign = rest[0] == '-' ? -1 : 1;
    int hh = 0, mm = 0;
    const int got = std::sscanf(rest.c_str() + 1, "%d:%d", &hh, &mm);
    if (got >= 1 && hh >= 0 && hh <= 14 && mm >= 0 && mm < 60) {
      tz.std_offset_s_ = sign * (hh * 3600 + mm * 60);
      return tz;
    }
  }
  throw InputError("unsupported timezone \"" + name +
                   "\" (use UTC, a fixed offset like UTC-05:00, or a continental-US "
                   "America/* name)");
}

int Timezone::offset_s_at(std::int64_t utc_ts) const {
  if (!us_dst_) return std_offset_s_;
  const int year = utc_parts(utc_ts).date.year;
  // US rule since 2007: DST from 02:00 local standard on the second Sunday of
  // March to 02:00 local daylight on the first Sunday of November.
  const std::int64_t dst_start =
      ts_from_civil_utc(CivilDate{year, 3, nth_weekday(year, 3, 0, 2)}, 2, 0, 0) - std_offset_s_;
  const std::int64_t dst_end =
      ts_from_civil_utc(CivilDate{year, 11, nth_weekday(year, 11, 0, 1)}, 2, 0, 0) -
      (std_offset_s_ + 3600);
  return std_offset_s_ + (utc_ts >= dst_start && utc_ts < dst_end ? 3600 : 0);
}

LocalParts Timezone::local(std::int64_t utc_ts) const {
  return utc_parts(utc_ts + offset_s_at(utc_ts));
}

}  // namespace patrolscope::timeutil
