#include "pubflow/dates.hpp"

#include <charconv>
#include <cstdio>
#include <stdexcept>

namespace pubflow {

namespace {

// Civil-calendar conversions (proleptic Gregorian), day 0 = 1970-01-01.
int32_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const int era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2) / 5 +
                       static_cast<unsigned>(d) - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<int32_t>(doe) - 719468;
}

void civil_from_days(int32_t z, int& y, int& m, int& d) {
  z += 719468;
  const int era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const int yr = static_cast<int>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
  y = yr + (m <= 2);
}

int parse_int_field(std::string_view s, const char* what) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw std::invalid_argument(std::string("bad date ") + what + ": '" + std::string(s) + "'");
  return v;
}

}  // namespace

Date Date::from_ymd(int year, int month, int day) {
  if (month < 1 || month > 12 || day < 1 || day > 31)
    throw std::invalid_argument("Date::from_ymd: month/day out of range");
  return from_days(days_from_civil(year, month, day));
}

Date Date::parse(std::string_view iso) {
  if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-')
    throw std::invalid_argument("unparsable date '" + std::string(iso) + "' (want YYYY-MM-DD)");
  const int y = parse_int_field(iso.substr(0, 4), "year");
  const int m = parse_int_field(iso.substr(5, 2), "month");
  const int d = parse_int_field(iso.substr(8, 2), "day");
  Date date = from_ymd(y, m, d);
  // Reject normalized-away inputs such as 2020-02-31.
  int yy, mm, dd;
  civil_from_days(date.days_, yy, mm, dd);
  if (yy != y || mm != m || dd != d)
    throw std::invalid_argument("invalid calendar date '" + std::string(iso) + "'");
  return date;
}

std::string Date::to_string() const {
  int y, m, d;
  civil_from_days(days_, y, m, d);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", y, m, d);
  return buf;
}

Period parse_period(std::string_view text) {
  const auto sep = text.find("..");
  if (sep == std::string_view::npos)
    throw std::invalid_argument("bad period '" + std::string(text) +
                                "' (want YYYY-MM-DD..YYYY-MM-DD)");
  Period p{Date::parse(text.substr(0, sep)), Date::parse(text.substr(sep + 2))};
  if (!p.valid())
    throw std::invalid_argument("period start after end: '" + std::string(text) + "'");
  return p;
}

}  // namespace pubflow
