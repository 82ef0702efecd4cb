#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace pubflow {

/// Calendar date with whole-day resolution, stored as days since 1970-01-01.
class Date {
 public:
  Date() = default;

  static Date from_days(int32_t days) {
    Date d;
    d.days_ = days;
    return d;
  }
  static Date from_ymd(int year, int month, int day);

  /// Parses "YYYY-MM-DD". Throws std::invalid_argument on malformed input.
  static Date parse(std::string_view iso);

  int32_t days() const { return days_; }
  Date plus_days(int n) const { return from_days(days_ + n); }

  std::string to_string() const;  // ISO-8601

  friend auto operator<=>(const Date&, const Date&) = default;

 private:
  int32_t days_ = 0;
};

/// Inclusive day range.
struct Period {
  Date start;
  Date end;

  int length() const { return end.days() - start.days() + 1; }
  bool contains(Date d) const { return d >= start && d <= end; }
  bool valid() const { return start <= end; }
};

/// Parses "YYYY-MM-DD..YYYY-MM-DD".
Period parse_period(std::string_view text);

}  // namespace pubflow
