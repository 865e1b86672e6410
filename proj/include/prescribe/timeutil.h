#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <string_view>

namespace prescribe {

using Millis = std::chrono::milliseconds;
using Instant = std::chrono::sys_time<Millis>;

inline constexpr double kMillisPerDay = 86'400'000.0;

inline double days_between(Instant from, Instant to) {
  return static_cast<double>((to - from).count()) / kMillisPerDay;
}

// `format` is "iso8601" (default) or a strftime-style pattern understood by
// std::get_time. ISO input may carry a `Z` or `+hh:mm` offset; inputs without
// one are taken as UTC.
std::optional<Instant> parse_timestamp(std::string_view text,
                                       std::string_view format = "iso8601");

// 2016-01-01T09:51:15.304Z
std::string format_timestamp(Instant t);

struct CalendarFields {
  int month;    // 1..12
  int weekday;  // 0 = Monday .. 6 = Sunday
  int hour;     // 0..23
};
CalendarFields calendar_fields(Instant t);

}  // namespace prescribe
