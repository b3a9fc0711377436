#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace stocktime {

enum class Frequency { daily, hourly };

inline std::string_view to_string(Frequency f) { return f == Frequency::daily ? "daily" : "hourly"; }

inline std::optional<Frequency> parse_frequency(std::string_view s) {
  if (s == "daily") return Frequency::daily;
  if (s == "hourly") return Frequency::hourly;
  return std::nullopt;
}

/// Minutes since 1970-01-01T00:00 (UTC, no zone handling).
class Timestamp {
 public:
  constexpr Timestamp() = default;
  constexpr explicit Timestamp(std::int64_t minutes) : minutes_(minutes) {}

  static Timestamp from_civil(int y, unsigned mo, unsigned d, int hh = 0, int mm = 0) {
    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{mo}, day{d}};
    if (!ymd.ok()) throw std::invalid_argument("invalid calendar date");
    const auto days = sys_days{ymd}.time_since_epoch().count();
    return Timestamp(static_cast<std::int64_t>(days) * 1440 + hh * 60 + mm);
  }

  constexpr std::int64_t minutes() const { return minutes_; }
  std::int64_t day_number() const { return floor_div(minutes_, 1440); }
  int minute_of_day() const { return static_cast<int>(minutes_ - day_number() * 1440); }

  // 0 = Monday ... 6 = Sunday
  int weekday() const {
    const std::chrono::weekday wd{std::chrono::sys_days{std::chrono::days{day_number()}}};
    return static_cast<int>(wd.iso_encoding()) - 1;
  }

  std::string to_string(Frequency f) const {
    using namespace std::chrono;
    const year_month_day ymd{sys_days{days{day_number()}}};
    char buf[32];
    if (f == Frequency::daily) {
      std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                    static_cast<unsigned>(ymd.day()));
    } else {
      const int mod = minute_of_day();
      std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d", static_cast<int>(ymd.year()),
                    static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), mod / 60, mod % 60);
    }
    return buf;
  }

  /// Parses `YYYY-MM-DD` (daily) or `YYYY-MM-DDTHH:MM` (hourly).
  static std::optional<Timestamp> parse(std::string_view s, Frequency f) {
    auto digits = [&](std::size_t pos, std::size_t n, int& out) {
      if (pos + n > s.size()) return false;
      out = 0;
      for (std::size_t i = pos; i < pos + n; ++i) {
        if (s[i] < '0' || s[i] > '9') return false;
        out = out * 10 + (s[i] - '0');
      }
      return true;
    };
    const std::size_t want = f == Frequency::daily ? 10 : 16;
    if (s.size() != want || s[4] != '-' || s[7] != '-') return std::nullopt;
    int y = 0, mo = 0, d = 0, hh = 0, mm = 0;
    if (!digits(0, 4, y) || !digits(5, 2, mo) || !digits(8, 2, d)) return std::nullopt;
    if (f == Frequency::hourly) {
      if (s[10] != 'T' || s[13] != ':') return std::nullopt;
      if (!digits(11, 2, hh) || !digits(14, 2, mm) || hh > 23 || mm > 59) return std::nullopt;
    }
    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) return std::nullopt;
    return from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d), hh, mm);
  }

  friend constexpr auto operator<=>(Timestamp, Timestamp) = default;

 private:
  static std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    const std::int64_t q = a / b;
    return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;
  }
  std::int64_t minutes_ = 0;
};

/// Session grid used for extrapolation: weekdays for daily data; hourly bars
/// at :30 from 09:30 to 15:30 on weekdays.
inline Timestamp next_timestamp(Timestamp t, Frequency f) {
  constexpr std::int64_t day = 1440;
  if (f == Frequency::daily) {
    Timestamp n(t.minutes() + day);
    while (n.weekday() >= 5) n = Timestamp(n.minutes() + day);
    return n;
  }
  constexpr int open = 9 * 60 + 30;
  constexpr int close = 15 * 60 + 30;
  Timestamp n(t.minutes() + 60);
  if (n.minute_of_day() > close || n.day_number() != t.day_number()) {
    n = Timestamp((t.day_number() + 1) * day + open);
  }
  while (n.weekday() >= 5) n = Timestamp(n.minutes() + day);
  return n;
}

}  // namespace stocktime
