#pragma once

// Record types shared across the pipeline stages, plus calendar and text helpers.

#include <array>
#include <charconv>
#include <chrono>
#include <compare>
#include <cstdio>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hiercast {

inline constexpr int kDaysPerWeek = 7;

// Monday = 0 ... Sunday = 6.
inline constexpr std::array<std::string_view, kDaysPerWeek> kDayNames{
    "Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"};

inline std::optional<int> parse_day_name(std::string_view name) {
  for (int d = 0; d < kDaysPerWeek; ++d) {
    const auto ref = kDayNames[d];
    if (ref.size() != name.size()) continue;
    bool same = true;
    for (std::size_t i = 0; i < ref.size() && same; ++i) {
      auto lower = [](char c) { return static_cast<char>(c >= 'A' && c <= 'Z' ? c + 32 : c); };
      same = lower(ref[i]) == lower(name[i]);
    }
    if (same) return d;
  }
  return std::nullopt;
}

// Calendar dates travel as yyyymmdd integers (the "Day" column of the coefficient table).
struct CivilDate {
  int year = 1970;
  int month = 1;
  int day = 1;

  std::chrono::year_month_day ymd() const {
    return std::chrono::year{year} / std::chrono::month{static_cast<unsigned>(month)} /
           std::chrono::day{static_cast<unsigned>(day)};
  }
  bool valid() const { return ymd().ok(); }
  int yyyymmdd() const { return year * 10000 + month * 100 + day; }
  static CivilDate from_yyyymmdd(int v) { return {v / 10000, (v / 100) % 100, v % 100}; }
  static CivilDate from_sys_days(std::chrono::sys_days d) {
    const std::chrono::year_month_day ymd{d};
    return {static_cast<int>(ymd.year()), static_cast<int>(static_cast<unsigned>(ymd.month())),
            static_cast<int>(static_cast<unsigned>(ymd.day()))};
  }
  std::chrono::sys_days sys_days() const { return std::chrono::sys_days{ymd()}; }
  CivilDate plus_days(int n) const { return from_sys_days(sys_days() + std::chrono::days{n}); }
  // Monday = 0.
  int day_of_week() const {
    return static_cast<int>((std::chrono::weekday{sys_days()}.c_encoding() + 6) % 7);
  }
};

// Minute-resolution wall-clock timestamp.
struct Timestamp {
  CivilDate date;
  int minute_of_day = 0;  // [0, 1440)

  std::string to_string() const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02d %02d:%02d", date.year, date.month, date.day,
                  minute_of_day / 60, minute_of_day % 60);
    return buf;
  }

  // Accepts "YYYY-MM-DD HH:MM", optional ":SS", 'T' or ' ' separator. Seconds are truncated.
  static std::optional<Timestamp> parse(std::string_view s) {
    auto num = [&](std::size_t pos, std::size_t len) -> std::optional<int> {
      if (pos + len > s.size()) return std::nullopt;
      int v = 0;
      for (std::size_t i = pos; i < pos + len; ++i) {
        if (s[i] < '0' || s[i] > '9') return std::nullopt;
        v = v * 10 + (s[i] - '0');
      }
      return v;
    };
    if (s.size() != 16 && s.size() != 19) return std::nullopt;
    if (s[4] != '-' || s[7] != '-' || (s[10] != ' ' && s[10] != 'T') || s[13] != ':')
      return std::nullopt;
    if (s.size() == 19 && s[16] != ':') return std::nullopt;
    auto y = num(0, 4), mo = num(5, 2), d = num(8, 2), h = num(11, 2), mi = num(14, 2);
    if (!y || !mo || !d || !h || !mi) return std::nullopt;
    if (s.size() == 19) {
      auto sec = num(17, 2);
      if (!sec || *sec > 59) return std::nullopt;
    }
    Timestamp t{{*y, *mo, *d}, *h * 60 + *mi};
    if (!t.date.valid() || *h > 23 || *mi > 59) return std::nullopt;
    return t;
  }
};

// One point-of-sale event, in the transaction table layout.
struct TransactionRecord {
  int location_number = 0;
  int day_of_week = 0;  // SalesDayName, Monday = 0
  int daily_minutes_open = 0;
  Timestamp date_time_placed;
  double sales_as_minutes = 0.0;  // minutes since opening
  int quantity = 1;

  int calendar_day() const { return date_time_placed.date.yyyymmdd(); }
};

// (location, calendar day) identifies one location-day.
struct DayKey {
  int location_number = 0;
  int calendar_day = 0;  // yyyymmdd

  auto operator<=>(const DayKey&) const = default;
};

inline std::string to_string(const DayKey& k) {
  return "location " + std::to_string(k.location_number) + " day " + std::to_string(k.calendar_day);
}

enum class Coefficient { c0 = 0, c1 = 1, c2 = 2 };
inline constexpr std::array<Coefficient, 3> kCoefficients{Coefficient::c0, Coefficient::c1,
                                                          Coefficient::c2};
inline constexpr std::string_view name(Coefficient c) {
  constexpr std::array<std::string_view, 3> names{"c0", "c1", "c2"};
  return names[static_cast<int>(c)];
}

// One row of the upper-level (coefficient) dataset.
struct CoefficientRecord {
  int location_number = 0;
  int calendar_day = 0;  // yyyymmdd
  int day_of_week = 0;
  std::array<double, 3> coef{};  // c0 level, c1 trend, c2 curvature

  double value(Coefficient c) const { return coef[static_cast<int>(c)]; }
  DayKey key() const { return {location_number, calendar_day}; }
};

// ---- text helpers ----

// Shortest round-trip decimal representation.
inline void append_number(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

inline void append_number(std::string& out, std::int64_t v) {
  char buf[24];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

inline void append_number(std::string& out, int v) { append_number(out, std::int64_t{v}); }

inline std::string format_number(double v) {
  std::string s;
  append_number(s, v);
  return s;
}

template <class T>
std::optional<T> parse_number(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  T v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

// Splits one CSV line on commas. Double-quoted fields may contain commas; "" escapes a quote.
inline std::vector<std::string> split_csv_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

}  // namespace hiercast
