#pragma once

// Parsing, validation and fixed-grid binning of transaction streams.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "hiercast/errors.hpp"
#include "hiercast/records.hpp"

namespace hiercast {

inline constexpr int kDefaultBinWidth = 15;

struct Rejection {
  std::size_t row = 0;  // 1-based data row (the header is row 0)
  std::string reason;
};

struct ParseResult {
  std::vector<TransactionRecord> records;
  std::vector<Rejection> rejections;
  std::size_t rows = 0;
};

struct ParseOptions {
  bool case_insensitive_header = false;
};

namespace detail {

inline bool header_matches(std::string_view got, std::string_view want, bool fold) {
  while (!got.empty() && (got.back() == ' ' || got.back() == '\r')) got.remove_suffix(1);
  while (!got.empty() && got.front() == ' ') got.remove_prefix(1);
  if (got.size() != want.size()) return false;
  for (std::size_t i = 0; i < got.size(); ++i) {
    char a = got[i], b = want[i];
    if (fold) {
      if (a >= 'A' && a <= 'Z') a = static_cast<char>(a + 32);
      if (b >= 'A' && b <= 'Z') b = static_cast<char>(b + 32);
    }
    if (a != b) return false;
  }
  return true;
}

}  // namespace detail

// Reads the transaction table. Every data row ends up either as a record or as a
// rejection carrying its row number; a missing required column is fatal.
inline ParseResult parse_transactions(std::istream& in, ParseOptions opts = {}) {
  constexpr std::array<std::string_view, 6> columns{"LocationNumber", "SalesDayName",
                                                    "DailyMinutesOpen", "DateTimePlaced",
                                                    "SalesAsMinutes", "Quantity"};
  std::string line;
  if (!std::getline(in, line)) throw DataError("transaction input is empty (no header row)");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_csv_line(line);

  std::array<std::size_t, 6> pos{};
  std::vector<std::string> missing;
  for (std::size_t c = 0; c < columns.size(); ++c) {
    auto it = std::find_if(header.begin(), header.end(), [&](const std::string& h) {
      return detail::header_matches(h, columns[c], opts.case_insensitive_header);
    });
    if (it == header.end()) missing.emplace_back(columns[c]);
    else pos[c] = static_cast<std::size_t>(it - header.begin());
  }
  if (!missing.empty()) {
    std::string msg = "transaction input is missing required column(s):";
    for (const auto& m : missing) msg += " " + m;
    throw DataError(msg);
  }

  ParseResult out;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++row;
    const auto f = split_csv_line(line);
    auto reject = [&](std::string reason) { out.rejections.push_back({row, std::move(reason)}); };
    if (f.size() != header.size()) {
      reject("expected " + std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
      continue;
    }
    TransactionRecord r;
    const auto loc = parse_number<int>(f[pos[0]]);
    if (!loc) { reject("malformed LocationNumber"); continue; }
    r.location_number = *loc;
    const auto dow = parse_day_name(f[pos[1]]);
    if (!dow) { reject("unknown day name '" + f[pos[1]] + "'"); continue; }
    r.day_of_week = *dow;
    const auto open = parse_number<int>(f[pos[2]]);
    if (!open || *open < 1 || *open > 1440) { reject("DailyMinutesOpen must be an integer in [1, 1440]"); continue; }
    r.daily_minutes_open = *open;
    const auto ts = Timestamp::parse(f[pos[3]]);
    if (!ts) { reject("malformed timestamp '" + f[pos[3]] + "'"); continue; }
    r.date_time_placed = *ts;
    const auto minutes = parse_number<double>(f[pos[4]]);
    if (!minutes || !std::isfinite(*minutes)) { reject("malformed SalesAsMinutes"); continue; }
    if (*minutes < 0.0 || *minutes >= r.daily_minutes_open) {
      reject("SalesAsMinutes outside [0, DailyMinutesOpen)");
      continue;
    }
    r.sales_as_minutes = *minutes;
    const auto qty = parse_number<int>(f[pos[5]]);
    if (!qty) { reject("malformed Quantity"); continue; }
    if (*qty < 1) { reject("quantity ≥ 1 violated"); continue; }
    r.quantity = *qty;
    if (r.date_time_placed.date.day_of_week() != r.day_of_week) {
      reject("SalesDayName does not match the weekday of DateTimePlaced");
      continue;
    }
    out.records.push_back(r);
  }
  out.rows = row;
  return out;
}

// Fixed-grid item counts for one location-day. Bin k covers
// [k * width, min((k + 1) * width, minutes_open)); the last bin is short when
// minutes_open is not a multiple of the width.
struct BinnedSeries {
  int location_number = 0;
  int calendar_day = 0;  // yyyymmdd
  int day_of_week = 0;
  int minutes_open = 0;
  int bin_width = kDefaultBinWidth;
  std::vector<std::int64_t> counts;  // items per bin
  std::vector<std::int64_t> events;  // transactions per bin

  DayKey key() const { return {location_number, calendar_day}; }
  std::size_t n_bins() const { return counts.size(); }
  bool trailing_partial() const { return minutes_open % bin_width != 0; }
  double bin_start(std::size_t k) const { return static_cast<double>(k) * bin_width; }
  double bin_end(std::size_t k) const {
    return std::min(static_cast<double>(k + 1) * bin_width, static_cast<double>(minutes_open));
  }
  std::int64_t total_items() const {
    std::int64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }
  std::int64_t total_events() const {
    std::int64_t s = 0;
    for (auto c : events) s += c;
    return s;
  }
};

inline std::size_t bin_count(int minutes_open, int bin_width) {
  return static_cast<std::size_t>((minutes_open + bin_width - 1) / bin_width);
}

// Bins one location-day. All records must belong to `key` and agree on minutes_open.
inline BinnedSeries bin_day(const DayKey& key, int day_of_week, int minutes_open,
                            std::span<const TransactionRecord> records,
                            int bin_width = kDefaultBinWidth) {
  if (minutes_open < 1) throw ContractViolation("bin_day: minutes_open must be >= 1");
  if (bin_width < 1) throw ContractViolation("bin_day: bin width must be >= 1");
  BinnedSeries s;
  s.location_number = key.location_number;
  s.calendar_day = key.calendar_day;
  s.day_of_week = day_of_week;
  s.minutes_open = minutes_open;
  s.bin_width = bin_width;
  s.counts.assign(bin_count(minutes_open, bin_width), 0);
  s.events.assign(s.counts.size(), 0);
  for (const auto& r : records) {
    if (r.location_number != key.location_number || r.calendar_day() != key.calendar_day)
      throw ContractViolation("bin_day: record for location " + std::to_string(r.location_number) +
                              " day " + std::to_string(r.calendar_day()) + " handed to " + to_string(key));
    if (r.daily_minutes_open != minutes_open)
      throw ContractViolation("bin_day: inconsistent DailyMinutesOpen within " + to_string(key));
    if (!(r.sales_as_minutes >= 0.0 && r.sales_as_minutes < minutes_open))
      throw ContractViolation("bin_day: SalesAsMinutes outside the opening window in " + to_string(key));
    const auto k = static_cast<std::size_t>(std::floor(r.sales_as_minutes / bin_width));
    s.counts[k] += r.quantity;
    s.events[k] += 1;
  }
  return s;
}

// Bins a single location-day whose key, weekday and opening minutes come from the records.
inline BinnedSeries bin_day(std::span<const TransactionRecord> records, int bin_width = kDefaultBinWidth) {
  if (records.empty()) throw ContractViolation("bin_day: cannot infer the location-day of an empty record list");
  const auto& first = records.front();
  return bin_day({first.location_number, first.calendar_day()}, first.day_of_week,
                 first.daily_minutes_open, records, bin_width);
}

using GroupedSeries = std::map<DayKey, BinnedSeries>;

// Partitions records by (location, calendar day) and bins each part. The result
// is ordered by key and does not depend on input order.
inline GroupedSeries group_by_location_day(std::span<const TransactionRecord> records,
                                           int bin_width = kDefaultBinWidth) {
  std::map<DayKey, std::vector<TransactionRecord>> parts;
  for (const auto& r : records) parts[{r.location_number, r.calendar_day()}].push_back(r);
  GroupedSeries out;
  for (auto& [key, part] : parts) out.emplace(key, bin_day(part, bin_width));
  return out;
}

// ---- files ----

inline constexpr std::string_view kBinnedHeader =
    "location,day,day_of_week,bin_index,count,events,bin_minutes,minutes_open";

inline void write_binned_csv(std::ostream& os, const GroupedSeries& groups) {
  std::string buf;
  buf += kBinnedHeader;
  buf += '\n';
  for (const auto& [key, s] : groups) {
    for (std::size_t k = 0; k < s.n_bins(); ++k) {
      append_number(buf, s.location_number);
      buf += ',';
      append_number(buf, s.calendar_day);
      buf += ',';
      append_number(buf, s.day_of_week);
      buf += ',';
      append_number(buf, static_cast<std::int64_t>(k));
      buf += ',';
      append_number(buf, s.counts[k]);
      buf += ',';
      append_number(buf, s.events[k]);
      buf += ',';
      append_number(buf, s.bin_end(k) - s.bin_start(k));
      buf += ',';
      append_number(buf, s.minutes_open);
      buf += '\n';
    }
    if (buf.size() > (1 << 16)) {
      os << buf;
      buf.clear();
    }
  }
  os << buf;
}

inline GroupedSeries read_binned_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("binned series file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kBinnedHeader) throw DataError("binned series file has an unexpected header: " + line);
  GroupedSeries out;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row;
    const auto f = split_csv_line(line);
    auto bad = [&] { return DataError("binned series row " + std::to_string(row) + " is malformed"); };
    if (f.size() != 8) throw bad();
    const auto loc = parse_number<int>(f[0]), day = parse_number<int>(f[1]), dow = parse_number<int>(f[2]);
    const auto k = parse_number<std::int64_t>(f[3]), count = parse_number<std::int64_t>(f[4]);
    const auto events = parse_number<std::int64_t>(f[5]);
    const auto open = parse_number<int>(f[7]);
    const auto width = parse_number<double>(f[6]);
    if (!loc || !day || !dow || !k || !count || !events || !open || !width || *dow < 0 || *dow > 6 ||
        *count < 0 || *events < 0)
      throw bad();
    auto [it, inserted] = out.try_emplace(DayKey{*loc, *day});
    auto& s = it->second;
    if (inserted) {
      s.location_number = *loc;
      s.calendar_day = *day;
      s.day_of_week = *dow;
      s.minutes_open = *open;
      s.bin_width = static_cast<int>(std::lround(*width));
      if (s.bin_width < 1) throw bad();
    }
    if (static_cast<std::size_t>(*k) != s.counts.size()) throw bad();
    s.counts.push_back(*count);
    s.events.push_back(*events);
  }
  for (const auto& [key, s] : out) {
    if (s.counts.size() != bin_count(s.minutes_open, s.bin_width))
      throw DataError("binned series for " + to_string(key) + " has " + std::to_string(s.counts.size()) +
                      " bins, expected " + std::to_string(bin_count(s.minutes_open, s.bin_width)));
  }
  return out;
}

inline void write_rejections_csv(std::ostream& os, std::span<const Rejection> rejections) {
  os << "row,reason\n";
  for (const auto& r : rejections) {
    std::string reason = r.reason;
    std::string quoted = "\"";
    for (char c : reason) {
      if (c == '"') quoted += "\"\"";
      else quoted += c;
    }
    quoted += '"';
    os << r.row << ',' << quoted << '\n';
  }
}

}  // namespace hiercast
