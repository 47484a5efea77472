#pragma once

// Synthetic point-of-sale streams with known generative parameters.
//
// Each location-day has a log-quadratic arrival intensity (per minute)
//   lambda(t) = exp(c0 + c1 * u + c2 * u^2),   u = (t - M/2) / (M/2) in [-1, 1),
// where M is the number of minutes the location is open. The coefficients of a
// location-day follow the two-way crossed effects structure
//   c0 = mu + z_day + z_location + eps,   eps ~ N(0, sigma_eps),
// and c1, c2 repeat that draw (with independent eps) scaled by trend_scale and
// curvature_scale. Arrivals are simulated by thinning; quantities are 1 + Poisson.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "hiercast/errors.hpp"
#include "hiercast/parallel.hpp"
#include "hiercast/random.hpp"
#include "hiercast/records.hpp"

namespace hiercast {

struct GroundTruth {
  double mu = -1.85;
  std::array<double, kDaysPerWeek> day_effects{};
  std::vector<double> location_effects = std::vector<double>(1, 0.0);
  double sigma_d = 0.12;
  double sigma_j = 0.33;
  double sigma_eps = 0.25;
  double trend_scale = -0.06;
  double curvature_scale = 0.15;
  int minutes_open = 900;
  double overdispersion = 0.0;  // variance of the mean-1 gamma intensity multiplier
  double mean_quantity = 1.5;

  std::size_t n_locations() const { return location_effects.size(); }

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (!(sigma_d >= 0) || !(sigma_j >= 0) || !(sigma_eps >= 0))
      out.push_back("sigma_d, sigma_j and sigma_eps must be >= 0");
    if (minutes_open < 1 || minutes_open > 1440) out.push_back("minutes_open must be in [1, 1440]");
    if (location_effects.empty()) out.push_back("at least one location effect is required");
    if (!(overdispersion >= 0)) out.push_back("overdispersion must be >= 0");
    if (!(mean_quantity >= 1)) out.push_back("mean_quantity must be >= 1");
    if (!std::isfinite(mu) || !std::isfinite(trend_scale) || !std::isfinite(curvature_scale))
      out.push_back("mu, trend_scale and curvature_scale must be finite");
    return out;
  }
  void validate() const {
    if (auto p = problems(); !p.empty()) throw ConfigError(std::move(p));
  }

  // Fills day and location effects with N(0, sigma_d) and N(0, sigma_j) draws.
  void draw_effects(std::size_t n_locations, std::uint64_t seed) {
    Rng rng{derive_seed(seed, 0x7472757468ULL)};
    for (auto& z : day_effects) z = sigma_d * std_normal(rng);
    location_effects.assign(n_locations, 0.0);
    for (auto& z : location_effects) z = sigma_j * std_normal(rng);
  }
};

struct SimConfig {
  int n_locations = 49;
  int n_days = 150;
  std::uint64_t seed = 20220801;
  double missing_day_fraction = 0.0;
  int start_date = 20210104;  // yyyymmdd
  int opening_minute = 360;   // minute of day the locations open

  std::vector<std::string> problems(const GroundTruth& gt) const {
    std::vector<std::string> out;
    if (n_locations < 1) out.push_back("n_locations must be >= 1");
    if (n_days < 1) out.push_back("n_days must be >= 1");
    if (!(missing_day_fraction >= 0.0 && missing_day_fraction <= 1.0))
      out.push_back("missing_day_fraction must be in [0, 1]");
    if (!CivilDate::from_yyyymmdd(start_date).valid()) out.push_back("start_date is not a valid yyyymmdd date");
    if (opening_minute < 0 || opening_minute + gt.minutes_open > 1440)
      out.push_back("opening_minute + minutes_open must fit within one calendar day");
    if (n_locations >= 1 && gt.n_locations() != static_cast<std::size_t>(n_locations))
      out.push_back("ground truth has " + std::to_string(gt.n_locations()) +
                    " location effects but n_locations is " + std::to_string(n_locations));
    return out;
  }

  // 49 locations over 243 calendar days with 8649 observed location-days.
  static SimConfig full_scale() {
    SimConfig cfg;
    cfg.n_locations = 49;
    cfg.n_days = 243;
    cfg.missing_day_fraction = 3258.0 / 11907.0;
    return cfg;
  }
};

struct CurveCoefficients {
  double c0 = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;
};

// One sale: integer minute since opening and item count.
struct SaleEvent {
  double minute = 0.0;
  int quantity = 1;
};

inline CurveCoefficients sample_location_day_curve(const GroundTruth& gt, std::size_t location,
                                                   int day_of_week, Rng& rng) {
  if (location >= gt.n_locations())
    throw ConfigError("location index " + std::to_string(location) + " out of range (J = " +
                      std::to_string(gt.n_locations()) + ")");
  if (day_of_week < 0 || day_of_week >= kDaysPerWeek)
    throw ConfigError("day_of_week " + std::to_string(day_of_week) + " out of range [0, 7)");
  const double mean = gt.mu + gt.day_effects[day_of_week] + gt.location_effects[location];
  auto draw = [&] { return mean + gt.sigma_eps * std_normal(rng); };
  CurveCoefficients c;
  c.c0 = draw();
  c.c1 = gt.trend_scale * draw();
  c.c2 = gt.curvature_scale * draw();
  return c;
}

// log lambda at centred time u.
inline double log_intensity(const CurveCoefficients& c, double u) {
  return c.c0 + c.c1 * u + c.c2 * u * u;
}

// Largest log intensity over u in [-1, 1].
inline double max_log_intensity(const CurveCoefficients& c) {
  double best = std::max(log_intensity(c, -1.0), log_intensity(c, 1.0));
  if (c.c2 < 0.0) {
    const double vertex = -c.c1 / (2.0 * c.c2);
    if (vertex > -1.0 && vertex < 1.0) best = std::max(best, log_intensity(c, vertex));
  }
  return best;
}

// Expected number of arrivals over the opening window (Simpson's rule on a fine grid).
inline double expected_arrivals(const CurveCoefficients& c, int minutes_open) {
  const int n = 2000;
  const double half = 0.5 * minutes_open;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double u = -1.0 + 2.0 * i / n;
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    acc += w * std::exp(log_intensity(c, u));
  }
  return acc * (2.0 / n) / 3.0 * half;
}

// Arrivals for one location-day, sorted by time, at minute resolution.
inline std::vector<SaleEvent> simulate_day(const CurveCoefficients& c, int minutes_open,
                                           double overdispersion, double mean_quantity, Rng& rng) {
  if (minutes_open < 1) throw ConfigError("minutes_open must be >= 1");
  if (!(overdispersion >= 0)) throw ConfigError("overdispersion must be >= 0");
  if (!(mean_quantity >= 1)) throw ConfigError("mean_quantity must be >= 1");

  const double log_max = max_log_intensity(c);
  double mix = 1.0;
  if (overdispersion > 0.0)
    mix = std::gamma_distribution<double>{1.0 / overdispersion, overdispersion}(rng);
  const double envelope = mix * std::exp(log_max) * minutes_open;
  if (!(envelope < 1e8)) throw ConfigError("intensity too large to simulate (log rate " +
                                            format_number(log_max) + ")");

  const long candidates = envelope > 0.0 ? std::poisson_distribution<long>{envelope}(rng) : 0;
  const double half = 0.5 * minutes_open;
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(candidates));
  for (long i = 0; i < candidates; ++i) {
    const double t = uniform_open(rng) * minutes_open;
    const double u = (t - half) / half;
    if (uniform_open(rng) < std::exp(log_intensity(c, u) - log_max)) times.push_back(t);
  }
  std::sort(times.begin(), times.end());

  // Quantity is 1 + Poisson(mean_quantity - 1); the Poisson needs a positive mean.
  std::poisson_distribution<int> extra{mean_quantity > 1.0 ? mean_quantity - 1.0 : 1.0};
  std::vector<SaleEvent> events;
  events.reserve(times.size());
  for (double t : times) {
    const int q = mean_quantity > 1.0 ? 1 + extra(rng) : 1;
    events.push_back({std::min(std::floor(t), minutes_open - 1.0), q});
  }
  return events;
}

// Which (location, day) cells of the grid are censored: exactly
// round(fraction * cells) of them, chosen uniformly.
inline std::vector<char> missing_cells(const SimConfig& cfg) {
  const std::size_t cells = static_cast<std::size_t>(cfg.n_locations) * cfg.n_days;
  const auto n_missing = static_cast<std::size_t>(std::llround(cfg.missing_day_fraction * cells));
  std::vector<std::size_t> order(cells);
  for (std::size_t i = 0; i < cells; ++i) order[i] = i;
  Rng rng{derive_seed(cfg.seed, 0x6d697373ULL)};
  for (std::size_t i = 0; i < n_missing; ++i) {
    std::uniform_int_distribution<std::size_t> pick{i, cells - 1};
    std::swap(order[i], order[pick(rng)]);
  }
  std::vector<char> missing(cells, 0);
  for (std::size_t i = 0; i < n_missing; ++i) missing[order[i]] = 1;
  return missing;
}

// Fleet-scale transaction stream, ordered by location, calendar day, time.
// Every location-day draws from its own stream derived from (seed, location, day).
inline std::vector<TransactionRecord> generate_dataset(const SimConfig& cfg, const GroundTruth& gt) {
  auto problems = cfg.problems(gt);
  for (auto& p : gt.problems()) problems.push_back(std::move(p));
  if (!problems.empty()) throw ConfigError(std::move(problems));

  const auto missing = missing_cells(cfg);
  const CivilDate start = CivilDate::from_yyyymmdd(cfg.start_date);
  std::vector<std::vector<TransactionRecord>> per_location(cfg.n_locations);

  parallel_for(static_cast<std::size_t>(cfg.n_locations), [&](std::size_t j) {
    auto& out = per_location[j];
    for (int k = 0; k < cfg.n_days; ++k) {
      if (missing[j * cfg.n_days + k]) continue;
      const CivilDate date = start.plus_days(k);
      const int dow = date.day_of_week();
      Rng rng{derive_seed(cfg.seed, 0x646179ULL, j, k)};
      const auto curve = sample_location_day_curve(gt, j, dow, rng);
      for (const auto& e : simulate_day(curve, gt.minutes_open, gt.overdispersion, gt.mean_quantity, rng)) {
        TransactionRecord r;
        r.location_number = static_cast<int>(j) + 1;
        r.day_of_week = dow;
        r.daily_minutes_open = gt.minutes_open;
        r.date_time_placed = {date, cfg.opening_minute + static_cast<int>(e.minute)};
        r.sales_as_minutes = e.minute;
        r.quantity = e.quantity;
        out.push_back(r);
      }
    }
  });

  std::vector<TransactionRecord> all;
  std::size_t total = 0;
  for (const auto& v : per_location) total += v.size();
  all.reserve(total);
  for (auto& v : per_location) all.insert(all.end(), v.begin(), v.end());
  return all;
}

inline constexpr std::string_view kTransactionHeader =
    "LocationNumber,SalesDayName,DailyMinutesOpen,DateTimePlaced,SalesAsMinutes,Quantity";

inline void append_transaction_row(std::string& out, const TransactionRecord& r) {
  append_number(out, r.location_number);
  out += ',';
  out += kDayNames[r.day_of_week];
  out += ',';
  append_number(out, r.daily_minutes_open);
  out += ',';
  out += r.date_time_placed.to_string();
  out += ',';
  append_number(out, r.sales_as_minutes);
  out += ',';
  append_number(out, r.quantity);
  out += '\n';
}

template <class Range>
void write_transactions_csv(std::ostream& os, const Range& records) {
  std::string buf;
  buf.reserve(1 << 16);
  buf += kTransactionHeader;
  buf += '\n';
  for (const TransactionRecord& r : records) {
    append_transaction_row(buf, r);
    if (buf.size() > (1 << 16) - 128) {
      os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
      buf.clear();
    }
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

}  // namespace hiercast
