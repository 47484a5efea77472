#pragma once

// Per location-day reduction: least-squares fit of a quadratic to the log of
// binned counts, expressed in a basis of polynomials orthonormal on the bin grid.

#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "hiercast/errors.hpp"
#include "hiercast/ingest.hpp"
#include "hiercast/parallel.hpp"
#include "hiercast/records.hpp"

namespace hiercast {

// Where a bin sits on the time axis.
enum class Centering { midpoint, left_edge };

struct FitOptions {
  double log_offset = 1.0;  // y = log(count + log_offset)
  Centering centering = Centering::midpoint;
  int min_events = 5;  // location-days with fewer transactions are not usable
};

class UnderdeterminedFit : public DataError {
 public:
  UnderdeterminedFit(DayKey key, std::size_t bins)
      : DataError("cannot fit 3 coefficients to " + std::to_string(bins) + " bin(s) for " + to_string(key)),
        key_(key) {}
  const DayKey& key() const noexcept { return key_; }

 private:
  DayKey key_;
};

// Degree-0..2 polynomials orthonormal under the grid average <f, g> = mean_k f(u_k) g(u_k),
// built by the three-term (Stieltjes) recurrence so they can be evaluated off-grid.
class OrthonormalBasis {
 public:
  explicit OrthonormalBasis(std::span<const double> grid) {
    const double n = static_cast<double>(grid.size());
    double mean = 0.0;
    for (double u : grid) mean += u;
    alpha0_ = mean / n;
    double ss = 0.0;
    for (double u : grid) ss += (u - alpha0_) * (u - alpha0_);
    beta1_ = std::sqrt(ss / n);

    double a1 = 0.0;
    for (double u : grid) {
      const double p1 = (u - alpha0_) / beta1_;
      a1 += u * p1 * p1;
    }
    alpha1_ = a1 / n;
    double ss2 = 0.0;
    for (double u : grid) {
      const double p1 = (u - alpha0_) / beta1_;
      const double v = (u - alpha1_) * p1 - beta1_;
      ss2 += v * v;
    }
    beta2_ = std::sqrt(ss2 / n);
  }

  // Needs at least three distinct grid points.
  bool full_rank() const { return beta1_ > 0.0 && beta2_ > 1e-12 * (1.0 + beta1_); }

  double p0(double) const { return 1.0; }
  double p1(double u) const { return (u - alpha0_) / beta1_; }
  double p2(double u) const { return ((u - alpha1_) * p1(u) - beta1_) / beta2_; }
  double eval(int k, double u) const { return k == 0 ? p0(u) : k == 1 ? p1(u) : p2(u); }

 private:
  double alpha0_ = 0, beta1_ = 0, alpha1_ = 0, beta2_ = 0;
};

// Centred, scaled time of each bin: u in [-1, 1] across the opening window.
inline std::vector<double> bin_grid(const BinnedSeries& s, Centering centering) {
  const double half = 0.5 * s.minutes_open;
  std::vector<double> u(s.n_bins());
  for (std::size_t k = 0; k < u.size(); ++k) {
    const double t = centering == Centering::midpoint ? 0.5 * (s.bin_start(k) + s.bin_end(k)) : s.bin_start(k);
    u[k] = (t - half) / half;
  }
  return u;
}

inline double minute_to_u(double minute, int minutes_open) {
  const double half = 0.5 * minutes_open;
  return (minute - half) / half;
}

struct LocalFit {
  CoefficientRecord record;
  OrthonormalBasis basis;
  int minutes_open = 0;
  std::vector<double> grid;        // u per bin
  std::vector<double> log_counts;  // regression target per bin
  std::vector<double> fitted;      // fitted log count per bin

  // Fitted log count at an arbitrary minute since opening.
  double at_minute(double minute) const {
    const double u = minute_to_u(minute, minutes_open);
    const auto& c = record.coef;
    return c[0] * basis.p0(u) + c[1] * basis.p1(u) + c[2] * basis.p2(u);
  }
};

inline LocalFit fit_curve(const BinnedSeries& s, const FitOptions& opts = {}) {
  if (s.n_bins() < 3) throw UnderdeterminedFit(s.key(), s.n_bins());
  auto grid = bin_grid(s, opts.centering);
  OrthonormalBasis basis{grid};
  if (!basis.full_rank()) throw UnderdeterminedFit(s.key(), s.n_bins());

  const std::size_t n = grid.size();
  std::vector<double> y(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double v = static_cast<double>(s.counts[k]) + opts.log_offset;
    if (!(v > 0.0))
      throw DataError("log of a zero count in " + to_string(s.key()) + " (log offset is " +
                      format_number(opts.log_offset) + ")");
    y[k] = std::log(v);
  }

  // Projections onto the orthonormal basis, peeling each component off the
  // residual before taking the next.
  std::vector<double> r = y;
  std::array<double, 3> c{};
  for (int j = 0; j < 3; ++j) {
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) acc += r[k] * basis.eval(j, grid[k]);
    c[j] = acc / static_cast<double>(n);
    for (std::size_t k = 0; k < n; ++k) r[k] -= c[j] * basis.eval(j, grid[k]);
  }

  LocalFit fit{{s.location_number, s.calendar_day, s.day_of_week, c}, basis, s.minutes_open,
               std::move(grid), std::move(y), {}};
  fit.fitted.resize(n);
  for (std::size_t k = 0; k < n; ++k) fit.fitted[k] = fit.log_counts[k] - r[k];
  return fit;
}

inline CoefficientRecord fit_log_quadratic(const BinnedSeries& s, const FitOptions& opts = {}) {
  return fit_curve(s, opts).record;
}

struct FitFailure {
  DayKey key;
  std::string reason;
};

struct CoefficientDataset {
  std::vector<CoefficientRecord> records;
  std::vector<FitFailure> failures;
};

// One record per usable, fittable location-day; everything else is collected as
// a failure. Output order follows the key order of `groups`.
inline CoefficientDataset build_coefficient_dataset(const GroupedSeries& groups, const FitOptions& opts = {}) {
  std::vector<const BinnedSeries*> items;
  items.reserve(groups.size());
  for (const auto& [key, s] : groups) items.push_back(&s);

  std::vector<std::optional<CoefficientRecord>> fitted(items.size());
  std::vector<std::string> reasons(items.size());
  parallel_for(items.size(), [&](std::size_t i) {
    const auto& s = *items[i];
    if (s.total_events() < opts.min_events) {
      reasons[i] = "only " + std::to_string(s.total_events()) + " transaction(s), usability threshold is " +
                   std::to_string(opts.min_events);
      return;
    }
    try {
      fitted[i] = fit_log_quadratic(s, opts);
    } catch (const DataError& e) {
      reasons[i] = e.what();
    }
  });

  CoefficientDataset out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (fitted[i]) out.records.push_back(*fitted[i]);
    else out.failures.push_back({items[i]->key(), reasons[i]});
  }
  return out;
}

struct Rescaled {
  std::vector<double> values;
  double scale_factor = 1.0;
  bool used_fallback = false;  // the mean was zero; scaled by the mean absolute nonzero value
};

// Divides the chosen coefficient by its mean so the values average to 1.
inline Rescaled rescale_for_inference(std::span<const CoefficientRecord> records, Coefficient which) {
  if (records.empty()) throw DataError("cannot rescale an empty coefficient dataset");
  Rescaled out;
  double sum = 0.0;
  for (const auto& r : records) sum += r.value(which);
  double factor = sum / static_cast<double>(records.size());
  if (factor == 0.0 || !std::isfinite(factor)) {
    double abs_sum = 0.0;
    std::size_t nonzero = 0;
    for (const auto& r : records) {
      if (r.value(which) != 0.0) {
        abs_sum += std::abs(r.value(which));
        ++nonzero;
      }
    }
    factor = nonzero ? abs_sum / static_cast<double>(nonzero) : 1.0;
    out.used_fallback = true;
  }
  out.scale_factor = factor;
  out.values.reserve(records.size());
  for (const auto& r : records) out.values.push_back(r.value(which) / factor);
  return out;
}

inline double unscale(double v, double scale_factor) { return v * scale_factor; }

// ---- files ----

inline constexpr std::string_view kCoefficientHeader =
    "LocationNumber,Day,SalesDayName,Coefficient0,Coefficient1,Coefficient2";

inline void write_coefficients_csv(std::ostream& os, std::span<const CoefficientRecord> records) {
  std::string buf;
  buf += kCoefficientHeader;
  buf += '\n';
  for (const auto& r : records) {
    append_number(buf, r.location_number);
    buf += ',';
    append_number(buf, r.calendar_day);
    buf += ',';
    buf += kDayNames[r.day_of_week];
    for (double c : r.coef) {
      buf += ',';
      append_number(buf, c);
    }
    buf += '\n';
  }
  os << buf;
}

inline std::vector<CoefficientRecord> read_coefficients_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("coefficient file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCoefficientHeader) throw DataError("coefficient file has an unexpected header: " + line);
  std::vector<CoefficientRecord> out;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row;
    const auto f = split_csv_line(line);
    const auto bad = [&] { return DataError("coefficient row " + std::to_string(row) + " is malformed"); };
    if (f.size() != 6) throw bad();
    CoefficientRecord r;
    const auto loc = parse_number<int>(f[0]), day = parse_number<int>(f[1]);
    const auto dow = parse_day_name(f[2]);
    if (!loc || !day || !dow) throw bad();
    r.location_number = *loc;
    r.calendar_day = *day;
    r.day_of_week = *dow;
    for (int k = 0; k < 3; ++k) {
      const auto v = parse_number<double>(f[3 + k]);
      if (!v || !std::isfinite(*v)) throw bad();
      r.coef[k] = *v;
    }
    out.push_back(r);
  }
  return out;
}

inline void write_fit_failures_csv(std::ostream& os, std::span<const FitFailure> failures) {
  os << "LocationNumber,Day,reason\n";
  for (const auto& f : failures) {
    std::string quoted;
    for (char c : f.reason) quoted += c == '"' ? std::string("\"\"") : std::string(1, c);
    os << f.key.location_number << ',' << f.key.calendar_day << ",\"" << quoted << "\"\n";
  }
}

}  // namespace hiercast
