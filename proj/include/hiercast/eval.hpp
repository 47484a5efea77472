#pragma once

// Evaluation protocol: random half split of location-days, per-group baseline
// means vs. hierarchical predictions, bias/RMSE, variance decomposition, R²,
// and tabular plot data.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hiercast/diagnostics.hpp"
#include "hiercast/errors.hpp"
#include "hiercast/hier.hpp"
#include "hiercast/localfit.hpp"
#include "hiercast/random.hpp"
#include "hiercast/records.hpp"

namespace hiercast {

enum class Grouping { location, day_of_week };
inline constexpr std::array<Grouping, 2> kGroupings{Grouping::location, Grouping::day_of_week};

// Row label used in the RMSE table.
inline std::string_view label(Grouping g) { return g == Grouping::location ? "Location" : "Day-Of-Week"; }
inline std::string_view name(Grouping g) { return g == Grouping::location ? "location" : "day_of_week"; }

inline int group_id(const CoefficientRecord& r, Grouping g) {
  return g == Grouping::location ? r.location_number : r.day_of_week;
}

// ---- split ----

enum class Part { train, test };

struct SplitAssignment {
  std::uint64_t seed = 0;
  std::vector<Part> labels;  // aligned with the records passed to split()

  std::size_t count(Part p) const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), p)); }
};

// Fair coin per location-day, a pure function of (key, seed).
inline Part assign_part(const DayKey& key, std::uint64_t seed) {
  const auto h = derive_seed(seed, static_cast<std::uint64_t>(key.location_number),
                             static_cast<std::uint64_t>(key.calendar_day));
  return (h >> 63) ? Part::test : Part::train;
}

inline SplitAssignment split(std::span<const CoefficientRecord> records, std::uint64_t seed) {
  SplitAssignment a{seed, {}};
  a.labels.reserve(records.size());
  for (const auto& r : records) a.labels.push_back(assign_part(r.key(), seed));
  return a;
}

inline std::vector<CoefficientRecord> select(std::span<const CoefficientRecord> records, const SplitAssignment& a,
                                             Part part) {
  if (a.labels.size() != records.size()) throw ContractViolation("split labels do not match the records");
  std::vector<CoefficientRecord> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (a.labels[i] == part) out.push_back(records[i]);
  return out;
}

inline void write_split_csv(std::ostream& os, std::span<const CoefficientRecord> records, const SplitAssignment& a) {
  std::string buf = "LocationNumber,Day,part\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    append_number(buf, records[i].location_number);
    buf += ',';
    append_number(buf, records[i].calendar_day);
    buf += a.labels[i] == Part::train ? ",train\n" : ",test\n";
  }
  os << buf;
}

// ---- model input and fitted model ----

struct ModelInput {
  Coefficient coefficient = Coefficient::c0;
  HierData data;
  double scale_factor = 1.0;
  bool used_fallback = false;
  std::vector<int> location_ids;  // location number of each model index
};

inline ModelInput make_model_input(std::span<const CoefficientRecord> records, Coefficient which) {
  const auto rescaled = rescale_for_inference(records, which);
  std::set<int> ids;
  for (const auto& r : records) ids.insert(r.location_number);
  ModelInput in{which, {}, rescaled.scale_factor, rescaled.used_fallback, {ids.begin(), ids.end()}};
  std::map<int, int> index;
  for (std::size_t j = 0; j < in.location_ids.size(); ++j) index[in.location_ids[j]] = static_cast<int>(j);
  in.data.n_days = kDaysPerWeek;
  in.data.n_locations = static_cast<int>(in.location_ids.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    in.data.push_back(records[i].day_of_week, index[records[i].location_number], rescaled.values[i]);
  return in;
}

struct ModelFit {
  Coefficient coefficient = Coefficient::c0;
  std::vector<ParameterSummary> summary;
  double scale_factor = 1.0;
  std::vector<int> location_ids;
  int n_days = kDaysPerWeek;
};

// Posterior-mean prediction for one group on the original coefficient scale.
// The other grouping's effect is omitted (it has mean zero).
inline double predict_group(const ModelFit& fit, Grouping g, int id) {
  const double mu = find_parameter(fit.summary, "mu").mean;
  std::string param;
  if (g == Grouping::location) {
    const auto it = std::find(fit.location_ids.begin(), fit.location_ids.end(), id);
    if (it == fit.location_ids.end()) throw DataError("unknown location " + std::to_string(id));
    param = "z_j[" + std::to_string(it - fit.location_ids.begin() + 1) + "]";
  } else {
    if (id < 0 || id >= fit.n_days) throw DataError("unknown day of week " + std::to_string(id));
    param = "z_d[" + std::to_string(id + 1) + "]";
  }
  return (mu + find_parameter(fit.summary, param).mean) * fit.scale_factor;
}

inline bool has_group(const ModelFit& fit, Grouping g, int id) {
  if (g == Grouping::day_of_week) return id >= 0 && id < fit.n_days;
  return std::find(fit.location_ids.begin(), fit.location_ids.end(), id) != fit.location_ids.end();
}

// Mean of the coefficient over the records in one group; nullopt for an empty group.
inline std::optional<double> baseline_group_mean(std::span<const CoefficientRecord> records, Coefficient which,
                                                 Grouping g, int id) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : records) {
    if (group_id(r, g) != id) continue;
    sum += r.value(which);
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

inline std::map<int, double> group_means(std::span<const CoefficientRecord> records, Coefficient which, Grouping g) {
  std::map<int, std::pair<double, std::size_t>> acc;
  for (const auto& r : records) {
    auto& [s, n] = acc[group_id(r, g)];
    s += r.value(which);
    ++n;
  }
  std::map<int, double> out;
  for (const auto& [id, sn] : acc) out[id] = sn.first / static_cast<double>(sn.second);
  return out;
}

// ---- scoring ----

struct Score {
  double bias = 0.0;  // mean(pred - actual)
  double rmse = 0.0;
  std::size_t n = 0;
};

inline Score score(std::span<const double> predictions, std::span<const double> actuals) {
  if (predictions.size() != actuals.size())
    throw ContractViolation("score: " + std::to_string(predictions.size()) + " predictions vs " +
                            std::to_string(actuals.size()) + " actuals");
  if (predictions.empty()) throw ContractViolation("score: nothing to score");
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double e = predictions[i] - actuals[i];
    sum += e;
    sq += e * e;
  }
  const double n = static_cast<double>(predictions.size());
  return {sum / n, std::sqrt(sq / n), predictions.size()};
}

enum class Aggregation { group, record };

// Paired predictions for one (coefficient, grouping) cell of the RMSE table.
struct GroupComparison {
  Coefficient coefficient = Coefficient::c0;
  Grouping grouping = Grouping::location;
  std::vector<int> group;  // one entry per scored pair
  std::vector<double> actual;
  std::vector<double> baseline;
  std::vector<double> hier;
  std::vector<int> excluded;  // test groups that could not be scored
};

// Target: held-out values (group means, or single records in record mode).
// Baseline: the training-set mean of the group. Hierarchy: the model trained on the training set.
inline GroupComparison compare_groups(const ModelFit& fit, std::span<const CoefficientRecord> train,
                                      std::span<const CoefficientRecord> test, Grouping g,
                                      Aggregation mode = Aggregation::group) {
  const Coefficient which = fit.coefficient;
  GroupComparison c{which, g, {}, {}, {}, {}, {}};
  const auto train_means = group_means(train, which, g);
  const auto test_means = group_means(test, which, g);
  std::set<int> scored;
  for (const auto& [id, mean] : test_means) {
    const auto base = train_means.find(id);
    if (base == train_means.end() || !has_group(fit, g, id)) {
      c.excluded.push_back(id);
      continue;
    }
    scored.insert(id);
    if (mode == Aggregation::group) {
      c.group.push_back(id);
      c.actual.push_back(mean);
      c.baseline.push_back(base->second);
      c.hier.push_back(predict_group(fit, g, id));
    }
  }
  if (mode == Aggregation::record) {
    for (const auto& r : test) {
      const int id = group_id(r, g);
      if (!scored.contains(id)) continue;
      c.group.push_back(id);
      c.actual.push_back(r.value(which));
      c.baseline.push_back(train_means.at(id));
      c.hier.push_back(predict_group(fit, g, id));
    }
  }
  return c;
}

// Sanity check: the model against the means of the data it was trained on.
inline Score test_on_train(const ModelFit& fit, std::span<const CoefficientRecord> train, Grouping g) {
  std::vector<double> pred, actual;
  for (const auto& [id, mean] : group_means(train, fit.coefficient, g)) {
    if (!has_group(fit, g, id)) continue;
    pred.push_back(predict_group(fit, g, id));
    actual.push_back(mean);
  }
  return score(pred, actual);
}

struct RowResult {
  Coefficient coefficient = Coefficient::c0;
  Grouping grouping = Grouping::location;
  Score baseline;
  Score hier;
  Score train_check;
  std::size_t n_groups = 0;
  std::vector<int> excluded;
};

inline RowResult evaluate_row(const ModelFit& fit, std::span<const CoefficientRecord> train,
                              std::span<const CoefficientRecord> test, Grouping g,
                              Aggregation mode = Aggregation::group) {
  const auto c = compare_groups(fit, train, test, g, mode);
  if (c.actual.empty())
    throw DataError("no " + std::string(name(g)) + " group has both training and test records for " +
                    std::string(name(fit.coefficient)));
  RowResult r{fit.coefficient, g, score(c.baseline, c.actual), score(c.hier, c.actual), test_on_train(fit, train, g),
              std::set<int>(c.group.begin(), c.group.end()).size(), c.excluded};
  return r;
}

struct VarianceDecomposition {
  double s_d = 0, s_j = 0, s_eps = 0;
  double combined = 0;  // sqrt(s_d² + s_j² + s_eps²)
  double sigma_y = 0;   // sample SD of y
  double r_squared = 0; // 1 - s_eps² / sigma_y²
};

// Scales are posterior means mapped back to the units of y (the fit's scale factor).
inline VarianceDecomposition variance_decomposition(const ModelFit& fit, std::span<const double> y) {
  VarianceDecomposition v;
  const double k = std::abs(fit.scale_factor);
  v.s_d = find_parameter(fit.summary, "s_d").mean * k;
  v.s_j = find_parameter(fit.summary, "s_j").mean * k;
  v.s_eps = find_parameter(fit.summary, "s_eps").mean * k;
  v.combined = std::sqrt(v.s_d * v.s_d + v.s_j * v.s_j + v.s_eps * v.s_eps);
  v.sigma_y = detail::sample_sd(y);
  v.r_squared = v.sigma_y > 0 ? 1.0 - (v.s_eps * v.s_eps) / (v.sigma_y * v.sigma_y)
                              : std::numeric_limits<double>::quiet_NaN();
  return v;
}

struct CoefficientEval {
  Coefficient coefficient = Coefficient::c0;
  std::array<RowResult, 2> rows;  // location, day of week
  VarianceDecomposition variance;
};

struct EvalReport {
  std::uint64_t split_seed = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  Aggregation aggregation = Aggregation::group;
  std::vector<CoefficientEval> coefficients;
};

inline CoefficientEval evaluate_coefficient(const ModelFit& fit, std::span<const CoefficientRecord> train,
                                            std::span<const CoefficientRecord> test,
                                            Aggregation mode = Aggregation::group) {
  std::vector<double> y;
  y.reserve(train.size());
  for (const auto& r : train) y.push_back(r.value(fit.coefficient));
  return {fit.coefficient,
          {evaluate_row(fit, train, test, Grouping::location, mode),
           evaluate_row(fit, train, test, Grouping::day_of_week, mode)},
          variance_decomposition(fit, y)};
}

// RMSE table: baseline ("Average") vs hierarchical model per coefficient and grouping.
inline void write_rmse_table_csv(std::ostream& os, const EvalReport& report) {
  std::string buf = "Coefficient,Group,Average,Hierarchy\n";
  for (const auto& c : report.coefficients) {
    for (const auto& row : c.rows) {
      buf += name(c.coefficient);
      buf += ',';
      buf += label(row.grouping);
      buf += ',';
      append_number(buf, row.baseline.rmse);
      buf += ',';
      append_number(buf, row.hier.rmse);
      buf += '\n';
    }
  }
  os << buf;
}

// ---- plot data ----

enum class PlotKind { daily_fit, boxplot_by_group, pred_vs_actual };

inline PlotKind parse_plot_kind(std::string_view s) {
  if (s == "daily_fit") return PlotKind::daily_fit;
  if (s == "boxplot_by_group") return PlotKind::boxplot_by_group;
  if (s == "pred_vs_actual") return PlotKind::pred_vs_actual;
  throw DataError("unknown plot kind '" + std::string(s) + "' (expected daily_fit, boxplot_by_group or pred_vs_actual)");
}

// Events, binned log counts and the fitted curve (sampled every `curve_step` minutes) for one day.
inline void write_daily_fit_csv(std::ostream& os, const LocalFit& fit, std::span<const TransactionRecord> events,
                                const BinnedSeries& series, double curve_step = 5.0) {
  std::string buf = "row_type,minute,quantity,log_count,fitted\n";
  for (const auto& e : events) {
    buf += "event,";
    append_number(buf, e.sales_as_minutes);
    buf += ',';
    append_number(buf, e.quantity);
    buf += ",,";
    append_number(buf, fit.at_minute(e.sales_as_minutes));
    buf += '\n';
  }
  for (std::size_t k = 0; k < fit.log_counts.size(); ++k) {
    buf += "bin,";
    append_number(buf, 0.5 * (series.bin_start(k) + series.bin_end(k)));
    buf += ",,";
    append_number(buf, fit.log_counts[k]);
    buf += ',';
    append_number(buf, fit.fitted[k]);
    buf += '\n';
  }
  for (double m = 0.0; m <= fit.minutes_open + 1e-9; m += curve_step) {
    buf += "curve,";
    append_number(buf, m);
    buf += ",,,";
    append_number(buf, fit.at_minute(m));
    buf += '\n';
  }
  os << buf;
}

inline void write_boxplot_csv(std::ostream& os, std::span<const CoefficientRecord> records, Coefficient which,
                              Grouping g) {
  std::map<int, std::vector<double>> groups;
  for (const auto& r : records) groups[group_id(r, g)].push_back(r.value(which));
  std::string buf = "group,n,min,q1,median,q3,max,mean\n";
  for (auto& [id, v] : groups) {
    std::sort(v.begin(), v.end());
    double sum = 0.0;
    for (double x : v) sum += x;
    append_number(buf, id);
    buf += ',';
    append_number(buf, static_cast<int>(v.size()));
    for (double q : {v.front(), detail::quantile_sorted(v, 0.25), detail::quantile_sorted(v, 0.5),
                     detail::quantile_sorted(v, 0.75), v.back(), sum / static_cast<double>(v.size())}) {
      buf += ',';
      append_number(buf, q);
    }
    buf += '\n';
  }
  os << buf;
}

// `identity` repeats the actual value: the x = y reference line.
inline void write_pred_vs_actual_csv(std::ostream& os, const GroupComparison& c) {
  std::string buf = "group,actual,predicted,identity\n";
  for (std::size_t i = 0; i < c.actual.size(); ++i) {
    append_number(buf, c.group[i]);
    buf += ',';
    append_number(buf, c.actual[i]);
    buf += ',';
    append_number(buf, c.hier[i]);
    buf += ',';
    append_number(buf, c.actual[i]);
    buf += '\n';
  }
  os << buf;
}

struct PlotInputs {
  const LocalFit* fit = nullptr;
  const BinnedSeries* series = nullptr;
  std::span<const TransactionRecord> events;
  std::span<const CoefficientRecord> records;
  Coefficient coefficient = Coefficient::c0;
  Grouping grouping = Grouping::location;
  const GroupComparison* comparison = nullptr;
};

inline void emit_plot_data(std::string_view kind, const PlotInputs& in, std::ostream& os) {
  switch (parse_plot_kind(kind)) {
    case PlotKind::daily_fit:
      if (!in.fit || !in.series) throw DataError("daily_fit needs a local fit and its binned series");
      write_daily_fit_csv(os, *in.fit, in.events, *in.series);
      return;
    case PlotKind::boxplot_by_group:
      if (in.records.empty()) throw DataError("boxplot_by_group needs coefficient records");
      write_boxplot_csv(os, in.records, in.coefficient, in.grouping);
      return;
    case PlotKind::pred_vs_actual:
      if (!in.comparison) throw DataError("pred_vs_actual needs a group comparison");
      write_pred_vs_actual_csv(os, *in.comparison);
      return;
  }
}

}  // namespace hiercast
