#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>
#include <random>
#include <sstream>

#include "hiercast/eval.hpp"

using namespace hiercast;

namespace {

std::vector<CoefficientRecord> grid_records(int locations, int days, std::uint64_t seed) {
  std::mt19937_64 rng{seed};
  std::normal_distribution<double> z;
  std::vector<CoefficientRecord> out;
  for (int l = 1; l <= locations; ++l)
    for (int d = 0; d < days; ++d) {
      CoefficientRecord r;
      r.location_number = l;
      r.calendar_day = 20210104 + d;
      r.day_of_week = d % 7;
      r.coef = {2.0 + 0.1 * l + z(rng), z(rng), z(rng)};
      out.push_back(r);
    }
  return out;
}

ParameterSummary row(std::string name, double mean) {
  ParameterSummary p;
  p.name = std::move(name);
  p.mean = mean;
  return p;
}

// A fit whose effects are given directly.
ModelFit fixed_fit(double mu, std::vector<double> z_d, std::vector<double> z_j, std::vector<int> ids,
                   double scale = 1.0) {
  ModelFit f;
  f.scale_factor = scale;
  f.location_ids = std::move(ids);
  f.summary = {row("mu", mu), row("s_d", 0.1), row("s_j", 0.2), row("s_eps", 0.3)};
  for (std::size_t k = 0; k < z_d.size(); ++k) f.summary.push_back(row("z_d[" + std::to_string(k + 1) + "]", z_d[k]));
  for (std::size_t k = 0; k < z_j.size(); ++k) f.summary.push_back(row("z_j[" + std::to_string(k + 1) + "]", z_j[k]));
  return f;
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    out.push_back(cells);
  }
  return out;
}

}  // namespace

TEST(Split, PartitionIsCompleteDeterministicAndFair) {
  const auto recs = grid_records(49, 120, 1);
  const auto a = split(recs, 7), b = split(recs, 7), c = split(recs, 8);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(a.labels, c.labels);
  const auto train = select(recs, a, Part::train), test = select(recs, a, Part::test);
  EXPECT_EQ(train.size() + test.size(), recs.size());
  std::set<DayKey> seen;
  for (const auto& r : train) seen.insert(r.key());
  for (const auto& r : test) EXPECT_FALSE(seen.contains(r.key()));
  // Binomial(5880, 1/2): 4 sd is about 0.026.
  const double frac = static_cast<double>(a.count(Part::test)) / recs.size();
  EXPECT_NEAR(frac, 0.5, 0.026);
}

TEST(Split, AssignmentDependsOnlyOnKeyAndSeed) {
  auto recs = grid_records(5, 30, 2);
  const auto a = split(recs, 3);
  std::vector<std::size_t> order(recs.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), std::mt19937_64{4});
  std::vector<CoefficientRecord> shuffled;
  for (auto i : order) shuffled.push_back(recs[i]);
  const auto b = split(shuffled, 3);
  for (std::size_t k = 0; k < order.size(); ++k) EXPECT_EQ(b.labels[k], a.labels[order[k]]);
}

TEST(Baseline, GroupMeanExamples) {
  std::vector<CoefficientRecord> recs(3);
  recs[0].location_number = 1;
  recs[0].coef = {1.0, 0, 0};
  recs[1].location_number = 1;
  recs[1].coef = {3.0, 0, 0};
  recs[2].location_number = 2;
  recs[2].coef = {5.0, 0, 0};
  EXPECT_EQ(baseline_group_mean(recs, Coefficient::c0, Grouping::location, 1), 2.0);
  EXPECT_EQ(baseline_group_mean(recs, Coefficient::c0, Grouping::location, 2), 5.0);
  EXPECT_FALSE(baseline_group_mean(recs, Coefficient::c0, Grouping::location, 3).has_value());
}

TEST(Baseline, MatchesStreamingMean) {
  const auto recs = grid_records(6, 50, 3);
  for (auto g : kGroupings) {
    const auto means = group_means(recs, Coefficient::c1, g);
    for (const auto& [id, m] : means) {
      // Welford update, a different summation order from the library.
      double mean = 0.0;
      int n = 0;
      for (const auto& r : recs)
        if (group_id(r, g) == id) mean += (r.value(Coefficient::c1) - mean) / ++n;
      EXPECT_NEAR(m, mean, 1e-12);
      EXPECT_NEAR(*baseline_group_mean(recs, Coefficient::c1, g, id), mean, 1e-12);
    }
  }
}

TEST(Score, Examples) {
  const std::vector<double> pred{1.0, 2.0, 3.0}, actual{1.0, 2.0, 3.0};
  const auto s = score(pred, actual);
  EXPECT_EQ(s.bias, 0.0);
  EXPECT_EQ(s.rmse, 0.0);
  EXPECT_EQ(s.n, 3u);
  const std::vector<double> shifted{2.0, 3.0, 4.0};
  EXPECT_DOUBLE_EQ(score(shifted, actual).bias, 1.0);
  EXPECT_DOUBLE_EQ(score(shifted, actual).rmse, 1.0);
  const std::vector<double> a{0.0, 0.0}, b{1.0, -1.0};
  EXPECT_DOUBLE_EQ(score(b, a).bias, 0.0);
  EXPECT_DOUBLE_EQ(score(b, a).rmse, 1.0);
}

TEST(Score, MismatchedOrEmptyInputViolatesContract) {
  const std::vector<double> a{1.0}, b{1.0, 2.0}, none;
  EXPECT_THROW(score(a, b), ContractViolation);
  EXPECT_THROW(score(none, none), ContractViolation);
}

TEST(Score, RmseDominatesBias) {
  std::mt19937_64 rng{5};
  std::normal_distribution<double> z{0.3, 2.0};
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> p(1 + trial % 17), a(p.size());
    for (auto& x : p) x = z(rng);
    for (auto& x : a) x = z(rng);
    const auto s = score(p, a);
    EXPECT_GE(s.rmse * s.rmse, s.bias * s.bias - 1e-12);
  }
}

TEST(Predict, GroupPredictionsAreMuPlusEffect) {
  const auto fit = fixed_fit(1.0, {0.1, -0.1, 0, 0, 0, 0, 0.2}, {0.5, -0.5}, {11, 42}, 2.0);
  EXPECT_DOUBLE_EQ(predict_group(fit, Grouping::location, 42), (1.0 - 0.5) * 2.0);
  EXPECT_DOUBLE_EQ(predict_group(fit, Grouping::day_of_week, 6), (1.0 + 0.2) * 2.0);
  EXPECT_TRUE(has_group(fit, Grouping::location, 11));
  EXPECT_FALSE(has_group(fit, Grouping::location, 12));
  EXPECT_THROW(predict_group(fit, Grouping::location, 12), DataError);
}

TEST(Compare, GroupAndRecordAggregation) {
  std::vector<CoefficientRecord> train(4), test(3);
  const int tl[4] = {1, 1, 2, 2};
  const double tv[4] = {1.0, 2.0, 4.0, 6.0};
  for (int i = 0; i < 4; ++i) {
    train[i].location_number = tl[i];
    train[i].coef[0] = tv[i];
  }
  const int sl[3] = {1, 2, 3};
  const double sv[3] = {2.0, 5.0, 9.0};
  for (int i = 0; i < 3; ++i) {
    test[i].location_number = sl[i];
    test[i].coef[0] = sv[i];
  }
  auto fit = fixed_fit(3.0, std::vector<double>(7, 0.0), {-1.0, 2.0}, {1, 2});
  fit.coefficient = Coefficient::c0;
  const auto c = compare_groups(fit, train, test, Grouping::location);
  ASSERT_EQ(c.actual.size(), 2u);
  EXPECT_EQ(c.excluded, std::vector<int>{3});
  EXPECT_EQ(c.baseline, (std::vector<double>{1.5, 5.0}));
  EXPECT_EQ(c.hier, (std::vector<double>{2.0, 5.0}));
  const auto row = evaluate_row(fit, train, test, Grouping::location);
  EXPECT_DOUBLE_EQ(row.hier.rmse, 0.0);
  EXPECT_DOUBLE_EQ(row.baseline.bias, -0.25);
  // train means are 1.5 and 5, the fit predicts 2 and 5
  EXPECT_DOUBLE_EQ(row.train_check.bias, 0.25);

  const auto r = compare_groups(fit, train, test, Grouping::location, Aggregation::record);
  EXPECT_EQ(r.actual, (std::vector<double>{2.0, 5.0}));
}

TEST(Variance, DecompositionLimits) {
  const std::vector<double> y{1.0, 2.0, 3.0, 4.0};
  auto fit = fixed_fit(0.0, {}, {}, {});
  fit.summary[3].mean = 0.0;  // s_eps
  EXPECT_DOUBLE_EQ(variance_decomposition(fit, y).r_squared, 1.0);
  fit.summary[3].mean = detail::sample_sd(y);
  EXPECT_NEAR(variance_decomposition(fit, y).r_squared, 0.0, 1e-15);
  fit.summary[3].mean = 0.5;
  fit.scale_factor = -2.0;
  const auto v = variance_decomposition(fit, y);
  EXPECT_DOUBLE_EQ(v.s_eps, 1.0);
  EXPECT_DOUBLE_EQ(v.combined, std::sqrt(0.2 * 0.2 + 0.4 * 0.4 + 1.0));
}

TEST(Plots, BoxplotMatchesSortOracle) {
  const auto recs = grid_records(3, 41, 6);
  std::ostringstream os;
  write_boxplot_csv(os, recs, Coefficient::c0, Grouping::location);
  const auto rows = csv_rows(os.str());
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0][2], "min");
  for (int l = 1; l <= 3; ++l) {
    std::vector<double> v;
    for (const auto& r : recs)
      if (r.location_number == l) v.push_back(r.coef[0]);
    std::sort(v.begin(), v.end());
    const auto& row = rows[l];
    EXPECT_EQ(std::stoi(row[1]), 41);
    EXPECT_EQ(std::stod(row[2]), v.front());
    EXPECT_EQ(std::stod(row[4]), v[20]);  // odd n: the middle element
    EXPECT_EQ(std::stod(row[6]), v.back());
  }
}

TEST(Plots, DailyFitOfConstantCountsIsFlat) {
  BinnedSeries s;
  s.location_number = 1;
  s.calendar_day = 20210104;
  s.bin_width = 15;
  s.minutes_open = 150;
  s.counts.assign(10, 5);
  s.events = s.counts;
  const auto fit = fit_curve(s);
  std::vector<TransactionRecord> events(2);
  events[0].sales_as_minutes = 3.5;
  events[1].sales_as_minutes = 140.0;
  std::ostringstream os;
  write_daily_fit_csv(os, fit, events, s);
  int curves = 0;
  for (const auto& row : csv_rows(os.str())) {
    if (row[0] == "row_type") continue;
    EXPECT_NEAR(std::stod(row[4]), std::log(6.0), 1e-12);  // log(count + offset)
    if (row[0] == "curve") ++curves;
  }
  EXPECT_EQ(curves, 31);
}

TEST(Plots, PredVsActualCarriesIdentityLine) {
  GroupComparison c;
  c.group = {1, 2};
  c.actual = {0.5, 1.5};
  c.hier = {0.6, 1.4};
  c.baseline = {0.0, 0.0};
  PlotInputs in;
  in.comparison = &c;
  std::ostringstream os;
  emit_plot_data("pred_vs_actual", in, os);
  const auto rows = csv_rows(os.str());
  ASSERT_EQ(rows.size(), 3u);
  for (int i = 1; i <= 2; ++i) EXPECT_EQ(rows[i][1], rows[i][3]);
  EXPECT_EQ(rows[2][2], "1.4");
}

TEST(Plots, UnknownKindAndMissingInputs) {
  PlotInputs in;
  std::ostringstream os;
  EXPECT_THROW(emit_plot_data("histogram", in, os), DataError);
  EXPECT_THROW(emit_plot_data("daily_fit", in, os), DataError);
  EXPECT_THROW(emit_plot_data("boxplot_by_group", in, os), DataError);
  EXPECT_TRUE(os.str().empty());
}

TEST(Report, RmseTableHasOneRowPerCoefficientAndGrouping) {
  const auto recs = grid_records(8, 28, 7);
  const auto a = split(recs, 9);
  const auto train = select(recs, a, Part::train), test = select(recs, a, Part::test);
  std::vector<int> ids{1, 2, 3, 4, 5, 6, 7, 8};
  EvalReport report;
  for (auto c : {Coefficient::c0, Coefficient::c1, Coefficient::c2}) {
    auto fit = fixed_fit(2.0, std::vector<double>(7, 0.0), std::vector<double>(8, 0.0), ids);
    fit.coefficient = c;
    report.coefficients.push_back(evaluate_coefficient(fit, train, test, Aggregation::group));
  }
  std::ostringstream os;
  write_rmse_table_csv(os, report);
  const auto rows = csv_rows(os.str());
  ASSERT_EQ(rows.size(), 7u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"Coefficient", "Group", "Average", "Hierarchy"}));
  EXPECT_EQ(rows[1][1], "Location");
  EXPECT_EQ(rows[2][1], "Day-Of-Week");
}
