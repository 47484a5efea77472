#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "hiercast/ingest.hpp"
#include "hiercast/synthgen.hpp"
#include "oracles.hpp"

using namespace hiercast;

namespace {

GroundTruth flat_truth(std::size_t locations, double mu, double sigma_eps) {
  GroundTruth gt;
  gt.mu = mu;
  gt.day_effects.fill(0.0);
  gt.location_effects.assign(locations, 0.0);
  gt.sigma_eps = sigma_eps;
  return gt;
}

}  // namespace

TEST(SampleCurve, NoiseFreeIsTheMean) {
  auto gt = flat_truth(1, 1.0, 0.0);
  Rng rng{1};
  const auto c = sample_location_day_curve(gt, 0, 0, rng);
  EXPECT_EQ(c.c0, 1.0);
}

TEST(SampleCurve, EffectsAddUp) {
  auto gt = flat_truth(6, 1.0, 0.0);
  gt.day_effects[2] = 0.3;
  gt.location_effects[5] = -0.1;
  Rng rng{1};
  const auto c = sample_location_day_curve(gt, 5, 2, rng);
  EXPECT_NEAR(c.c0, 1.2, 1e-15);
  EXPECT_NEAR(c.c1, gt.trend_scale * 1.2, 1e-15);
  EXPECT_NEAR(c.c2, gt.curvature_scale * 1.2, 1e-15);
}

TEST(SampleCurve, OutOfRangeIsAConfigError) {
  auto gt = flat_truth(3, 0.0, 0.1);
  Rng rng{1};
  EXPECT_THROW(sample_location_day_curve(gt, 3, 0, rng), ConfigError);
  EXPECT_THROW(sample_location_day_curve(gt, 0, 7, rng), ConfigError);
}

TEST(SampleCurve, ReproducibleAndNormal) {
  auto gt = flat_truth(4, 0.5, 0.2);
  gt.day_effects[1] = 0.1;
  gt.location_effects[3] = 0.05;
  Rng a{99}, b{99};
  EXPECT_EQ(sample_location_day_curve(gt, 3, 1, a).c0, sample_location_day_curve(gt, 3, 1, b).c0);

  Rng rng{2024};
  std::vector<double> xs;
  for (int i = 0; i < 10000; ++i) xs.push_back(sample_location_day_curve(gt, 3, 1, rng).c0);
  const double d = oracle::ks_statistic(xs, [](double x) { return oracle::normal_cdf(x, 0.65, 0.2); });
  EXPECT_LT(d, oracle::ks_critical_01(xs.size()));
}

TEST(SimulateDay, ZeroIntensityIsEmpty) {
  Rng rng{3};
  EXPECT_TRUE(simulate_day({-50.0, 0.0, 0.0}, 900, 0.0, 1.0, rng).empty());
}

TEST(SimulateDay, ConstantRateMeanCount) {
  Rng rng{4};
  double total = 0.0;
  const int reps = 1000;
  for (int r = 0; r < reps; ++r) total += simulate_day({std::log(0.5), 0.0, 0.0}, 900, 0.0, 1.0, rng).size();
  EXPECT_NEAR(total / reps / 450.0, 1.0, 0.05);
}

TEST(SimulateDay, EventsInWindowSortedAtMinuteResolution) {
  Rng rng{5};
  for (int r = 0; r < 50; ++r) {
    const auto ev = simulate_day({-1.0, 0.4, -0.8}, 617, 0.3, 2.0, rng);
    for (std::size_t i = 0; i < ev.size(); ++i) {
      EXPECT_GE(ev[i].minute, 0.0);
      EXPECT_LT(ev[i].minute, 617.0);
      EXPECT_EQ(ev[i].minute, std::floor(ev[i].minute));
      EXPECT_GE(ev[i].quantity, 1);
      if (i) {
        EXPECT_LE(ev[i - 1].minute, ev[i].minute);
      }
    }
  }
}

TEST(SimulateDay, ExpectedItemsMatchIntegral) {
  const CurveCoefficients c{-1.2, 0.3, -0.5};
  const double expected = expected_arrivals(c, 600) * 1.8;
  Rng rng{6};
  double items = 0.0;
  const int reps = 2000;
  for (int r = 0; r < reps; ++r)
    for (const auto& e : simulate_day(c, 600, 0.0, 1.8, rng)) items += e.quantity;
  // Var(items per day) = lambda * E[q^2] for a compound Poisson day.
  const double lambda = expected_arrivals(c, 600);
  const double se = std::sqrt(lambda * (0.8 + 1.8 * 1.8) / reps);
  EXPECT_NEAR(items / reps, expected, 4.0 * se);
}

TEST(SimulateDay, PeakedDayHistogramFollowsIntensity) {
  const CurveCoefficients c{-0.5, 0.2, -1.5};
  const int minutes = 900, width = 30, reps = 10000;
  std::vector<double> hist(minutes / width, 0.0);
  Rng rng{7};
  for (int r = 0; r < reps; ++r)
    for (const auto& e : simulate_day(c, minutes, 0.0, 1.0, rng)) hist[static_cast<int>(e.minute) / width] += 1.0;
  std::vector<double> model(hist.size());
  for (std::size_t k = 0; k < hist.size(); ++k) {
    const double t = (k + 0.5) * width;
    model[k] = std::exp(log_intensity(c, (t - 450.0) / 450.0));
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / v.size();
  };
  const double mh = mean(hist), mm = mean(model);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t k = 0; k < hist.size(); ++k) {
    sxy += (hist[k] - mh) * (model[k] - mm);
    sxx += (hist[k] - mh) * (hist[k] - mh);
    syy += (model[k] - mm) * (model[k] - mm);
  }
  EXPECT_GT(sxy / std::sqrt(sxx * syy), 0.99);
}

TEST(SimulateDay, OverdispersionInflatesVariance) {
  const CurveCoefficients c{-1.0, 0.0, 0.0};
  auto variance_ratio = [&](double od) {
    Rng rng{8};
    std::vector<double> n;
    for (int r = 0; r < 3000; ++r) n.push_back(static_cast<double>(simulate_day(c, 300, od, 1.0, rng).size()));
    double m = 0, v = 0;
    for (double x : n) m += x;
    m /= n.size();
    for (double x : n) v += (x - m) * (x - m);
    return v / (n.size() - 1) / m;
  };
  EXPECT_NEAR(variance_ratio(0.0), 1.0, 0.1);
  EXPECT_GT(variance_ratio(0.2), 3.0);  // 1 + od * mean with mean ~110
}

TEST(GenerateDataset, FullyCensoredIsEmpty) {
  SimConfig cfg;
  cfg.n_locations = 1;
  cfg.n_days = 1;
  cfg.missing_day_fraction = 1.0;
  GroundTruth gt;
  gt.draw_effects(1, cfg.seed);
  EXPECT_TRUE(generate_dataset(cfg, gt).empty());
}

TEST(GenerateDataset, DeskScaleShapeAndDeterminism) {
  SimConfig cfg;  // 49 locations x 150 days
  GroundTruth gt;
  gt.draw_effects(cfg.n_locations, cfg.seed);
  const auto a = generate_dataset(cfg, gt);
  const auto b = generate_dataset(cfg, gt);
  ASSERT_EQ(a.size(), b.size());
  std::string sa, sb;
  for (const auto& r : a) append_transaction_row(sa, r);
  for (const auto& r : b) append_transaction_row(sb, r);
  EXPECT_EQ(sa, sb);

  EXPECT_GT(a.size(), 100000u);
  EXPECT_LT(a.size(), 10000000u);
  std::set<std::pair<int, int>> days;
  for (const auto& r : a) {
    days.insert({r.location_number, r.calendar_day()});
    EXPECT_EQ(r.date_time_placed.date.day_of_week(), r.day_of_week);
    EXPECT_GE(r.sales_as_minutes, 0.0);
    EXPECT_LT(r.sales_as_minutes, r.daily_minutes_open);
    EXPECT_GE(r.quantity, 1);
  }
  EXPECT_LE(days.size(), 49u * 150u);
}

TEST(GenerateDataset, MissingFractionIsExact) {
  SimConfig cfg = SimConfig::full_scale();
  GroundTruth gt;
  gt.draw_effects(cfg.n_locations, cfg.seed);
  const auto missing = missing_cells(cfg);
  std::size_t kept = 0;
  for (char m : missing) kept += m ? 0 : 1;
  EXPECT_EQ(kept, 8649u);
}

TEST(GenerateDataset, InvalidConfigListsEveryProblem) {
  SimConfig cfg;
  cfg.n_locations = 0;
  cfg.n_days = 0;
  cfg.missing_day_fraction = 2.0;
  GroundTruth gt;
  gt.sigma_d = -1;
  try {
    generate_dataset(cfg, gt);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_GE(e.problems().size(), 4u);
  }
}

// Law of large numbers on the generated c0 values: group means approach mu + z_d.
TEST(GenerateDataset, DayMeansConvergeToTruth) {
  GroundTruth gt;
  gt.draw_effects(10, 11);
  const int n = 1000;
  for (int d : {0, 4}) {
    Rng rng{derive_seed(12, d)};
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      // Location effects are held at their drawn values; average them out of the target.
      sum += sample_location_day_curve(gt, i % 10, d, rng).c0;
    }
    double loc_mean = 0.0;
    for (double z : gt.location_effects) loc_mean += z;
    loc_mean /= 10.0;
    EXPECT_NEAR(sum / n, gt.mu + gt.day_effects[d] + loc_mean, 3.0 * gt.sigma_eps / std::sqrt(n));
  }
}
