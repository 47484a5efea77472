#pragma once

// Reference computations that share no code with the library: used to check
// its results from a different direction.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "hiercast/hier.hpp"

namespace oracle {

inline double normal_cdf(double x, double mean = 0.0, double sd = 1.0) {
  return 0.5 * std::erfc(-(x - mean) / (sd * std::numbers::sqrt2));
}

// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
template <class Cdf>
double ks_statistic(std::vector<double> xs, Cdf cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return d;
}

// Asymptotic one-sample KS critical value at alpha = 0.01.
inline double ks_critical_01(std::size_t n) { return 1.6276 / std::sqrt(static_cast<double>(n)); }

// Least squares on the raw monomial design [1, u, u^2] via the normal equations.
struct PolyFit {
  Eigen::Vector3d beta;       // monomial coefficients
  Eigen::VectorXd fitted;     // X beta
  Eigen::Vector3d gradient;   // X'(y - X beta)
};

inline PolyFit normal_equations_quadratic(const std::vector<double>& u, const std::vector<double>& y) {
  const auto n = static_cast<Eigen::Index>(u.size());
  Eigen::MatrixXd X(n, 3);
  Eigen::VectorXd Y(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    X(k, 0) = 1.0;
    X(k, 1) = u[k];
    X(k, 2) = u[k] * u[k];
    Y(k) = y[k];
  }
  const Eigen::Matrix3d XtX = X.transpose() * X;
  const Eigen::Vector3d Xty = X.transpose() * Y;
  PolyFit f;
  f.beta = XtX.fullPivLu().solve(Xty);
  f.fitted = X * f.beta;
  f.gradient = X.transpose() * (Y - f.fitted);
  return f;
}

// Row-by-row log posterior written from the density formulas directly.
inline double log_posterior(const hiercast::ParamState& s, const hiercast::HierData& data) {
  auto log_normal_pdf = [](double x, double m, double sd) {
    return std::log(std::exp(-0.5 * ((x - m) / sd) * ((x - m) / sd)) / (sd * std::sqrt(2.0 * std::numbers::pi)));
  };
  double lp = 0.0;
  for (double e : s.eta_d) lp += log_normal_pdf(e, 0.0, 1.0);
  for (double e : s.eta_j) lp += log_normal_pdf(e, 0.0, 1.0);
  for (std::size_t i = 0; i < data.y.size(); ++i) {
    const double z_d = s.eta_d[data.day_index[i]] * s.s_d;
    const double z_j = s.eta_j[data.location_index[i]] * s.s_j;
    lp += log_normal_pdf(data.y[i], z_d + z_j + s.mu, s.s_eps);
  }
  return lp;
}

// Posterior moments by deterministic quadrature. mu and the effects are Gaussian
// given the three scales and are integrated analytically:
//   y | scales ~ N(mu 1, S),  S = s_d^2 Zd Zd' + s_j^2 Zj Zj' + s_eps^2 I,
// and a flat prior on mu leaves
//   p(scales | y) ∝ |S|^-1/2 (1'S^-1 1)^-1/2 exp(-(y'S^-1 y - (1'S^-1 y)^2 / 1'S^-1 1) / 2),
//   E[mu | scales, y] = 1'S^-1 y / 1'S^-1 1.
// The scales (flat priors on (0, bound]) are integrated on a log-spaced grid.
struct GridMoments {
  double mu = 0.0;
  double s_d = 0.0, s_j = 0.0, s_eps = 0.0;
};

inline GridMoments grid_posterior(const hiercast::HierData& data, double bound, int points = 96,
                                  double lower_fraction = 1e-5) {
  const auto n = static_cast<Eigen::Index>(data.y.size());
  Eigen::MatrixXd Kd = Eigen::MatrixXd::Zero(n, n), Kj = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) {
      Kd(a, b) = data.day_index[a] == data.day_index[b] ? 1.0 : 0.0;
      Kj(a, b) = data.location_index[a] == data.location_index[b] ? 1.0 : 0.0;
    }
  }
  Eigen::VectorXd y(n), one = Eigen::VectorXd::Ones(n);
  for (Eigen::Index a = 0; a < n; ++a) y(a) = data.y[a];

  // Midpoint rule in log s; the flat prior in s contributes the Jacobian s.
  const double lo = std::log(lower_fraction * bound), hi = std::log(bound);
  const double h = (hi - lo) / points;
  std::vector<double> s(points);
  for (int k = 0; k < points; ++k) s[k] = std::exp(lo + (k + 0.5) * h);

  std::vector<double> logw;
  std::vector<GridMoments> at;
  logw.reserve(static_cast<std::size_t>(points) * points * points);
  for (int a = 0; a < points; ++a) {
    for (int b = 0; b < points; ++b) {
      for (int c = 0; c < points; ++c) {
        const Eigen::MatrixXd S = s[a] * s[a] * Kd + s[b] * s[b] * Kj +
                                  s[c] * s[c] * Eigen::MatrixXd::Identity(n, n);
        const Eigen::LLT<Eigen::MatrixXd> llt(S);
        const Eigen::VectorXd Si1 = llt.solve(one), Siy = llt.solve(y);
        const double q11 = one.dot(Si1), q1y = one.dot(Siy), qyy = y.dot(Siy);
        double logdet = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) logdet += 2.0 * std::log(llt.matrixL()(k, k));
        const double lw = -0.5 * logdet - 0.5 * std::log(q11) - 0.5 * (qyy - q1y * q1y / q11) +
                          std::log(s[a]) + std::log(s[b]) + std::log(s[c]);
        logw.push_back(lw);
        at.push_back({q1y / q11, s[a], s[b], s[c]});
      }
    }
  }
  const double m = *std::max_element(logw.begin(), logw.end());
  GridMoments out;
  double total = 0.0;
  for (std::size_t i = 0; i < logw.size(); ++i) {
    const double w = std::exp(logw[i] - m);
    total += w;
    out.mu += w * at[i].mu;
    out.s_d += w * at[i].s_d;
    out.s_j += w * at[i].s_j;
    out.s_eps += w * at[i].s_eps;
  }
  out.mu /= total;
  out.s_d /= total;
  out.s_j /= total;
  out.s_eps /= total;
  return out;
}

// Half a unit in the second significant figure of `reference`.
inline double two_sig_fig_tolerance(double reference) {
  const double e = std::floor(std::log10(std::abs(reference)));
  return 0.5 * std::pow(10.0, e - 1.0);
}

}  // namespace oracle
