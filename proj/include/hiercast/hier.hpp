#pragma once

// Two-way crossed random-effects model over days-of-week and locations,
//
//   y_i    ~ N(mu + z_d[d_i] + z_j[j_i], s_eps)
//   z_d    = s_d * eta_d,   eta_d ~ N(0, 1)
//   z_j    = s_j * eta_j,   eta_j ~ N(0, 1)
//
// with flat priors on mu and on the three scales (bounded above by a large
// constant so the posterior is proper), and two MCMC backends:
//
//  * gibbs: exact conditionals. (mu, eta_d, eta_j) are drawn jointly from their
//    Gaussian conditional; each group scale is updated twice per sweep, once in
//    the non-centred parameterization (truncated normal) and once holding z fixed
//    (truncated inverse gamma); s_eps has an inverse-gamma conditional.
//  * metropolis_within_gibbs: adaptive random-walk updates of every coordinate,
//    plus joint moves along the two directions the likelihood cannot see
//    (mu vs. mean effect, scale vs. eta). Slower to mix; kept as a reference.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "hiercast/errors.hpp"
#include "hiercast/parallel.hpp"
#include "hiercast/random.hpp"
#include "hiercast/records.hpp"

namespace hiercast {

struct HierData {
  int n_days = kDaysPerWeek;
  int n_locations = 0;
  std::vector<int> day_index;       // [0, n_days)
  std::vector<int> location_index;  // [0, n_locations)
  std::vector<double> y;

  std::size_t size() const { return y.size(); }

  void push_back(int day, int location, double value) {
    day_index.push_back(day);
    location_index.push_back(location);
    y.push_back(value);
  }

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (n_days < 1) out.push_back("n_days must be >= 1");
    if (n_locations < 1) out.push_back("n_locations must be >= 1");
    if (day_index.size() != y.size() || location_index.size() != y.size())
      out.push_back("index vectors and y must have the same length");
    for (std::size_t i = 0; i < std::min({y.size(), day_index.size(), location_index.size()}); ++i) {
      if (day_index[i] < 0 || day_index[i] >= n_days || location_index[i] < 0 ||
          location_index[i] >= n_locations) {
        out.push_back("row " + std::to_string(i) + " has an index out of range");
        break;
      }
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (!std::isfinite(y[i])) {
        out.push_back("row " + std::to_string(i) + " has a non-finite y");
        break;
      }
    }
    return out;
  }
  void validate() const {
    if (auto p = problems(); !p.empty()) {
      std::string msg = "invalid model data:";
      for (const auto& s : p) msg += " " + s + ";";
      throw DataError(msg);
    }
  }
};

struct ParamState {
  double mu = 0.0;
  std::vector<double> eta_d;
  std::vector<double> eta_j;
  double s_d = 1.0;
  double s_j = 1.0;
  double s_eps = 1.0;
};

struct TransformedState {
  std::vector<double> z_d;
  std::vector<double> z_j;
  std::vector<double> yhat;
};

inline std::vector<double> day_effects(const ParamState& s) {
  std::vector<double> z(s.eta_d.size());
  for (std::size_t d = 0; d < z.size(); ++d) z[d] = s.s_d * s.eta_d[d];
  return z;
}

inline std::vector<double> location_effects(const ParamState& s) {
  std::vector<double> z(s.eta_j.size());
  for (std::size_t j = 0; j < z.size(); ++j) z[j] = s.s_j * s.eta_j[j];
  return z;
}

inline TransformedState transform(const ParamState& s, const HierData& data) {
  TransformedState t{day_effects(s), location_effects(s), std::vector<double>(data.size())};
  for (std::size_t i = 0; i < data.size(); ++i)
    t.yhat[i] = s.mu + t.z_d[data.day_index[i]] + t.z_j[data.location_index[i]];
  return t;
}

namespace detail {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

inline bool scales_admissible(const ParamState& s, double bound) {
  auto ok = [&](double v) { return std::isfinite(v) && v > 0.0 && v <= bound; };
  return ok(s.s_d) && ok(s.s_j) && ok(s.s_eps);
}

inline double eta_prior(const ParamState& s) {
  double acc = 0.0;
  for (double e : s.eta_d) acc += -kHalfLog2Pi - 0.5 * e * e;
  for (double e : s.eta_j) acc += -kHalfLog2Pi - 0.5 * e * e;
  return acc;
}

}  // namespace detail

// Unnormalised log density of the state given the data, summed row by row.
// Scales outside (0, scale_bound] give -inf.
inline double log_posterior(const ParamState& s, const HierData& data,
                            double scale_bound = std::numeric_limits<double>::infinity()) {
  if (!detail::scales_admissible(s, scale_bound)) return -std::numeric_limits<double>::infinity();
  double lp = detail::eta_prior(s);
  const double log_se = std::log(s.s_eps);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double yhat = s.mu + s.s_d * s.eta_d[data.day_index[i]] + s.s_j * s.eta_j[data.location_index[i]];
    const double r = (data.y[i] - yhat) / s.s_eps;
    lp += -detail::kHalfLog2Pi - log_se - 0.5 * r * r;
  }
  return lp;
}

enum class Backend { gibbs, metropolis_within_gibbs };

inline std::string_view name(Backend b) { return b == Backend::gibbs ? "gibbs" : "mwg"; }

inline std::optional<Backend> parse_backend(std::string_view s) {
  if (s == "gibbs") return Backend::gibbs;
  if (s == "mwg" || s == "metropolis-within-gibbs" || s == "metropolis_within_gibbs")
    return Backend::metropolis_within_gibbs;
  return std::nullopt;
}

struct SamplerConfig {
  Backend backend = Backend::gibbs;
  int chains = 4;
  int iterations = 4000;
  int warmup = -1;  // negative: half of the iterations
  std::uint64_t seed = 1;
  double scale_bound = 0.0;            // explicit upper bound on the scales, if > 0
  double scale_bound_factor = 1000.0;  // otherwise this multiple of sd(y)

  int resolved_warmup() const { return warmup < 0 ? iterations / 2 : warmup; }

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (chains < 1) out.push_back("chains must be >= 1");
    if (iterations < 2) out.push_back("iterations must be >= 2");
    if (warmup >= iterations) out.push_back("warmup must be smaller than iterations");
    if (!(scale_bound >= 0.0)) out.push_back("scale_bound must be >= 0");
    if (!(scale_bound_factor > 0.0)) out.push_back("scale_bound_factor must be > 0");
    return out;
  }
};

struct PosteriorDraws {
  int n_days = 0;
  int n_locations = 0;
  Backend backend = Backend::gibbs;
  int iterations = 0;
  int warmup = 0;
  std::uint64_t seed = 0;
  double scale_bound = 0.0;
  std::vector<std::vector<ParamState>> chains;  // retained draws per chain
  std::vector<std::vector<double>> lp;          // log posterior per retained draw
  std::vector<std::string> warnings;

  std::size_t n_chains() const { return chains.size(); }
  std::size_t draws_per_chain() const { return chains.empty() ? 0 : chains.front().size(); }
};

namespace detail {

inline double sample_sd(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// Sufficient statistics of the data per (day, location) cell.
struct CellStats {
  int D = 0;
  int J = 0;
  double N = 0.0;
  std::vector<double> n;     // D * J counts, row-major by day
  std::vector<double> mean;  // D * J cell means (0 for empty cells)
  double within_ss = 0.0;    // sum of squared deviations from cell means
  std::vector<double> n_d, n_j, sum_d, sum_j;
  double sum_y = 0.0;

  explicit CellStats(const HierData& data)
      : D(data.n_days), J(data.n_locations), N(static_cast<double>(data.size())),
        n(static_cast<std::size_t>(D) * J, 0.0), mean(n.size(), 0.0),
        n_d(D, 0.0), n_j(J, 0.0), sum_d(D, 0.0), sum_j(J, 0.0) {
    std::vector<double> sum(n.size(), 0.0);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const int d = data.day_index[i], j = data.location_index[i];
      const double y = data.y[i];
      n[cell(d, j)] += 1.0;
      sum[cell(d, j)] += y;
      n_d[d] += 1.0;
      n_j[j] += 1.0;
      sum_d[d] += y;
      sum_j[j] += y;
      sum_y += y;
    }
    for (std::size_t c = 0; c < n.size(); ++c) mean[c] = n[c] > 0 ? sum[c] / n[c] : 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double r = data.y[i] - mean[cell(data.day_index[i], data.location_index[i])];
      within_ss += r * r;
    }
  }

  std::size_t cell(int d, int j) const { return static_cast<std::size_t>(d) * J + j; }

  double ssr(const ParamState& s) const {
    double acc = within_ss;
    for (int d = 0; d < D; ++d) {
      const double base = s.mu + s.s_d * s.eta_d[d];
      for (int j = 0; j < J; ++j) {
        const std::size_t c = cell(d, j);
        if (n[c] == 0.0) continue;
        const double r = mean[c] - base - s.s_j * s.eta_j[j];
        acc += n[c] * r * r;
      }
    }
    return acc;
  }

  // Same value as log_posterior, from cell statistics.
  double log_posterior(const ParamState& s, double bound) const {
    if (!scales_admissible(s, bound)) return -std::numeric_limits<double>::infinity();
    return eta_prior(s) - N * (kHalfLog2Pi + std::log(s.s_eps)) - 0.5 * ssr(s) / (s.s_eps * s.s_eps);
  }
};

inline std::string dump_state(const ParamState& s, int chain, int iteration, double lp) {
  std::ostringstream os;
  os << "chain " << chain << " iteration " << iteration << ": lp=" << lp << " mu=" << s.mu
     << " s_d=" << s.s_d << " s_j=" << s.s_j << " s_eps=" << s.s_eps << " eta_d=[";
  for (std::size_t d = 0; d < s.eta_d.size(); ++d) os << (d ? "," : "") << s.eta_d[d];
  os << "] eta_j=[";
  for (std::size_t j = 0; j < s.eta_j.size(); ++j) os << (j ? "," : "") << s.eta_j[j];
  os << "]";
  return os.str();
}

struct ScaleLimits {
  double lower = std::numeric_limits<double>::min();
  double upper = std::numeric_limits<double>::infinity();
};

class GibbsKernel {
 public:
  GibbsKernel(const CellStats& stats, ScaleLimits limits)
      : st_(stats), lim_(limits), P_(1 + stats.D + stats.J), Q_(P_, P_), b_(P_), xi_(P_) {}

  void sweep(ParamState& s, Rng& rng) {
    draw_location_block(s, rng);
    update_day_scale(s, rng);
    update_location_scale(s, rng);
    update_noise_scale(s, rng);
  }

 private:
  // (mu, eta_d, eta_j) | scales, y is Gaussian with precision X'X / s_eps^2 + diag(0, I).
  void draw_location_block(ParamState& s, Rng& rng) {
    const int D = st_.D, J = st_.J;
    const double w = 1.0 / (s.s_eps * s.s_eps);
    Q_.setZero();
    Q_(0, 0) = st_.N * w;
    b_(0) = st_.sum_y * w;
    for (int d = 0; d < D; ++d) {
      Q_(0, 1 + d) = Q_(1 + d, 0) = s.s_d * st_.n_d[d] * w;
      Q_(1 + d, 1 + d) = 1.0 + s.s_d * s.s_d * st_.n_d[d] * w;
      b_(1 + d) = s.s_d * st_.sum_d[d] * w;
      for (int j = 0; j < J; ++j)
        Q_(1 + d, 1 + D + j) = Q_(1 + D + j, 1 + d) = s.s_d * s.s_j * st_.n[st_.cell(d, j)] * w;
    }
    for (int j = 0; j < J; ++j) {
      Q_(0, 1 + D + j) = Q_(1 + D + j, 0) = s.s_j * st_.n_j[j] * w;
      Q_(1 + D + j, 1 + D + j) = 1.0 + s.s_j * s.s_j * st_.n_j[j] * w;
      b_(1 + D + j) = s.s_j * st_.sum_j[j] * w;
    }
    // TODO: for fleets with thousands of locations, eliminate the diagonal
    // location block via its Schur complement instead of a dense factorization.
    for (int k = 0; k < P_; ++k) xi_(k) = std_normal(rng);
    llt_.compute(Q_);
    Eigen::VectorXd x;
    if (llt_.info() == Eigen::Success) {
      x = llt_.solve(b_) + llt_.matrixU().solve(xi_);
    } else {
      // Numerically singular: happens when zero-variance data pins the scales at
      // their limits. Sample in the eigenbasis with the spectrum floored.
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Q_);
      if (es.info() != Eigen::Success) throw InferenceError("location block precision could not be factorized");
      const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(1e-12 * es.eigenvalues().cwiseAbs().maxCoeff());
      const auto& V = es.eigenvectors();
      x = V * ((V.transpose() * b_).cwiseQuotient(lam) + xi_.cwiseQuotient(lam.cwiseSqrt()));
    }
    s.mu = x(0);
    for (int d = 0; d < D; ++d) s.eta_d[d] = x(1 + d);
    for (int j = 0; j < J; ++j) s.eta_j[j] = x(1 + D + j);
  }

  // Non-centred step: y - mu - z_j = s_d * eta_d + noise, a regression on s_d.
  // Centred step: z_d ~ N(0, s_d) with z_d held fixed gives an inverse-gamma s_d^2.
  void update_day_scale(ParamState& s, Rng& rng) {
    const int D = st_.D, J = st_.J;
    double num = 0.0, den = 0.0;
    for (int d = 0; d < D; ++d) {
      double resid = st_.sum_d[d] - st_.n_d[d] * s.mu;
      for (int j = 0; j < J; ++j) resid -= st_.n[st_.cell(d, j)] * s.s_j * s.eta_j[j];
      num += s.eta_d[d] * resid;
      den += st_.n_d[d] * s.eta_d[d] * s.eta_d[d];
    }
    if (den > 0.0) s.s_d = truncated_normal(rng, num / den, s.s_eps / std::sqrt(den), lim_.lower, lim_.upper);
    recentre(s.eta_d, s.s_d, rng);
  }

  void update_location_scale(ParamState& s, Rng& rng) {
    const int D = st_.D, J = st_.J;
    double num = 0.0, den = 0.0;
    for (int j = 0; j < J; ++j) {
      double resid = st_.sum_j[j] - st_.n_j[j] * s.mu;
      for (int d = 0; d < D; ++d) resid -= st_.n[st_.cell(d, j)] * s.s_d * s.eta_d[d];
      num += s.eta_j[j] * resid;
      den += st_.n_j[j] * s.eta_j[j] * s.eta_j[j];
    }
    if (den > 0.0) s.s_j = truncated_normal(rng, num / den, s.s_eps / std::sqrt(den), lim_.lower, lim_.upper);
    recentre(s.eta_j, s.s_j, rng);
  }

  void recentre(std::vector<double>& eta, double& scale, Rng& rng) const {
    if (eta.size() < 2) return;
    double ss = 0.0;
    for (double e : eta) ss += scale * scale * e * e;
    if (!(ss > 0.0)) return;
    const double shape = 0.5 * (static_cast<double>(eta.size()) - 1.0);
    const double v = upper_truncated_inverse_gamma(rng, shape, 0.5 * ss, lim_.upper * lim_.upper);
    const double next = std::max(std::sqrt(v), lim_.lower);
    for (double& e : eta) e *= scale / next;
    scale = next;
  }

  void update_noise_scale(ParamState& s, Rng& rng) const {
    const double ssr = st_.ssr(s);
    const double shape = 0.5 * (st_.N - 1.0);
    const double v = upper_truncated_inverse_gamma(rng, shape, 0.5 * ssr, lim_.upper * lim_.upper);
    s.s_eps = std::max(std::sqrt(v), lim_.lower);
  }

  const CellStats& st_;
  ScaleLimits lim_;
  int P_;
  Eigen::MatrixXd Q_;
  Eigen::VectorXd b_;
  Eigen::VectorXd xi_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

class MetropolisKernel {
 public:
  MetropolisKernel(const CellStats& stats, ScaleLimits limits, double data_sd)
      : st_(stats), lim_(limits) {
    const double sd = data_sd > 0 ? data_sd : 1.0;
    const int n_moves = 1 + st_.D + st_.J + 3 + 4;
    log_step_.assign(n_moves, 0.0);
    log_step_[0] = std::log(0.5 * sd / std::sqrt(std::max(st_.N, 1.0)));
    for (int k = 1; k < n_moves; ++k) log_step_[k] = std::log(0.5);
    accepted_.assign(n_moves, 0);
    tried_.assign(n_moves, 0);
  }

  double sweep(ParamState& s, double lp, Rng& rng) {
    const int D = st_.D, J = st_.J;
    int m = 0;
    lp = propose(s, lp, rng, m++, [](ParamState& p, double step) { p.mu += step; });
    for (int d = 0; d < D; ++d)
      lp = propose(s, lp, rng, m++, [d](ParamState& p, double step) { p.eta_d[d] += step; });
    for (int j = 0; j < J; ++j)
      lp = propose(s, lp, rng, m++, [j](ParamState& p, double step) { p.eta_j[j] += step; });

    // Log-scale random walks. Flat prior on the scale contributes +log s in log coordinates.
    auto log_scale = [&](double ParamState::*field) {
      return [field](ParamState& p, double step) {
        p.*field *= std::exp(step);
        return step;
      };
    };
    lp = propose_with_jacobian(s, lp, rng, m++, log_scale(&ParamState::s_d));
    lp = propose_with_jacobian(s, lp, rng, m++, log_scale(&ParamState::s_j));
    lp = propose_with_jacobian(s, lp, rng, m++, log_scale(&ParamState::s_eps));

    // mu + z unchanged: shift mu against the mean of one set of effects.
    lp = propose(s, lp, rng, m++, [](ParamState& p, double step) {
      p.mu += step;
      for (double& e : p.eta_d) e -= step / p.s_d;
    });
    lp = propose(s, lp, rng, m++, [](ParamState& p, double step) {
      p.mu += step;
      for (double& e : p.eta_j) e -= step / p.s_j;
    });
    // z unchanged: rescale s against eta. Jacobian (1 - n_levels) * step in log coordinates.
    lp = propose_with_jacobian(s, lp, rng, m++, [](ParamState& p, double step) {
      p.s_d *= std::exp(step);
      for (double& e : p.eta_d) e *= std::exp(-step);
      return (1.0 - static_cast<double>(p.eta_d.size())) * step;
    });
    lp = propose_with_jacobian(s, lp, rng, m++, [](ParamState& p, double step) {
      p.s_j *= std::exp(step);
      for (double& e : p.eta_j) e *= std::exp(-step);
      return (1.0 - static_cast<double>(p.eta_j.size())) * step;
    });
    return lp;
  }

  // Robbins-Monro nudge of every proposal scale toward ~44% acceptance.
  void adapt(int batch) {
    const double gain = std::min(0.5, 1.0 / std::sqrt(static_cast<double>(batch)));
    for (std::size_t k = 0; k < log_step_.size(); ++k) {
      if (tried_[k] == 0) continue;
      const double rate = static_cast<double>(accepted_[k]) / tried_[k];
      log_step_[k] += gain * (rate - 0.44);
      accepted_[k] = tried_[k] = 0;
    }
  }

 private:
  template <class Move>
  double propose(ParamState& s, double lp, Rng& rng, int m, Move&& move) {
    return propose_with_jacobian(s, lp, rng, m, [&](ParamState& p, double step) {
      move(p, step);
      return 0.0;
    });
  }

  // `move` applies the step and returns the log-Jacobian correction of the proposal.
  template <class Move>
  double propose_with_jacobian(ParamState& s, double lp, Rng& rng, int m, Move&& move) {
    ParamState next = s;
    const double step = std::exp(log_step_[m]) * std_normal(rng);
    const double log_jac = move(next, step);
    const double lp_next = st_.log_posterior(next, lim_.upper);
    ++tried_[m];
    if (std::isfinite(lp_next) && std::log(uniform_open(rng)) < lp_next - lp + log_jac) {
      s = std::move(next);
      ++accepted_[m];
      return lp_next;
    }
    return lp;
  }

  const CellStats& st_;
  ScaleLimits lim_;
  std::vector<double> log_step_;
  std::vector<long> accepted_;
  std::vector<long> tried_;
};

inline ParamState initial_state(const HierData& data, double data_sd, Rng& rng) {
  double mean = 0.0;
  for (double y : data.y) mean += y;
  mean /= static_cast<double>(std::max<std::size_t>(data.size(), 1));
  const double sd = data_sd > 0 ? data_sd : 1.0;
  ParamState s;
  s.mu = mean + 0.5 * sd * std_normal(rng);
  s.eta_d.resize(data.n_days);
  s.eta_j.resize(data.n_locations);
  for (double& e : s.eta_d) e = std_normal(rng);
  for (double& e : s.eta_j) e = std_normal(rng);
  s.s_d = 0.5 * sd * std::exp(0.5 * std_normal(rng));
  s.s_j = 0.5 * sd * std::exp(0.5 * std_normal(rng));
  s.s_eps = 0.5 * sd * std::exp(0.5 * std_normal(rng));
  return s;
}

}  // namespace detail

// Runs cfg.chains independent chains (in parallel), each from its own seeded
// stream, and keeps the post-warmup draws. Identical (data, cfg) give identical draws.
inline PosteriorDraws run_mcmc(const HierData& data, const SamplerConfig& cfg) {
  data.validate();
  if (auto p = cfg.problems(); !p.empty()) throw ConfigError(std::move(p));
  if (data.size() < 2) throw DataError("the model needs at least 2 observations");

  const double sd = detail::sample_sd(data.y);
  double mean_abs = 0.0;
  for (double y : data.y) mean_abs += std::abs(y);
  mean_abs /= static_cast<double>(data.size());

  PosteriorDraws out;
  out.n_days = data.n_days;
  out.n_locations = data.n_locations;
  out.backend = cfg.backend;
  out.iterations = cfg.iterations;
  out.warmup = cfg.resolved_warmup();
  out.seed = cfg.seed;

  detail::ScaleLimits limits;
  if (sd == 0.0) {
    out.warnings.push_back("zero-variance data: the posterior of s_eps is degenerate; scales floored at " +
                           format_number(1e-8 * std::max(1.0, mean_abs)));
    limits.lower = 1e-8 * std::max(1.0, mean_abs);
  }
  limits.upper = cfg.scale_bound > 0 ? cfg.scale_bound
                                     : cfg.scale_bound_factor * (sd > 0 ? sd : std::max(1.0, mean_abs));
  out.scale_bound = limits.upper;

  const detail::CellStats stats{data};
  const int retained = cfg.iterations - out.warmup;
  out.chains.assign(cfg.chains, {});
  out.lp.assign(cfg.chains, {});

  parallel_for(static_cast<std::size_t>(cfg.chains), [&](std::size_t c) {
    Rng rng{derive_seed(cfg.seed, 0x636861696eULL, c)};
    ParamState s = detail::initial_state(data, sd, rng);
    s.s_d = std::clamp(s.s_d, limits.lower, limits.upper);
    s.s_j = std::clamp(s.s_j, limits.lower, limits.upper);
    s.s_eps = std::clamp(s.s_eps, limits.lower, limits.upper);
    auto& draws = out.chains[c];
    auto& lps = out.lp[c];
    draws.reserve(retained);
    lps.reserve(retained);

    std::optional<detail::GibbsKernel> gibbs;
    std::optional<detail::MetropolisKernel> mwg;
    if (cfg.backend == Backend::gibbs) gibbs.emplace(stats, limits);
    else mwg.emplace(stats, limits, sd);

    double lp = stats.log_posterior(s, limits.upper);
    constexpr int kAdaptEvery = 50;
    for (int it = 0; it < cfg.iterations; ++it) {
      try {
        if (gibbs) {
          gibbs->sweep(s, rng);
          lp = stats.log_posterior(s, limits.upper);
        } else {
          lp = mwg->sweep(s, lp, rng);
          if (it < out.warmup && (it + 1) % kAdaptEvery == 0) mwg->adapt((it + 1) / kAdaptEvery);
        }
      } catch (const InferenceError& e) {
        throw InferenceError(std::string(e.what()) + "; " + detail::dump_state(s, static_cast<int>(c), it, lp));
      }
      if (!std::isfinite(lp))
        throw InferenceError("non-finite log posterior during sampling; " +
                             detail::dump_state(s, static_cast<int>(c), it, lp));
      if (it >= out.warmup) {
        draws.push_back(s);
        lps.push_back(lp);
      }
    }
  });
  return out;
}

}  // namespace hiercast
