#pragma once

// Posterior summaries and convergence diagnostics (split R-hat, bulk ESS) over
// the draws of run_mcmc, plus columnar draw output.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "hiercast/errors.hpp"
#include "hiercast/hier.hpp"
#include "hiercast/records.hpp"

namespace hiercast {

// mu, s_d, s_j, s_eps, z_d[1..D], z_j[1..J].
inline std::vector<std::string> parameter_names(int n_days, int n_locations) {
  std::vector<std::string> names{"mu", "s_d", "s_j", "s_eps"};
  for (int d = 0; d < n_days; ++d) names.push_back("z_d[" + std::to_string(d + 1) + "]");
  for (int j = 0; j < n_locations; ++j) names.push_back("z_j[" + std::to_string(j + 1) + "]");
  return names;
}

inline std::vector<double> parameter_values(const ParamState& s) {
  std::vector<double> v{s.mu, s.s_d, s.s_j, s.s_eps};
  for (double e : s.eta_d) v.push_back(s.s_d * e);
  for (double e : s.eta_j) v.push_back(s.s_j * e);
  return v;
}

// Draws rearranged as [parameter][chain][draw].
using ChainTraces = std::vector<std::vector<double>>;

inline std::vector<ChainTraces> parameter_traces(const PosteriorDraws& draws) {
  const std::size_t P = 4 + draws.n_days + draws.n_locations;
  std::vector<ChainTraces> out(P, ChainTraces(draws.n_chains()));
  for (std::size_t c = 0; c < draws.n_chains(); ++c) {
    for (auto& t : out) t[c].reserve(draws.chains[c].size());
    for (const auto& s : draws.chains[c]) {
      const auto v = parameter_values(s);
      for (std::size_t p = 0; p < P; ++p) out[p][c].push_back(v[p]);
    }
  }
  return out;
}

namespace detail {

inline double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double var_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

// Each chain cut into two halves (the middle draw of an odd chain is dropped).
inline ChainTraces split_chains(const ChainTraces& chains) {
  ChainTraces out;
  for (const auto& c : chains) {
    const std::size_t half = c.size() / 2;
    out.emplace_back(c.begin(), c.begin() + half);
    out.emplace_back(c.end() - half, c.end());
  }
  return out;
}

inline std::vector<double> pooled(const ChainTraces& chains) {
  std::vector<double> all;
  for (const auto& c : chains) all.insert(all.end(), c.begin(), c.end());
  return all;
}

// Type-7 quantile of sorted values.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// Replaces every draw by the normal score of its pooled rank (ties share the average rank).
inline ChainTraces rank_normalize(const ChainTraces& chains) {
  const auto all = pooled(chains);
  const std::size_t S = all.size();
  std::vector<std::size_t> order(S);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return all[a] < all[b]; });
  std::vector<double> rank(S);
  for (std::size_t i = 0; i < S;) {
    std::size_t k = i;
    while (k + 1 < S && all[order[k + 1]] == all[order[i]]) ++k;
    const double r = 0.5 * static_cast<double>(i + k) + 1.0;
    for (std::size_t m = i; m <= k; ++m) rank[order[m]] = r;
    i = k + 1;
  }
  const boost::math::normal_distribution<double> normal;
  ChainTraces out;
  std::size_t pos = 0;
  for (const auto& c : chains) {
    std::vector<double> z(c.size());
    for (auto& v : z) v = boost::math::quantile(normal, (rank[pos++] - 0.375) / (static_cast<double>(S) + 0.25));
    out.push_back(std::move(z));
  }
  return out;
}

}  // namespace detail

// Potential scale reduction over half-chains. NaN when every half-chain is constant.
inline double split_rhat(const ChainTraces& chains) {
  const auto halves = detail::split_chains(chains);
  const std::size_t n = halves.empty() ? 0 : halves.front().size();
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> means, vars;
  for (const auto& h : halves) {
    means.push_back(detail::mean_of(h));
    vars.push_back(detail::var_of(h));
  }
  const double W = detail::mean_of(vars);
  if (!(W > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  const double B_over_n = detail::var_of(means);
  const double var_plus = (static_cast<double>(n) - 1.0) / static_cast<double>(n) * W + B_over_n;
  return std::sqrt(var_plus / W);
}

// Effective sample size of the given chains, using the multi-chain autocorrelation
// estimate truncated by Geyer's initial monotone sequence.
inline double effective_sample_size(const ChainTraces& chains) {
  const std::size_t M = chains.size();
  const std::size_t n = M ? chains.front().size() : 0;
  if (M == 0 || n < 4) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> means(M), acov0(M);
  for (std::size_t m = 0; m < M; ++m) {
    means[m] = detail::mean_of(chains[m]);
    double ss = 0.0;
    for (double x : chains[m]) ss += (x - means[m]) * (x - means[m]);
    acov0[m] = ss / static_cast<double>(n);
  }
  const double mean_var = detail::mean_of(acov0) * static_cast<double>(n) / (static_cast<double>(n) - 1.0);
  double var_plus = mean_var * (static_cast<double>(n) - 1.0) / static_cast<double>(n);
  if (M > 1) var_plus += detail::var_of(means);
  if (!(var_plus > 0.0)) return std::numeric_limits<double>::quiet_NaN();

  // Autocovariances are computed lazily: well-mixing chains stop after a few lags.
  auto rho = [&](std::size_t t) {
    double acc = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
      const auto& c = chains[m];
      double s = 0.0;
      for (std::size_t i = 0; i + t < n; ++i) s += (c[i] - means[m]) * (c[i + t] - means[m]);
      acc += s / static_cast<double>(n);
    }
    return 1.0 - (mean_var - acc / static_cast<double>(M)) / var_plus;
  };

  std::vector<double> r(n, 0.0);
  r[0] = 1.0;
  double even = 1.0, odd = rho(1);
  r[1] = odd;
  std::size_t t = 1;
  while (t + 4 < n && even + odd > 0.0) {
    even = rho(t + 1);
    odd = rho(t + 2);
    if (even + odd >= 0.0) {
      r[t + 1] = even;
      r[t + 2] = odd;
    }
    t += 2;
  }
  const std::size_t max_t = t;
  if (r[max_t] > 0.0 && max_t + 1 < n) r[max_t + 1] = r[max_t];
  for (std::size_t k = 1; k + 3 <= max_t; k += 2) {
    if (r[k + 1] + r[k + 2] > r[k - 1] + r[k]) {
      r[k + 1] = 0.5 * (r[k - 1] + r[k]);
      r[k + 2] = r[k + 1];
    }
  }
  const double S = static_cast<double>(M * n);
  double tau = -1.0;
  for (std::size_t k = 0; k <= max_t; ++k) tau += 2.0 * r[k];
  if (max_t + 1 < n) tau += r[max_t + 1];
  tau = std::max(tau, 1.0 / std::log10(S));
  return S / tau;
}

// Bulk ESS: rank-normalized split chains.
inline double bulk_ess(const ChainTraces& chains) {
  const auto halves = detail::split_chains(chains);
  const auto all = detail::pooled(halves);
  if (all.empty() || std::all_of(all.begin(), all.end(), [&](double v) { return v == all.front(); }))
    return std::numeric_limits<double>::quiet_NaN();
  return effective_sample_size(detail::rank_normalize(halves));
}

struct ParameterSummary {
  std::string name;
  double mean = 0, se_mean = 0, sd = 0;
  double q2_5 = 0, q25 = 0, q50 = 0, q75 = 0, q97_5 = 0;
  double n_eff = 0;
  double rhat = 0;
};

inline ParameterSummary summarize_trace(std::string name, const ChainTraces& chains) {
  ParameterSummary s;
  s.name = std::move(name);
  auto all = detail::pooled(chains);
  s.mean = detail::mean_of(all);
  s.sd = all.size() > 1 ? std::sqrt(detail::var_of(all)) : 0.0;
  std::sort(all.begin(), all.end());
  s.q2_5 = detail::quantile_sorted(all, 0.025);
  s.q25 = detail::quantile_sorted(all, 0.25);
  s.q50 = detail::quantile_sorted(all, 0.5);
  s.q75 = detail::quantile_sorted(all, 0.75);
  s.q97_5 = detail::quantile_sorted(all, 0.975);
  s.n_eff = bulk_ess(chains);
  s.se_mean = std::isfinite(s.n_eff) && s.n_eff > 0 ? s.sd / std::sqrt(s.n_eff) : 0.0;
  s.rhat = split_rhat(chains);
  return s;
}

// 4 + D + J rows, in parameter_names order.
inline std::vector<ParameterSummary> posterior_summary(const PosteriorDraws& draws) {
  if (draws.draws_per_chain() == 0) throw InferenceError("no retained draws to summarize");
  const auto names = parameter_names(draws.n_days, draws.n_locations);
  const auto traces = parameter_traces(draws);
  std::vector<ParameterSummary> out;
  out.reserve(names.size());
  for (std::size_t p = 0; p < names.size(); ++p) out.push_back(summarize_trace(names[p], traces[p]));
  return out;
}

inline const ParameterSummary& find_parameter(const std::vector<ParameterSummary>& summary, std::string_view name) {
  for (const auto& s : summary)
    if (s.name == name) return s;
  throw DataError("summary has no parameter named " + std::string(name));
}

struct DiagnosticsReport {
  double rhat_threshold = 1.01;
  std::vector<ParameterSummary> parameters;
  ParameterSummary lp;  // lp__ trace
  std::vector<std::string> flagged;  // R-hat above threshold or undefined
  std::vector<std::string> warnings;

  bool converged() const { return flagged.empty(); }
  double max_rhat() const {
    double m = 0.0;
    for (const auto& p : parameters) m = std::max(m, std::isnan(p.rhat) ? std::numeric_limits<double>::infinity() : p.rhat);
    return m;
  }
};

inline DiagnosticsReport diagnostics(const PosteriorDraws& draws, double rhat_threshold = 1.01) {
  if (draws.n_chains() < 2) throw InferenceError("R-hat needs at least 2 chains; got " + std::to_string(draws.n_chains()));
  DiagnosticsReport r;
  r.rhat_threshold = rhat_threshold;
  r.parameters = posterior_summary(draws);
  r.lp = summarize_trace("lp__", draws.lp);
  r.warnings = draws.warnings;
  for (const auto& p : r.parameters)
    if (!(p.rhat < rhat_threshold)) r.flagged.push_back(p.name);
  return r;
}

// ---- files ----

inline constexpr std::string_view kSummaryHeader = "parameter,mean,se_mean,sd,2.5%,25%,50%,75%,97.5%,n_eff,Rhat";

inline void write_summary_csv(std::ostream& os, const std::vector<ParameterSummary>& rows) {
  std::string buf;
  buf += kSummaryHeader;
  buf += '\n';
  for (const auto& s : rows) {
    buf += s.name;
    for (double v : {s.mean, s.se_mean, s.sd, s.q2_5, s.q25, s.q50, s.q75, s.q97_5, s.n_eff, s.rhat}) {
      buf += ',';
      append_number(buf, v);
    }
    buf += '\n';
  }
  os << buf;
}

inline std::vector<ParameterSummary> read_summary_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || (line.size() && line.back() == '\r' ? line.substr(0, line.size() - 1) : line) != kSummaryHeader)
    throw DataError("summary file has an unexpected header");
  std::vector<ParameterSummary> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 11) throw DataError("summary row is malformed: " + line);
    ParameterSummary s;
    s.name = f[0];
    double* fields[] = {&s.mean, &s.se_mean, &s.sd, &s.q2_5, &s.q25, &s.q50, &s.q75, &s.q97_5, &s.n_eff, &s.rhat};
    for (int k = 0; k < 10; ++k) {
      const auto v = parse_number<double>(f[k + 1]);
      if (v) *fields[k] = *v;
      else if (f[k + 1] == "nan" || f[k + 1] == "-nan") *fields[k] = std::numeric_limits<double>::quiet_NaN();
      else if (f[k + 1] == "inf") *fields[k] = std::numeric_limits<double>::infinity();
      else throw DataError("summary row is malformed: " + line);
    }
    out.push_back(std::move(s));
  }
  return out;
}

// One row per retained draw; columns: chain, draw, lp__, mu, scales, eta's, z's.
inline void write_draws_csv(std::ostream& os, const PosteriorDraws& draws) {
  std::string buf = "chain,draw,lp__,mu,s_d,s_j,s_eps";
  for (int d = 0; d < draws.n_days; ++d) buf += ",eta_d[" + std::to_string(d + 1) + "]";
  for (int j = 0; j < draws.n_locations; ++j) buf += ",eta_j[" + std::to_string(j + 1) + "]";
  for (int d = 0; d < draws.n_days; ++d) buf += ",z_d[" + std::to_string(d + 1) + "]";
  for (int j = 0; j < draws.n_locations; ++j) buf += ",z_j[" + std::to_string(j + 1) + "]";
  buf += '\n';
  for (std::size_t c = 0; c < draws.n_chains(); ++c) {
    for (std::size_t i = 0; i < draws.chains[c].size(); ++i) {
      const auto& s = draws.chains[c][i];
      append_number(buf, static_cast<int>(c + 1));
      buf += ',';
      append_number(buf, static_cast<int>(i + 1));
      for (double v : {draws.lp[c][i], s.mu, s.s_d, s.s_j, s.s_eps}) {
        buf += ',';
        append_number(buf, v);
      }
      for (double v : s.eta_d) (buf += ','), append_number(buf, v);
      for (double v : s.eta_j) (buf += ','), append_number(buf, v);
      for (double v : s.eta_d) (buf += ','), append_number(buf, s.s_d * v);
      for (double v : s.eta_j) (buf += ','), append_number(buf, s.s_j * v);
      buf += '\n';
    }
  }
  os << buf;
}

// Model input as "day_index,location_index,y" rows (0-based indices).
inline void write_hier_data_csv(std::ostream& os, const HierData& data) {
  std::string buf = "day_index,location_index,y\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    append_number(buf, data.day_index[i]);
    buf += ',';
    append_number(buf, data.location_index[i]);
    buf += ',';
    append_number(buf, data.y[i]);
    buf += '\n';
  }
  os << buf;
}

// Level counts are the largest index + 1 unless given.
inline HierData read_hier_data_csv(std::istream& in, int n_days = kDaysPerWeek, int n_locations = 0) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("model data file is empty");
  HierData data;
  std::size_t row = 0;
  int max_j = -1;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++row;
    const auto f = split_csv_line(line);
    const auto d = f.size() == 3 ? parse_number<int>(f[0]) : std::nullopt;
    const auto j = f.size() == 3 ? parse_number<int>(f[1]) : std::nullopt;
    const auto y = f.size() == 3 ? parse_number<double>(f[2]) : std::nullopt;
    if (!d || !j || !y) throw DataError("model data row " + std::to_string(row) + " is malformed");
    data.push_back(*d, *j, *y);
    max_j = std::max(max_j, *j);
  }
  data.n_days = n_days;
  data.n_locations = n_locations > 0 ? n_locations : max_j + 1;
  data.validate();
  return data;
}

}  // namespace hiercast
