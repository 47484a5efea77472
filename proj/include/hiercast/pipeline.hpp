#pragma once

// File-backed pipeline: generate -> bin -> fit -> infer -> eval, each stage
// reading the previous stage's files from the output directory and recording
// its inputs and outputs (with content digests) in manifest.json.

#include <array>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hiercast/diagnostics.hpp"
#include "hiercast/errors.hpp"
#include "hiercast/eval.hpp"
#include "hiercast/hier.hpp"
#include "hiercast/ingest.hpp"
#include "hiercast/localfit.hpp"
#include "hiercast/parallel.hpp"
#include "hiercast/random.hpp"
#include "hiercast/synthgen.hpp"

namespace hiercast {

namespace fs = std::filesystem;
using Json = nlohmann::json;

inline constexpr int kManifestFormat = 1;

// FNV-1a, 64 bit.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Per-class overrides of the shared sampler settings.
struct SamplerOverride {
  std::optional<Backend> backend;
  std::optional<int> chains, iterations, warmup;
  std::optional<double> scale_bound, scale_bound_factor;
};

struct PipelineConfig {
  std::uint64_t seed = 20220801;  // master seed; stage seeds derive from it unless set
  std::optional<std::uint64_t> sim_seed, sampler_seed, split_seed;
  std::optional<std::string> input;  // external transactions CSV; synthetic data when absent
  SimConfig sim;
  GroundTruth truth;
  int bin_width = kDefaultBinWidth;
  FitOptions fit;
  SamplerConfig sampler;
  std::array<SamplerOverride, 3> sampler_class;
  Aggregation aggregation = Aggregation::group;
  std::string out = "hiercast_out";

  std::uint64_t resolved_sim_seed() const { return sim_seed.value_or(derive_seed(seed, 1)); }
  std::uint64_t resolved_sampler_seed() const { return sampler_seed.value_or(derive_seed(seed, 2)); }
  std::uint64_t resolved_split_seed() const { return split_seed.value_or(derive_seed(seed, 3)); }

  SamplerConfig sampler_for(Coefficient c) const {
    const auto k = static_cast<std::size_t>(c);
    SamplerConfig s = sampler;
    const auto& o = sampler_class[k];
    if (o.backend) s.backend = *o.backend;
    if (o.chains) s.chains = *o.chains;
    if (o.iterations) s.iterations = *o.iterations;
    if (o.warmup) s.warmup = *o.warmup;
    if (o.scale_bound) s.scale_bound = *o.scale_bound;
    if (o.scale_bound_factor) s.scale_bound_factor = *o.scale_bound_factor;
    s.seed = derive_seed(resolved_sampler_seed(), k);
    return s;
  }

  SimConfig resolved_sim() const {
    SimConfig s = sim;
    s.seed = resolved_sim_seed();
    return s;
  }

  GroundTruth resolved_truth() const {
    GroundTruth t = truth;
    t.draw_effects(static_cast<std::size_t>(std::max(sim.n_locations, 1)), resolved_sim_seed());
    return t;
  }

  std::vector<std::string> problems() const {
    std::vector<std::string> out_problems;
    auto add = [&](const std::string& prefix, const std::vector<std::string>& ps) {
      for (const auto& p : ps) out_problems.push_back(prefix + p);
    };
    const auto gt = resolved_truth();
    add("truth: ", gt.problems());
    if (!input) add("sim: ", resolved_sim().problems(gt));
    if (bin_width < 1 || bin_width > 1440) out_problems.push_back("bin_width must be in [1, 1440]");
    if (!(fit.log_offset >= 0.0)) out_problems.push_back("fit.log_offset must be >= 0");
    if (fit.min_events < 0) out_problems.push_back("fit.min_events must be >= 0");
    for (auto c : kCoefficients) {
      const auto s = sampler_for(c);
      auto ps = s.problems();
      if (s.chains < 2) ps.push_back("chains must be >= 2 for convergence diagnostics");
      add("sampler (" + std::string(name(c)) + "): ", ps);
    }
    if (out.empty()) out_problems.push_back("out must name a directory");
    if (input && !fs::exists(*input)) out_problems.push_back("input file does not exist: " + *input);
    return out_problems;
  }
};

// Small, fast default: 49 locations over 150 days.
inline PipelineConfig desk_config() { return {}; }

inline PipelineConfig full_config() {
  PipelineConfig c;
  c.sim = SimConfig::full_scale();
  return c;
}

// ---- JSON <-> config ----

namespace detail {

// Reads known keys of one JSON object, collecting every problem instead of stopping at the first.
class JsonFields {
 public:
  JsonFields(const Json& j, std::string where, std::vector<std::string>& problems)
      : j_(j), where_(std::move(where)), problems_(problems) {
    if (!j_.is_object()) problems_.push_back(where_ + ": expected an object");
  }
  ~JsonFields() {
    if (!j_.is_object()) return;
    for (const auto& [k, v] : j_.items())
      if (!seen_.contains(k)) problems_.push_back(where_ + ": unknown key '" + k + "'");
  }

  const Json* find(const std::string& key) {
    seen_.insert(key);
    if (!j_.is_object()) return nullptr;
    const auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  void get(const std::string& key, double& dst) {
    if (const auto* v = find(key)) {
      if (v->is_number()) dst = v->get<double>();
      else bad(key, "a number");
    }
  }
  void get(const std::string& key, int& dst) {
    if (const auto* v = find(key)) {
      if (v->is_number_integer()) dst = v->get<int>();
      else bad(key, "an integer");
    }
  }
  void get(const std::string& key, std::uint64_t& dst) {
    if (const auto* v = find(key)) {
      if (v->is_number_unsigned()) dst = v->get<std::uint64_t>();
      else bad(key, "a non-negative integer");
    }
  }
  void get(const std::string& key, std::string& dst) {
    if (const auto* v = find(key)) {
      if (v->is_string()) dst = v->get<std::string>();
      else bad(key, "a string");
    }
  }
  template <class T>
  void get(const std::string& key, std::optional<T>& dst) {
    if (find(key)) {
      T tmp{};
      get(key, tmp);
      dst = tmp;
    }
  }
  void bad(const std::string& key, const std::string& what) {
    problems_.push_back(where_ + "." + key + ": expected " + what);
  }

 private:
  const Json& j_;
  std::string where_;
  std::vector<std::string>& problems_;
  std::set<std::string> seen_;
};

inline void read_backend(JsonFields& f, const std::string& key, std::optional<Backend>& dst,
                         std::vector<std::string>& problems, const std::string& where) {
  std::optional<std::string> s;
  f.get(key, s);
  if (!s) return;
  if (auto b = parse_backend(*s)) dst = *b;
  else problems.push_back(where + "." + key + ": unknown backend '" + *s + "' (gibbs or mwg)");
}

}  // namespace detail

inline Json to_json(const PipelineConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["sim_seed"] = c.resolved_sim_seed();
  j["sampler_seed"] = c.resolved_sampler_seed();
  j["split_seed"] = c.resolved_split_seed();
  j["input"] = c.input ? Json(*c.input) : Json(nullptr);
  j["sim"] = {{"n_locations", c.sim.n_locations},
              {"n_days", c.sim.n_days},
              {"missing_day_fraction", c.sim.missing_day_fraction},
              {"start_date", c.sim.start_date},
              {"opening_minute", c.sim.opening_minute}};
  j["truth"] = {{"mu", c.truth.mu},
                {"sigma_d", c.truth.sigma_d},
                {"sigma_j", c.truth.sigma_j},
                {"sigma_eps", c.truth.sigma_eps},
                {"trend_scale", c.truth.trend_scale},
                {"curvature_scale", c.truth.curvature_scale},
                {"minutes_open", c.truth.minutes_open},
                {"overdispersion", c.truth.overdispersion},
                {"mean_quantity", c.truth.mean_quantity}};
  j["bin_width"] = c.bin_width;
  j["fit"] = {{"log_offset", c.fit.log_offset},
              {"centering", c.fit.centering == Centering::midpoint ? "midpoint" : "left_edge"},
              {"min_events", c.fit.min_events}};
  j["sampler"] = {{"backend", std::string(name(c.sampler.backend))},
                  {"chains", c.sampler.chains},
                  {"iterations", c.sampler.iterations},
                  {"warmup", c.sampler.warmup},
                  {"scale_bound", c.sampler.scale_bound},
                  {"scale_bound_factor", c.sampler.scale_bound_factor}};
  for (auto k : kCoefficients) {
    const auto& o = c.sampler_class[static_cast<std::size_t>(k)];
    Json oj = Json::object();
    if (o.backend) oj["backend"] = std::string(name(*o.backend));
    if (o.chains) oj["chains"] = *o.chains;
    if (o.iterations) oj["iterations"] = *o.iterations;
    if (o.warmup) oj["warmup"] = *o.warmup;
    if (o.scale_bound) oj["scale_bound"] = *o.scale_bound;
    if (o.scale_bound_factor) oj["scale_bound_factor"] = *o.scale_bound_factor;
    if (!oj.empty()) j["sampler_" + std::string(name(k))] = oj;
  }
  j["aggregation"] = c.aggregation == Aggregation::group ? "group" : "record";
  j["out"] = c.out;
  return j;
}

// Applies the keys present in `j` on top of `c`. A "preset" key ("desk" or "full")
// resets the simulation size first. Throws ConfigError listing every problem.
inline void apply_json(PipelineConfig& c, const Json& j) {
  std::vector<std::string> problems;
  {
    detail::JsonFields f(j, "config", problems);
    std::optional<std::string> preset;
    f.get("preset", preset);
    if (preset) {
      if (*preset == "full") c.sim = SimConfig::full_scale();
      else if (*preset == "desk") c.sim = SimConfig{};
      else problems.push_back("config.preset: expected 'desk' or 'full'");
    }
    f.get("seed", c.seed);
    f.get("sim_seed", c.sim_seed);
    f.get("sampler_seed", c.sampler_seed);
    f.get("split_seed", c.split_seed);
    if (const auto* v = f.find("input")) {
      if (v->is_string()) c.input = v->get<std::string>();
      else f.bad("input", "a path string");
    }
    if (const auto* v = f.find("sim")) {
      detail::JsonFields s(*v, "config.sim", problems);
      s.get("n_locations", c.sim.n_locations);
      s.get("n_days", c.sim.n_days);
      s.get("missing_day_fraction", c.sim.missing_day_fraction);
      s.get("start_date", c.sim.start_date);
      s.get("opening_minute", c.sim.opening_minute);
    }
    if (const auto* v = f.find("truth")) {
      detail::JsonFields t(*v, "config.truth", problems);
      t.get("mu", c.truth.mu);
      t.get("sigma_d", c.truth.sigma_d);
      t.get("sigma_j", c.truth.sigma_j);
      t.get("sigma_eps", c.truth.sigma_eps);
      t.get("trend_scale", c.truth.trend_scale);
      t.get("curvature_scale", c.truth.curvature_scale);
      t.get("minutes_open", c.truth.minutes_open);
      t.get("overdispersion", c.truth.overdispersion);
      t.get("mean_quantity", c.truth.mean_quantity);
    }
    f.get("bin_width", c.bin_width);
    if (const auto* v = f.find("fit")) {
      detail::JsonFields t(*v, "config.fit", problems);
      t.get("log_offset", c.fit.log_offset);
      t.get("min_events", c.fit.min_events);
      std::optional<std::string> centering;
      t.get("centering", centering);
      if (centering) {
        if (*centering == "midpoint") c.fit.centering = Centering::midpoint;
        else if (*centering == "left_edge") c.fit.centering = Centering::left_edge;
        else problems.push_back("config.fit.centering: expected 'midpoint' or 'left_edge'");
      }
    }
    if (const auto* v = f.find("sampler")) {
      detail::JsonFields t(*v, "config.sampler", problems);
      std::optional<Backend> b;
      detail::read_backend(t, "backend", b, problems, "config.sampler");
      if (b) c.sampler.backend = *b;
      t.get("chains", c.sampler.chains);
      t.get("iterations", c.sampler.iterations);
      t.get("warmup", c.sampler.warmup);
      t.get("scale_bound", c.sampler.scale_bound);
      t.get("scale_bound_factor", c.sampler.scale_bound_factor);
    }
    for (auto k : kCoefficients) {
      const std::string key = "sampler_" + std::string(name(k));
      if (const auto* v = f.find(key)) {
        auto& o = c.sampler_class[static_cast<std::size_t>(k)];
        detail::JsonFields t(*v, "config." + key, problems);
        detail::read_backend(t, "backend", o.backend, problems, "config." + key);
        t.get("chains", o.chains);
        t.get("iterations", o.iterations);
        t.get("warmup", o.warmup);
        t.get("scale_bound", o.scale_bound);
        t.get("scale_bound_factor", o.scale_bound_factor);
      }
    }
    std::optional<std::string> agg;
    f.get("aggregation", agg);
    if (agg) {
      if (*agg == "group") c.aggregation = Aggregation::group;
      else if (*agg == "record") c.aggregation = Aggregation::record;
      else problems.push_back("config.aggregation: expected 'group' or 'record'");
    }
    f.get("out", c.out);
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

// Command-line (or programmatic) overrides; highest precedence.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> backend;
  std::optional<int> chains;
  std::optional<int> iterations;
};

namespace detail {

inline void apply_overrides(PipelineConfig& c, const Overrides& o, const std::string& source,
                            std::vector<std::string>& problems) {
  if (o.seed) {
    // A new master seed re-derives every stage seed.
    c.seed = *o.seed;
    c.sim_seed.reset();
    c.sampler_seed.reset();
    c.split_seed.reset();
  }
  if (o.out) c.out = *o.out;
  if (o.backend) {
    if (auto b = parse_backend(*o.backend)) {
      c.sampler.backend = *b;
      for (auto& s : c.sampler_class) s.backend.reset();
    } else {
      problems.push_back(source + " backend: unknown backend '" + *o.backend + "' (gibbs or mwg)");
    }
  }
  if (o.chains) {
    c.sampler.chains = *o.chains;
    for (auto& s : c.sampler_class) s.chains.reset();
  }
  if (o.iterations) {
    c.sampler.iterations = *o.iterations;
    for (auto& s : c.sampler_class) s.iterations.reset();
  }
}

}  // namespace detail

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

inline EnvLookup process_env() {
  return [](const std::string& key) -> std::optional<std::string> {
    const char* v = std::getenv(key.c_str());
    return v ? std::optional<std::string>(v) : std::nullopt;
  };
}

// HIERCAST_SEED, HIERCAST_OUT, HIERCAST_BACKEND, HIERCAST_CHAINS, HIERCAST_ITERS.
inline Overrides env_overrides(const EnvLookup& env, std::vector<std::string>& problems) {
  Overrides o;
  if (auto v = env("HIERCAST_SEED")) {
    if (auto n = parse_number<std::uint64_t>(*v)) o.seed = *n;
    else problems.push_back("HIERCAST_SEED: expected a non-negative integer, got '" + *v + "'");
  }
  if (auto v = env("HIERCAST_OUT")) o.out = *v;
  if (auto v = env("HIERCAST_BACKEND")) o.backend = *v;
  if (auto v = env("HIERCAST_CHAINS")) {
    if (auto n = parse_number<int>(*v)) o.chains = *n;
    else problems.push_back("HIERCAST_CHAINS: expected an integer, got '" + *v + "'");
  }
  if (auto v = env("HIERCAST_ITERS")) {
    if (auto n = parse_number<int>(*v)) o.iterations = *n;
    else problems.push_back("HIERCAST_ITERS: expected an integer, got '" + *v + "'");
  }
  return o;
}

// Precedence: defaults < config file < environment < flags. A manifest written by a
// previous run is accepted as a config file (its "config" member is used).
inline PipelineConfig resolve_config(const std::optional<std::string>& config_path, const EnvLookup& env,
                                     const Overrides& flags) {
  PipelineConfig c = desk_config();
  std::vector<std::string> problems;
  if (config_path) {
    std::ifstream in(*config_path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + *config_path);
    Json j;
    try {
      j = Json::parse(in);
    } catch (const Json::parse_error& e) {
      throw ConfigError("config file " + *config_path + " is not valid JSON: " + e.what());
    }
    if (j.is_object() && j.contains("format_version") && j.contains("config")) j = j["config"];
    try {
      apply_json(c, j);
    } catch (const ConfigError& e) {
      problems = e.problems();
    }
  }
  const auto env_o = env_overrides(env, problems);
  detail::apply_overrides(c, env_o, "environment", problems);
  detail::apply_overrides(c, flags, "flag", problems);
  for (auto& p : c.problems()) problems.push_back(std::move(p));
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return c;
}

// ---- stage files ----

inline std::string read_text_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string shard_name(int location_number) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "loc_%04d.csv", location_number);
  return std::string("transactions/") + buf;
}

inline std::string coefficient_file(std::string_view stem, Coefficient c, std::string_view ext) {
  return std::string(stem) + "_" + std::string(name(c)) + std::string(ext);
}

inline Json to_json(const ParameterSummary& s) {
  auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  return {{"name", s.name},     {"mean", num(s.mean)}, {"se_mean", num(s.se_mean)}, {"sd", num(s.sd)},
          {"2.5%", num(s.q2_5)}, {"25%", num(s.q25)},   {"50%", num(s.q50)},         {"75%", num(s.q75)},
          {"97.5%", num(s.q97_5)}, {"n_eff", num(s.n_eff)}, {"rhat", num(s.rhat)}};
}

inline Json to_json(const Score& s) { return {{"bias", s.bias}, {"rmse", s.rmse}, {"n", s.n}}; }

inline Json to_json(const EvalReport& r) {
  Json j;
  j["split_seed"] = r.split_seed;
  j["n_train"] = r.n_train;
  j["n_test"] = r.n_test;
  j["aggregation"] = r.aggregation == Aggregation::group ? "group" : "record";
  j["coefficients"] = Json::array();
  for (const auto& c : r.coefficients) {
    Json cj;
    cj["coefficient"] = std::string(name(c.coefficient));
    cj["rows"] = Json::array();
    for (const auto& row : c.rows) {
      cj["rows"].push_back({{"grouping", std::string(name(row.grouping))},
                            {"baseline_rmse", row.baseline.rmse},
                            {"hier_rmse", row.hier.rmse},
                            {"baseline_bias", row.baseline.bias},
                            {"hier_bias", row.hier.bias},
                            {"n_pairs", row.hier.n},
                            {"n_groups", row.n_groups},
                            {"excluded_groups", row.excluded},
                            {"test_on_train", to_json(row.train_check)}});
    }
    const auto& v = c.variance;
    cj["variance_decomposition"] = {{"s_d", v.s_d},           {"s_j", v.s_j},         {"s_eps", v.s_eps},
                                    {"combined", v.combined}, {"sigma_y", v.sigma_y}};
    cj["r_squared"] = std::isfinite(v.r_squared) ? Json(v.r_squared) : Json(nullptr);
    j["coefficients"].push_back(std::move(cj));
  }
  return j;
}

inline std::map<DayKey, Part> read_split_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("split file is empty");
  std::map<DayKey, Part> out;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    const auto loc = f.size() == 3 ? parse_number<int>(f[0]) : std::nullopt;
    const auto day = f.size() == 3 ? parse_number<int>(f[1]) : std::nullopt;
    if (!loc || !day || (f[2] != "train" && f[2] != "test")) throw DataError("split row is malformed: " + line);
    out[{*loc, *day}] = f[2] == "train" ? Part::train : Part::test;
  }
  return out;
}

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)), root_(cfg_.out) {
    if (auto p = cfg_.problems(); !p.empty()) throw ConfigError(std::move(p));
    config_json_ = to_json(cfg_);
    config_hash_ = hex64(fnv1a64(config_json_.dump()));
  }

  const PipelineConfig& config() const { return cfg_; }
  const fs::path& out_dir() const { return root_; }

  void generate() {
    if (cfg_.input)
      throw ConfigError("generate writes synthetic data, but an input file is configured (" + *cfg_.input + ")");
    Stage st(*this, "generate");
    fs::remove_all(root_ / "transactions");
    const auto sim = cfg_.resolved_sim();
    const auto truth = cfg_.resolved_truth();
    const auto records = generate_dataset(sim, truth);
    std::map<int, std::string> shards;
    for (const auto& r : records) {
      auto& buf = shards[r.location_number];
      if (buf.empty()) (buf += kTransactionHeader) += '\n';
      append_transaction_row(buf, r);
    }
    for (const auto& [loc, text] : shards) st.write(shard_name(loc), text);

    Json tj;
    tj["mu"] = truth.mu;
    tj["day_effects"] = truth.day_effects;
    tj["location_effects"] = truth.location_effects;
    tj["location_numbers"] = Json::array();
    for (int j = 1; j <= sim.n_locations; ++j) tj["location_numbers"].push_back(j);
    st.write("truth.json", tj.dump(2) + "\n");
    st.commit();
  }

  void bin() {
    Stage st(*this, "bin");
    std::vector<TransactionRecord> records;
    std::string rejections = "source,row,reason\n";
    for (const auto& [label, path] : transaction_sources()) {
      std::istringstream in(st.read(path, "generate"));
      auto parsed = parse_transactions(in);
      for (const auto& r : parsed.rejections) {
        rejections += label + "," + std::to_string(r.row) + ",\"";
        for (char ch : r.reason) rejections += ch == '"' ? std::string("\"\"") : std::string(1, ch);
        rejections += "\"\n";
      }
      records.insert(records.end(), parsed.records.begin(), parsed.records.end());
    }
    const auto groups = group_by_location_day(records, cfg_.bin_width);
    std::ostringstream os;
    write_binned_csv(os, groups);
    st.write("binned.csv", os.str());
    st.write("rejections.csv", rejections);
    st.commit();
  }

  void fit() {
    Stage st(*this, "fit");
    std::istringstream in(st.read(root_ / "binned.csv", "bin"));
    const auto groups = read_binned_csv(in);
    const auto ds = build_coefficient_dataset(groups, cfg_.fit);
    if (ds.records.empty()) throw DataError("no location-day could be fitted (see fit_failures.csv)");
    std::ostringstream c, f;
    write_coefficients_csv(c, ds.records);
    write_fit_failures_csv(f, ds.failures);
    st.write("coefficients.csv", c.str());
    st.write("fit_failures.csv", f.str());
    st.commit();
  }

  // Splits the location-days and fits the three coefficient models (concurrently) on the training half.
  void infer() {
    Stage st(*this, "infer");
    const auto records = load_coefficients(st);
    const auto assignment = split(records, cfg_.resolved_split_seed());
    const auto train = select(records, assignment, Part::train);
    if (train.size() < 2) throw DataError("the training split has fewer than 2 location-days");
    std::ostringstream sp;
    write_split_csv(sp, records, assignment);
    st.write("split.csv", sp.str());

    struct Result {
      std::string input, draws, summary, diag;
    };
    std::array<Result, 3> results;
    parallel_for(3, [&](std::size_t k) {
      const auto c = kCoefficients[k];
      const auto in = make_model_input(train, c);
      const auto scfg = cfg_.sampler_for(c);
      const auto draws = run_mcmc(in.data, scfg);
      const auto diag = diagnostics(draws);
      std::ostringstream a, b, s;
      write_hier_data_csv(a, in.data);
      write_draws_csv(b, draws);
      write_summary_csv(s, diag.parameters);
      Json dj;
      dj["coefficient"] = std::string(name(c));
      dj["backend"] = std::string(name(scfg.backend));
      dj["chains"] = scfg.chains;
      dj["iterations"] = scfg.iterations;
      dj["warmup"] = draws.warmup;
      dj["seed"] = scfg.seed;
      dj["scale_bound"] = draws.scale_bound;
      dj["scale_factor"] = in.scale_factor;
      dj["scale_fallback"] = in.used_fallback;
      dj["n_obs"] = in.data.size();
      dj["n_days"] = in.data.n_days;
      dj["location_ids"] = in.location_ids;
      dj["rhat_threshold"] = diag.rhat_threshold;
      dj["max_rhat"] = std::isfinite(diag.max_rhat()) ? Json(diag.max_rhat()) : Json(nullptr);
      dj["converged"] = diag.converged();
      dj["flagged"] = diag.flagged;
      dj["warnings"] = diag.warnings;
      dj["lp__"] = to_json(diag.lp);
      dj["parameters"] = Json::array();
      for (const auto& p : diag.parameters) dj["parameters"].push_back(to_json(p));
      results[k] = {a.str(), b.str(), s.str(), dj.dump(2) + "\n"};
    });
    for (auto c : kCoefficients) {
      const auto& r = results[static_cast<std::size_t>(c)];
      st.write(coefficient_file("model_input", c, ".csv"), r.input);
      st.write(coefficient_file("draws", c, ".csv"), r.draws);
      st.write(coefficient_file("summary", c, ".csv"), r.summary);
      st.write(coefficient_file("diagnostics", c, ".json"), r.diag);
    }
    st.commit();
  }

  EvalReport eval() {
    Stage st(*this, "eval");
    const auto records = load_coefficients(st);
    std::istringstream sp(st.read(root_ / "split.csv", "infer"));
    const auto parts = read_split_csv(sp);
    SplitAssignment assignment{cfg_.resolved_split_seed(), {}};
    for (const auto& r : records) {
      const auto it = parts.find(r.key());
      if (it == parts.end())
        throw DataError("split.csv does not cover " + to_string(r.key()) + "; run `hiercast infer` again");
      assignment.labels.push_back(it->second);
    }
    const auto train = select(records, assignment, Part::train);
    const auto test = select(records, assignment, Part::test);

    EvalReport report{assignment.seed, train.size(), test.size(), cfg_.aggregation, {}};
    fs::remove_all(root_ / "plots");
    for (auto c : kCoefficients) {
      const auto fit = load_model_fit(st, c);
      report.coefficients.push_back(evaluate_coefficient(fit, train, test, cfg_.aggregation));
      for (auto g : kGroupings) {
        const auto cmp = compare_groups(fit, train, test, g, cfg_.aggregation);
        const std::string suffix = std::string(name(c)) + "_" + std::string(name(g)) + ".csv";
        std::ostringstream pv, bx;
        PlotInputs pin;
        pin.comparison = &cmp;
        pin.records = records;
        pin.coefficient = c;
        pin.grouping = g;
        emit_plot_data("pred_vs_actual", pin, pv);
        emit_plot_data("boxplot_by_group", pin, bx);
        st.write("plots/pred_vs_actual_" + suffix, pv.str());
        st.write("plots/boxplot_" + suffix, bx.str());
      }
    }
    write_daily_fit(st, records.front().key());

    std::ostringstream t3;
    write_rmse_table_csv(t3, report);
    st.write("rmse_table.csv", t3.str());
    st.write("eval_report.json", to_json(report).dump(2) + "\n");
    st.commit();
    return report;
  }

  EvalReport run_all() {
    if (!cfg_.input) generate();
    bin();
    fit();
    infer();
    return eval();
  }

 private:
  // Collects a stage's inputs and outputs; commit() records them in the manifest.
  class Stage {
   public:
    Stage(Pipeline& p, std::string name) : p_(p), name_(std::move(name)) { fs::create_directories(p_.root_); }

    std::string read(const fs::path& path, const std::string& producer) {
      if (!fs::exists(path))
        throw DataError("missing " + path.string() + "; run `hiercast " + producer + "` first");
      auto text = read_text_file(path);
      inputs_[p_.label(path)] = hex64(fnv1a64(text));
      return text;
    }

    void write(const std::string& rel, const std::string& text) {
      const fs::path path = p_.root_ / rel;
      fs::create_directories(path.parent_path());
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out << text;
      if (!out) throw DataError("cannot write " + path.string());
      outputs_[rel] = hex64(fnv1a64(text));
    }

    void commit() { p_.record_stage(name_, inputs_, outputs_); }

   private:
    Pipeline& p_;
    std::string name_;
    std::map<std::string, std::string> inputs_, outputs_;
  };

  // Output-relative label for files under the output directory, the path as given otherwise.
  std::string label(const fs::path& path) const {
    const auto rel = path.lexically_relative(root_);
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
    return path.generic_string();
  }

  std::vector<std::pair<std::string, fs::path>> transaction_sources() const {
    if (cfg_.input) return {{fs::path(*cfg_.input).filename().string(), fs::path(*cfg_.input)}};
    std::vector<std::pair<std::string, fs::path>> out;
    const auto dir = root_ / "transactions";
    if (fs::is_directory(dir))
      for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".csv") out.emplace_back(label(e.path()), e.path());
    std::sort(out.begin(), out.end());
    if (out.empty())
      throw DataError("no transaction files in " + dir.string() + "; run `hiercast generate` first");
    return out;
  }

  std::vector<CoefficientRecord> load_coefficients(Stage& st) const {
    std::istringstream in(st.read(root_ / "coefficients.csv", "fit"));
    auto records = read_coefficients_csv(in);
    if (records.empty()) throw DataError("coefficients.csv has no rows; run `hiercast fit` first");
    return records;
  }

  ModelFit load_model_fit(Stage& st, Coefficient c) const {
    std::istringstream s(st.read(root_ / coefficient_file("summary", c, ".csv"), "infer"));
    const auto dtext = st.read(root_ / coefficient_file("diagnostics", c, ".json"), "infer");
    ModelFit fit;
    fit.coefficient = c;
    fit.summary = read_summary_csv(s);
    try {
      const auto dj = Json::parse(dtext);
      fit.scale_factor = dj.at("scale_factor").get<double>();
      fit.location_ids = dj.at("location_ids").get<std::vector<int>>();
      fit.n_days = dj.at("n_days").get<int>();
    } catch (const Json::exception& e) {
      throw DataError(coefficient_file("diagnostics", c, ".json") + " is malformed (" + e.what() +
                      "); run `hiercast infer` again");
    }
    return fit;
  }

  // Events, bins and fitted curve of one location-day.
  void write_daily_fit(Stage& st, const DayKey& key) const {
    const fs::path src = cfg_.input ? fs::path(*cfg_.input) : root_ / shard_name(key.location_number);
    std::istringstream in(st.read(src, "generate"));
    auto parsed = parse_transactions(in);
    std::vector<TransactionRecord> day;
    for (const auto& r : parsed.records)
      if (r.location_number == key.location_number && r.calendar_day() == key.calendar_day) day.push_back(r);
    if (day.empty()) throw DataError("no transactions for " + to_string(key) + " in " + src.string());
    const auto series = bin_day(day, cfg_.bin_width);
    const auto fit = fit_curve(series, cfg_.fit);
    std::ostringstream os;
    PlotInputs pin;
    pin.fit = &fit;
    pin.series = &series;
    pin.events = day;
    emit_plot_data("daily_fit", pin, os);
    st.write("plots/daily_fit.csv", os.str());
  }

  void record_stage(const std::string& stage, const std::map<std::string, std::string>& inputs,
                    const std::map<std::string, std::string>& outputs) {
    const auto path = root_ / "manifest.json";
    Json m;
    if (fs::exists(path)) {
      try {
        m = Json::parse(read_text_file(path));
      } catch (const Json::exception&) {
        m = Json();
      }
      // Outputs of a run with a different configuration are stale.
      if (!m.is_object() || m.value("config_hash", "") != config_hash_) m = Json();
    }
    m["format_version"] = kManifestFormat;
    m["config"] = config_json_;
    m["config_hash"] = config_hash_;
    m["seeds"] = {{"master", cfg_.seed},
                  {"sim", cfg_.resolved_sim_seed()},
                  {"sampler", cfg_.resolved_sampler_seed()},
                  {"split", cfg_.resolved_split_seed()}};
    m["stages"][stage] = {{"inputs", inputs}, {"outputs", outputs}};
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << m.dump(2) << "\n";
    if (!out) throw DataError("cannot write " + path.string());
  }

  PipelineConfig cfg_;
  fs::path root_;
  Json config_json_;
  std::string config_hash_;
};

}  // namespace hiercast
