#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "nnql/envs.hpp"
#include "nnql/io.hpp"
#include "nnql/metrics.hpp"
#include "nnql/offline.hpp"
#include "nnql/online.hpp"
#include "nnql/oracle.hpp"

namespace nnql {

enum class Algorithm { Offline, Online };

inline Algorithm parse_algorithm(std::string_view name) {
  if (name == "offline") return Algorithm::Offline;
  if (name == "online") return Algorithm::Online;
  throw InvalidInput("unknown algorithm '" + std::string(name) + "' (expected offline or online)");
}

inline std::string_view algorithm_name(Algorithm a) { return a == Algorithm::Offline ? "offline" : "online"; }

/// Everything a sweep needs; a run is reproducible from this and nothing else.
struct ExperimentConfig {
  EnvOptions env;
  std::string policy = "uniform";
  std::vector<Algorithm> algorithms{Algorithm::Offline};
  std::vector<std::size_t> T_grid;
  std::vector<double> gamma_grid{0.9};
  std::vector<std::uint64_t> seeds;
  /// Offline k and online constant k; 0 keeps the default schedules.
  std::size_t k = 0;
  std::optional<double> beta;
  Norm norm = Norm::L2;

  // Query sets. grid_points = 0 selects ~500*d.
  std::size_t grid_points = 0;
  std::size_t stationary_samples = 2000;
  std::size_t burn_in = 1000;
  std::size_t thin = 5;

  // Oracle. h = 0 selects a default per dimension.
  double oracle_h = 0.0;
  double oracle_tol = 1e-9;
  std::string oracle_cache_dir;

  // Offline stopping rule. fix_tol = 0 selects 1e-8 R/(1-gamma).
  double fix_tol = 0.0;
  std::size_t max_sweeps = 10000;

  /// Supplied to the warm-up diagnostic; not observable from data.
  double mixing_m = 1.0;

  std::string records_path;
  std::string summary_path;
  std::string metadata_path;
  /// Put wall-clock times in the data CSV (breaks byte-identical reruns).
  bool timing_in_csv = false;

  void validate() const {
    if (T_grid.empty()) throw InvalidInput("config: T_grid must be nonempty");
    if (gamma_grid.empty()) throw InvalidInput("config: gamma_grid must be nonempty");
    if (seeds.empty()) throw InvalidInput("config: seeds must be nonempty");
    if (algorithms.empty()) throw InvalidInput("config: at least one algorithm is required");
    for (double g : gamma_grid)
      if (!(g > 0.0 && g < 1.0)) throw InvalidInput("config: every gamma must lie in (0, 1)");
    if (beta && !(*beta > 0.0 && *beta < 1.0)) throw InvalidInput("config: beta must lie in (0, 1)");
    for (std::size_t T : T_grid) {
      if (T == 0) throw InvalidInput("config: T values must be >= 1");
      const std::size_t k_max = k > 0 ? k : choose_k_offline(T, env.dim);
      if (T < k_max) throw InvalidInput("config: T = " + std::to_string(T) + " is below k = " + std::to_string(k_max));
    }
    if (stationary_samples == 0 || thin == 0) throw InvalidInput("config: stationary_samples and thin must be >= 1");
    if (oracle_h < 0.0 || !(oracle_tol > 0.0)) throw InvalidInput("config: oracle.h must be >= 0 and oracle.tol > 0");
    if (fix_tol < 0.0 || max_sweeps == 0) throw InvalidInput("config: offline.eps must be >= 0, max_sweeps >= 1");
    if (!(mixing_m >= 1.0)) throw InvalidInput("config: mixing_m must be >= 1");
  }

  /// Fields present in `j` replace the current values.
  void merge_json(const json& j) {
    try {
      if (j.contains("env")) {
        const auto& e = j.at("env");
        env.name = e.value("name", env.name);
        env.dim = e.value("dim", env.dim);
        env.num_actions = e.value("actions", env.num_actions);
        env.sigma = e.value("sigma", env.sigma);
        env.noise_clip = e.value("noise_clip", env.noise_clip);
        env.level = e.value("level", env.level);
      }
      if (j.contains("policy")) {
        const auto& p = j.at("policy");
        policy = p.is_string() ? p.get<std::string>() : p.value("name", policy);
      }
      if (j.contains("seed")) seeds = {j.at("seed").get<std::uint64_t>()};
      if (j.contains("seeds")) seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
      if (j.contains("algorithm")) algorithms = {parse_algorithm(j.at("algorithm").get<std::string>())};
      if (j.contains("algorithms")) {
        algorithms.clear();
        for (const auto& a : j.at("algorithms")) algorithms.push_back(parse_algorithm(a.get<std::string>()));
      }
      if (j.contains("T_grid")) T_grid = j.at("T_grid").get<std::vector<std::size_t>>();
      if (j.contains("gamma_grid")) gamma_grid = j.at("gamma_grid").get<std::vector<double>>();
      if (j.contains("k")) k = j.at("k").get<std::size_t>();
      if (j.contains("beta")) {
        if (j.at("beta").is_null())
          beta.reset();
        else
          beta = j.at("beta").get<double>();
      }
      if (j.contains("norm")) norm = parse_norm(j.at("norm").get<std::string>());
      if (j.contains("mixing_m")) mixing_m = j.at("mixing_m").get<double>();
      if (j.contains("query")) {
        const auto& q = j.at("query");
        grid_points = q.value("grid_points", grid_points);
        stationary_samples = q.value("stationary_samples", stationary_samples);
        burn_in = q.value("burn_in", burn_in);
        thin = q.value("thin", thin);
      }
      if (j.contains("oracle")) {
        const auto& o = j.at("oracle");
        oracle_h = o.value("h", oracle_h);
        oracle_tol = o.value("tol", oracle_tol);
        oracle_cache_dir = o.value("cache_dir", oracle_cache_dir);
      }
      if (j.contains("offline")) {
        const auto& o = j.at("offline");
        fix_tol = o.value("eps", fix_tol);
        max_sweeps = o.value("max_sweeps", max_sweeps);
      }
      if (j.contains("output")) {
        const auto& o = j.at("output");
        records_path = o.value("records", records_path);
        summary_path = o.value("summary", summary_path);
        metadata_path = o.value("metadata", metadata_path);
        timing_in_csv = o.value("timing_in_csv", timing_in_csv);
      }
    } catch (const json::exception& e) {
      throw InvalidInput(std::string("config: ") + e.what());
    }
  }

  static ExperimentConfig from_json(const json& j) {
    ExperimentConfig c;
    c.merge_json(j);
    return c;
  }

  json to_json() const {
    json algs = json::array();
    for (auto a : algorithms) algs.push_back(std::string(algorithm_name(a)));
    return json{{"env",
                 {{"name", env.name},
                  {"dim", env.dim},
                  {"actions", env.num_actions},
                  {"sigma", env.sigma},
                  {"noise_clip", env.noise_clip},
                  {"level", env.level}}},
                {"policy", {{"name", policy}}},
                {"algorithms", algs},
                {"T_grid", T_grid},
                {"gamma_grid", gamma_grid},
                {"seeds", seeds},
                {"k", k},
                {"beta", beta ? json(*beta) : json(nullptr)},
                {"norm", std::string(norm_name(norm))},
                {"mixing_m", mixing_m},
                {"query",
                 {{"grid_points", grid_points},
                  {"stationary_samples", stationary_samples},
                  {"burn_in", burn_in},
                  {"thin", thin}}},
                {"oracle", {{"h", oracle_h}, {"tol", oracle_tol}, {"cache_dir", oracle_cache_dir}}},
                {"offline", {{"eps", fix_tol}, {"max_sweeps", max_sweeps}}},
                {"output",
                 {{"records", records_path},
                  {"summary", summary_path},
                  {"metadata", metadata_path},
                  {"timing_in_csv", timing_in_csv}}}};
  }
};

struct ErrorRecord {
  std::string env;
  Algorithm alg = Algorithm::Offline;
  std::size_t d = 1;
  double gamma = 0.0;
  std::size_t T = 0;
  std::uint64_t seed = 0;
  std::size_t k = 0;
  /// NaN for the offline algorithm.
  double beta = std::numeric_limits<double>::quiet_NaN();
  double sup_err = 0.0;
  double w_l1_err = 0.0;
  double runtime_ms = 0.0;
  bool converged = true;
  std::size_t skipped = 0;
};

struct FitSummary {
  Algorithm alg = Algorithm::Offline;
  double gamma = 0.0;
  std::string metric;
  RateFit fit;
  /// Median error per T, ascending T.
  std::vector<std::pair<std::size_t, double>> medians;
};

struct RateReport {
  std::vector<ErrorRecord> records;
  std::vector<FitSummary> fits;
  /// Some offline fit stopped at max_sweeps.
  bool nonconverged = false;
  json metadata;

  std::vector<double> medians(Algorithm alg, double gamma, std::string_view metric) const {
    for (const auto& f : fits)
      if (f.alg == alg && f.gamma == gamma && f.metric == metric) {
        std::vector<double> out;
        for (const auto& m : f.medians) out.push_back(m.second);
        return out;
      }
    throw InvalidInput("RateReport: no fit for the requested series");
  }

  const FitSummary& fit(Algorithm alg, double gamma, std::string_view metric) const {
    for (const auto& f : fits)
      if (f.alg == alg && f.gamma == gamma && f.metric == metric) return f;
    throw InvalidInput("RateReport: no fit for the requested series");
  }
};

inline constexpr std::string_view kRecordsHeader = "env,alg,d,gamma,T,seed,k,beta,sup_err,w_l1_err,runtime_ms";

inline void write_records_csv(std::ostream& out, std::span<const ErrorRecord> records, bool with_timing) {
  out << kRecordsHeader << '\n';
  for (const auto& r : records) {
    out << r.env << ',' << algorithm_name(r.alg) << ',' << r.d << ',' << format_double(r.gamma) << ',' << r.T << ','
        << r.seed << ',' << r.k << ',' << (std::isnan(r.beta) ? std::string() : format_double(r.beta)) << ','
        << format_double(r.sup_err) << ',' << format_double(r.w_l1_err) << ','
        << (with_timing ? format_double(std::round(r.runtime_ms * 1000.0) / 1000.0) : std::string()) << '\n';
  }
}

inline void write_summary_csv(std::ostream& out, const std::string& env, std::size_t d, std::span<const FitSummary> fits) {
  out << "env,alg,d,gamma,metric,n_T,slope,intercept,half_width,target_slope\n";
  for (const auto& f : fits) {
    out << env << ',' << algorithm_name(f.alg) << ',' << d << ',' << format_double(f.gamma) << ',' << f.metric << ','
        << f.medians.size() << ',' << format_double(f.fit.slope) << ',' << format_double(f.fit.intercept) << ','
        << (std::isnan(f.fit.half_width) ? std::string() : format_double(f.fit.half_width)) << ','
        << format_double(-1.0 / static_cast<double>(d + 2)) << '\n';
  }
}

/// Default lattice spacing for the oracle: about 1000 cells per axis in 1-D,
/// fewer in higher dimension.
inline double default_oracle_h(const EnvSpec& env) {
  double width = 0.0;
  for (std::size_t i = 0; i < env.dim; ++i) width = std::max(width, env.box.hi[i] - env.box.lo[i]);
  if (width == 0.0) return 1.0;
  const double cells = env.dim == 1 ? 1000.0 : env.dim == 2 ? 200.0 : 40.0;
  return width / cells;
}

namespace detail {

inline std::string oracle_cache_stem(const EnvSpec& env, const EnvOptions& opt, double gamma, double h, double tol) {
  std::ostringstream s;
  s << "oracle_" << env.name << "_d" << env.dim << "_A" << env.num_actions << "_c" << format_double(opt.level) << "_g"
    << format_double(gamma) << "_h" << format_double(h) << "_tol" << format_double(tol);
  return s.str();
}

template <class F>
auto with_context(const std::string& ctx, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const InvalidInput& e) {
    throw InvalidInput(ctx + ": " + e.what());
  } catch (const OutOfDomain& e) {
    throw OutOfDomain(ctx + ": " + e.what());
  } catch (const Unsupported& e) {
    throw Unsupported(ctx + ": " + e.what());
  }
}

}  // namespace detail

/// Builds the oracle, or reads it from `cache_dir` when a matching dump exists.
inline OracleQ cached_oracle(const EnvSpec& env, const EnvOptions& opt, double gamma, double h, double tol,
                             const std::string& cache_dir) {
  if (cache_dir.empty()) return grid_value_iteration(env, h, gamma, tol);
  namespace fs = std::filesystem;
  const auto stem = fs::path(cache_dir) / detail::oracle_cache_stem(env, opt, gamma, h, tol);
  const std::string csv = stem.string() + ".csv", meta = stem.string() + ".json";
  if (fs::exists(csv) && fs::exists(meta)) return load_oracle(csv, meta);
  auto o = grid_value_iteration(env, h, gamma, tol);
  fs::create_directories(cache_dir);
  save_oracle(csv, meta, o);
  return o;
}

/// Sample means of mean(s) from two chains with burn-in b and 2b; a large
/// gap relative to the standard error points at inadequate burn-in.
inline json burn_in_diagnostic(const EnvSpec& env, const Policy& policy, const ExperimentConfig& c, std::uint64_t seed) {
  auto mean_of = [&](std::size_t burn, std::uint64_t stream) {
    auto rng = make_rng(seed, {stream});
    const auto xs = stationary_samples(env, policy, burn, c.stationary_samples, c.thin, env.default_start, rng);
    double m = 0.0, m2 = 0.0;
    for (const auto& s : xs) {
      const double v = detail::mean_coord(s);
      m += v;
      m2 += v * v;
    }
    const auto n = static_cast<double>(xs.size());
    m /= n;
    return std::pair{m, std::sqrt(std::max(m2 / n - m * m, 0.0) / n)};
  };
  const auto [a, sa] = mean_of(c.burn_in, 3);
  const auto [b, sb] = mean_of(2 * c.burn_in, 4);
  return json{{"burn_in", c.burn_in}, {"mean", a}, {"mean_double_burn_in", b}, {"gap", std::abs(a - b)},
              {"stderr", std::sqrt(sa * sa + sb * sb)}};
}

using RecordCallback = std::function<void(const ErrorRecord&)>;

/// Runs every (T, gamma, seed, algorithm) cell. Trajectories come from
/// make_rng(seed, {1, T}) and evaluation samples from make_rng(seed, {2}),
/// so one trajectory is shared by all gammas and both algorithms.
inline RateReport run_experiment(const ExperimentConfig& c, const RecordCallback& on_record = {}) {
  c.validate();
  const EnvSpec env = make_env(c.env);
  const Policy policy = make_policy(c.policy, env);
  const bool bounded = env.support == Support::Bounded;
  const double h = c.oracle_h > 0.0 ? c.oracle_h : default_oracle_h(env);

  std::map<double, OracleQ> oracles;
  for (double g : c.gamma_grid)
    if (!oracles.contains(g))
      oracles.emplace(g, detail::with_context("oracle gamma=" + format_double(g), [&] {
                        return cached_oracle(env, c.env, g, h, c.oracle_tol, c.oracle_cache_dir);
                      }));

  const auto grid = bounded ? query_grid(env.box, c.grid_points > 0 ? c.grid_points : 500 * env.dim)
                            : std::vector<StateVec>{};

  RateReport report;
  for (std::uint64_t seed : c.seeds) {
    auto eval_rng = make_rng(seed, {2});
    const auto samples =
        stationary_samples(env, policy, c.burn_in, c.stationary_samples, c.thin, env.default_start, eval_rng);
    const std::span<const StateVec> sup_set = bounded ? std::span<const StateVec>(grid) : samples;
    for (std::size_t T : c.T_grid) {
      auto traj_rng = make_rng(seed, {1, T});
      const Trajectory traj = sample_trajectory(env, policy, T, env.default_start, traj_rng);
      for (double g : c.gamma_grid) {
        const OracleQ& oracle = oracles.at(g);
        for (Algorithm alg : c.algorithms) {
          const std::string ctx = std::string(algorithm_name(alg)) + " T=" + std::to_string(T) +
                                  " gamma=" + format_double(g) + " seed=" + std::to_string(seed);
          ErrorRecord rec;
          rec.env = env.name;
          rec.alg = alg;
          rec.d = env.dim;
          rec.gamma = g;
          rec.T = T;
          rec.seed = seed;
          detail::with_context(ctx, [&] {
            const auto start = std::chrono::steady_clock::now();
            auto measure = [&](const Estimator& est) {
              const auto sup = sup_error(est, oracle, sup_set);
              const auto l1 = weighted_l1_error(est, oracle, samples);
              rec.sup_err = sup.value;
              rec.w_l1_err = l1.value;
              rec.skipped = sup.skipped + l1.skipped;
            };
            if (alg == Algorithm::Offline) {
              OfflineParams p;
              p.k = c.k > 0 ? c.k : choose_k_offline(T, env.dim);
              p.gamma = g;
              p.fix_tol = c.fix_tol > 0.0 ? c.fix_tol : OfflineParams::default_tolerance(env.reward_bound, g);
              p.max_sweeps = c.max_sweeps;
              p.norm = c.norm;
              const OfflineModel model = fit_offline(traj, p);
              rec.k = p.k;
              rec.converged = model.converged;
              measure([&](const StateVec& s, ActionId a) { return evaluate_q(model, s, a).value; });
            } else {
              OnlineParams p = OnlineParams::defaults(g, env.dim, env.num_actions);
              if (c.beta) p.beta = *c.beta;
              p.k_fixed = c.k;
              p.norm = c.norm;
              const OnlineLearner learner = run_online(traj, p);
              rec.k = p.k(T);
              rec.beta = p.beta;
              measure([&](const StateVec& s, ActionId a) { return learner.query(s, a).value; });
            }
            rec.runtime_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
          });
          if (!rec.converged) report.nonconverged = true;
          if (on_record) on_record(rec);
          report.records.push_back(std::move(rec));
        }
      }
    }
  }

  std::stable_sort(report.records.begin(), report.records.end(), [](const ErrorRecord& a, const ErrorRecord& b) {
    return std::tuple(static_cast<int>(a.alg), a.gamma, a.T, a.seed) <
           std::tuple(static_cast<int>(b.alg), b.gamma, b.T, b.seed);
  });

  std::set<std::size_t> distinct_T(c.T_grid.begin(), c.T_grid.end());
  std::set<double> distinct_gamma(c.gamma_grid.begin(), c.gamma_grid.end());
  for (Algorithm alg : c.algorithms) {
    for (double g : distinct_gamma) {
      for (const char* metric : {"sup_err", "w_l1_err"}) {
        FitSummary f;
        f.alg = alg;
        f.gamma = g;
        f.metric = metric;
        std::vector<RatePoint> pts;
        std::map<std::size_t, std::vector<double>> by_T;
        for (const auto& r : report.records) {
          if (r.alg != alg || r.gamma != g) continue;
          const double e = f.metric == "sup_err" ? r.sup_err : r.w_l1_err;
          pts.push_back({static_cast<double>(r.T), e, r.seed});
          by_T[r.T].push_back(e);
        }
        for (auto& [T, errs] : by_T) f.medians.emplace_back(T, detail::median(errs));
        const bool positive = std::all_of(pts.begin(), pts.end(), [](const RatePoint& p) { return p.error > 0.0; });
        if (distinct_T.size() >= 2 && positive) {
          f.fit = rate_fit(pts);
        } else {
          f.fit.slope = f.fit.intercept = std::numeric_limits<double>::quiet_NaN();
        }
        report.fits.push_back(std::move(f));
      }
    }
  }

  json warmup = json::object();
  for (double g : distinct_gamma) {
    const double beta = c.beta ? *c.beta : schedule_beta(g, env.dim);
    json per_T = json::object();
    for (std::size_t T : distinct_T) per_T[std::to_string(T)] = warmup_threshold(T, beta, c.mixing_m, env.dim);
    warmup[format_double(g)] = per_T;
  }
  json oracle_meta = json::object();
  for (const auto& [g, o] : oracles) oracle_meta[format_double(g)] = oracle_header(o);
  json timings = json::array();
  for (const auto& r : report.records)
    timings.push_back({{"alg", std::string(algorithm_name(r.alg))},
                       {"gamma", r.gamma},
                       {"T", r.T},
                       {"seed", r.seed},
                       {"runtime_ms", r.runtime_ms},
                       {"converged", r.converged},
                       {"skipped", r.skipped}});
  report.metadata = json{{"config", c.to_json()},
                         {"oracle", oracle_meta},
                         {"warmup_threshold", warmup},
                         {"burn_in_diagnostic", burn_in_diagnostic(env, policy, c, c.seeds.front())},
                         {"unverified_constants", env.unverified},
                         {"nonconverged", report.nonconverged},
                         {"timings", timings}};
  return report;
}

/// Writes the records CSV, summary CSV and metadata JSON named in the config.
inline void write_report(const ExperimentConfig& c, const RateReport& report) {
  if (!c.records_path.empty()) {
    auto out = detail::open_out(c.records_path);
    write_records_csv(out, report.records, c.timing_in_csv);
  }
  if (!c.summary_path.empty()) {
    auto out = detail::open_out(c.summary_path);
    write_summary_csv(out, c.env.name, c.env.dim, report.fits);
  }
  if (!c.metadata_path.empty()) detail::write_json(c.metadata_path, report.metadata);
}

}  // namespace nnql
