// Acceptance suite: one PASS/FAIL line per criterion.
//   acceptance [--only 1,2,...] [--seeds N] [--workdir DIR]
// --seeds shrinks the rate experiments for quick local checks; the reported
// verdicts are only meaningful at the default seed counts.
#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "nnql/nnql.hpp"

using namespace nnql;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Context {
  fs::path workdir;
  std::size_t rate_seeds = 20;
  std::size_t ordering_seeds = 10;
  fs::path cache() const { return workdir / "oracle_cache"; }
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Trajectory trajectory(const EnvOptions& opt, std::size_t T, std::uint64_t seed) {
  const auto env = make_env(opt);
  auto rng = make_rng(seed, {1, T});
  return sample_trajectory(env, make_policy("uniform", env), T, env.default_start, rng);
}

std::vector<std::uint64_t> seed_list(std::size_t n) {
  std::vector<std::uint64_t> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = i + 1;
  return s;
}

// 1. ||F[Q] - F[Q']|| <= gamma ||Q - Q'|| on random pairs.
Verdict contraction(const Context&) {
  EnvOptions opt;
  const auto traj = trajectory(opt, 1000, 1);
  const auto index = build_trajectory_index(traj, Norm::L2);
  std::mt19937_64 gen(101);
  double worst = -1e300;
  for (double gamma : {0.5, 0.9, 0.99}) {
    OfflineParams p;
    p.k = choose_k_offline(1000, 1);
    p.gamma = gamma;
    const BellmanOperator op(traj, index, p);
    const double span = 1.0 / (1.0 - gamma);
    std::uniform_real_distribution<double> u(-span, span);
    std::normal_distribution<double> small(0.0, 1e-3);
    for (int pair = 0; pair < 100; ++pair) {
      std::vector<double> q(1000), r(1000);
      for (std::size_t t = 0; t < 1000; ++t) {
        q[t] = u(gen);
        r[t] = pair % 2 ? q[t] + small(gen) : u(gen);
      }
      const auto fq = op.apply(q), fr = op.apply(r);
      double lhs = 0.0, rhs = 0.0;
      for (std::size_t t = 0; t < 1000; ++t) {
        lhs = std::max(lhs, std::abs(fq[t] - fr[t]));
        rhs = std::max(rhs, std::abs(q[t] - r[t]));
      }
      worst = std::max(worst, lhs - gamma * rhs);
    }
  }
  return {worst <= 1e-12, fmt("max(||FQ-FQ'|| - gamma||Q-Q'||) = %.3e over 300 pairs", worst)};
}

// 2. Constant reward, no noise: both learners approach the scalar fixed point.
Verdict constant_fixed_point(const Context&) {
  EnvOptions opt;
  opt.name = "constant";
  opt.sigma = 0.0;
  const double gamma = 0.5;
  double x = 0.0;  // scalar recursion x <- R + gamma x
  for (int i = 0; i < 200; ++i) x = 1.0 + gamma * x;

  const auto traj = trajectory(opt, 1000, 1);
  OfflineParams p;
  p.k = choose_k_offline(1000, 1);
  p.gamma = gamma;
  p.fix_tol = 1e-10;
  const auto model = fit_offline(traj, p);
  const auto learner = run_online(traj, OnlineParams::defaults(gamma, 1, 2));
  double off = 0.0, on = 0.0;
  for (int i = 0; i <= 20; ++i) {
    const StateVec s{i / 20.0};
    for (ActionId a = 0; a < 2; ++a) {
      off = std::max(off, std::abs(evaluate_q(model, s, a).value - x));
      on = std::max(on, std::abs(learner.query(s, a).value - x));
    }
  }
  return {model.converged && off <= 1e-9 && on <= 1e-2,
          fmt("offline max|q - %.1f| = %.2e (<= 1e-9), online = %.2e (<= 1e-2)", x, off, on)};
}

// 3. kNN queries against a linear scan, with ties, windows and evictions.
Verdict knn_exactness(const Context&) {
  std::mt19937_64 gen(303);
  std::size_t queries = 0, mismatches = 0;
  const std::vector<std::pair<std::size_t, Norm>> setups{{1, Norm::L2}, {2, Norm::L1}, {3, Norm::LInf}, {2, Norm::L2}};
  for (const auto& [dim, norm] : setups) {
    const Metric metric(norm);
    NeighborIndex index(dim, 2, norm);
    std::vector<IndexEntry> all;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> grid(0, 20);
    auto brute = [&](const StateVec& s, ActionId a, std::size_t k, Window w) {
      std::vector<std::pair<double, StepIndex>> c;
      for (const auto& e : all) {
        if (e.action != a || e.t < index.watermark() || e.t < w.lo || e.t >= w.hi) continue;
        double acc = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
          const double d = std::abs(e.state[i] - s[i]);
          acc = norm == Norm::L2 ? acc + d * d : norm == Norm::L1 ? acc + d : std::max(acc, d);
        }
        c.emplace_back(acc, e.t);
      }
      std::sort(c.begin(), c.end());
      c.resize(std::min(k, c.size()));
      return c;
    };
    auto check = [&] {
      std::vector<double> q(dim);
      for (auto& v : q) v = gen() % 3 == 0 ? grid(gen) / 20.0 : u(gen);
      const StateVec s(q);
      const ActionId a = gen() % 2;
      const std::size_t k = 1 + gen() % 40;
      const StepIndex top = all.size() + 1;
      Window w;
      if (gen() % 2) {
        w.lo = gen() % top;
        w.hi = w.lo + 1 + gen() % top;
      }
      const auto got = index.query_knn(s, a, k, w);
      const auto want = brute(s, a, k, w);
      ++queries;
      bool same = got.neighbors.size() == want.size() && got.truncated == (want.size() < k);
      for (std::size_t i = 0; same && i < want.size(); ++i)
        same = got.neighbors[i].t == want[i].second &&
               got.neighbors[i].distance == metric.rank_to_distance(want[i].first);
      if (!same) ++mismatches;
    };
    for (StepIndex t = 1; t <= 10000; ++t) {
      std::vector<double> x(dim);
      for (auto& v : x) v = gen() % 4 == 0 ? grid(gen) / 20.0 : u(gen);  // quantized coordinates force ties
      const ActionId a = gen() % 2;
      index.insert(t, StateVec(x), a);
      all.push_back({t, StateVec(x), a});
      if (t % 1000 == 0 && gen() % 2) index.evict_before(window_start(0.5, t));
      if (t % 50 == 0) check();
    }
    for (int i = 0; i < 50; ++i) check();
  }
  return {mismatches == 0, fmt("%zu queries on 10^4 points x %zu index setups, %zu mismatches", queries,
                               setups.size(), mismatches)};
}

struct OracleCase {
  std::string env;
  double gamma;
};

const std::vector<OracleCase> kOracleCases{{"box", 0.8}, {"box", 0.95}, {"ar1", 0.8}};
constexpr double kOracleTol = 1e-9;

// 4. Oracle closed form, residual and Lipschitz bound.
Verdict oracle_correctness(const Context& ctx) {
  EnvOptions single;
  single.name = "single_state";
  const auto one = grid_value_iteration(make_env(single), 1.0, 0.5, 1e-13);
  const double e1 = std::abs(oracle_eval(one, StateVec{0.0}, 1) - 2.0);
  const double e0 = std::abs(oracle_eval(one, StateVec{0.0}, 0) - 1.0);
  bool ok = e1 <= 1e-12 && e0 <= 1e-12;
  std::string detail = fmt("single-state |Q-2|=%.1e |Q-1|=%.1e", e1, e0);

  for (const auto& oc : kOracleCases) {
    EnvOptions opt;
    opt.name = oc.env;
    const auto env = make_env(opt);
    cached_oracle(env, opt, oc.gamma, default_oracle_h(env), kOracleTol, ctx.cache().string());
  }
  double worst_residual = 0.0;
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(ctx.cache())) {
    if (entry.path().extension() != ".csv") continue;
    auto meta = entry.path();
    meta.replace_extension(".json");
    const auto o = load_oracle(entry.path().string(), meta.string());
    ++files;
    worst_residual = std::max(worst_residual, o.residual / o.tol);
    ok = ok && o.converged && o.residual <= o.tol;
  }
  detail += fmt("; %zu cached oracles, max residual/tol = %.3f", files, worst_residual);

  double worst_excess = -1e300;
  for (const auto& oc : kOracleCases) {
    EnvOptions opt;
    opt.name = oc.env;
    const auto env = make_env(opt);
    const double h = default_oracle_h(env);
    const auto o = cached_oracle(env, opt, oc.gamma, h, kOracleTol, ctx.cache().string());
    const double L = lipschitz_constant(env, oc.gamma);
    const double D = 0.1 * (env.box.hi[0] - env.box.lo[0]);
    const double slack = 2.0 * (kOracleTol + 0.5 * L * h * std::sqrt(static_cast<double>(env.dim)));
    const std::size_t n = o.num_nodes();
    const auto reach = static_cast<std::size_t>(D / h);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < std::min(n, i + reach + 1); ++j) {
        const double dist = std::abs(o.node_coord(0, j) - o.node_coord(0, i));
        for (ActionId a = 0; a < o.num_actions; ++a)
          worst_excess = std::max(worst_excess, std::abs(o.value(i, a) - o.value(j, a)) - L * dist - slack);
      }
  }
  ok = ok && worst_excess <= 0.0;
  detail += fmt("; Lipschitz max excess over bound = %.3e", worst_excess);
  return {ok, detail};
}

ExperimentConfig rate_config(const Context& ctx, const std::string& env, std::vector<Algorithm> algs,
                             std::vector<double> gammas, std::vector<std::size_t> T_grid, std::size_t seeds) {
  ExperimentConfig c;
  c.env.name = env;
  c.algorithms = std::move(algs);
  c.gamma_grid = std::move(gammas);
  c.T_grid = std::move(T_grid);
  c.seeds = seed_list(seeds);
  c.oracle_tol = kOracleTol;
  c.oracle_cache_dir = ctx.cache().string();
  return c;
}

const std::vector<std::size_t> kTGrid{1u << 12, 1u << 13, 1u << 14, 1u << 15, 1u << 16, 1u << 17};

std::string medians_text(const std::vector<std::pair<std::size_t, double>>& m) {
  std::string s;
  for (const auto& [T, v] : m) s += fmt("%s%zu:%.4f", s.empty() ? "" : " ", T, v);
  return s;
}

RateReport run_and_save(const ExperimentConfig& c, const Context& ctx, const std::string& tag) {
  auto cfg = c;
  cfg.records_path = (ctx.workdir / ("acceptance_" + tag + "_records.csv")).string();
  cfg.summary_path = (ctx.workdir / ("acceptance_" + tag + "_summary.csv")).string();
  cfg.metadata_path = (ctx.workdir / ("acceptance_" + tag + "_metadata.json")).string();
  auto report = run_experiment(cfg);
  write_report(cfg, report);
  return report;
}

std::optional<RateReport> box_report;

const RateReport& box_rates(const Context& ctx) {
  if (!box_report)
    box_report = run_and_save(
        rate_config(ctx, "box", {Algorithm::Offline, Algorithm::Online}, {0.8}, kTGrid, ctx.rate_seeds), ctx, "box");
  return *box_report;
}

// 5. Offline sup-error slope on the bounded 1-D environment.
Verdict offline_rate(const Context& ctx) {
  const auto& f = box_rates(ctx).fit(Algorithm::Offline, 0.8, "sup_err");
  const double s = f.fit.slope;
  return {!box_rates(ctx).nonconverged && s >= -0.48 && s <= -0.18,
          fmt("slope %.3f +- %.3f in [-0.48, -0.18]; medians ", s, f.fit.half_width) + medians_text(f.medians)};
}

// 6. Online sup-error slope and ratio to offline.
Verdict online_rate(const Context& ctx) {
  const auto& rep = box_rates(ctx);
  const auto& on = rep.fit(Algorithm::Online, 0.8, "sup_err");
  const auto& off = rep.fit(Algorithm::Offline, 0.8, "sup_err");
  double worst_ratio = 0.0;
  for (std::size_t i = 0; i < on.medians.size(); ++i)
    worst_ratio = std::max(worst_ratio, on.medians[i].second / off.medians[i].second);
  const double s = on.fit.slope;
  return {s >= -0.48 && s <= -0.15 && worst_ratio <= 3.0,
          fmt("slope %.3f +- %.3f in [-0.48, -0.15]; max online/offline median ratio %.2f (<= 3); medians ", s,
              on.fit.half_width, worst_ratio) +
              medians_text(on.medians)};
}

// 7. Weighted error slope on the unbounded AR(1) environment.
Verdict unbounded_rate(const Context& ctx) {
  const auto rep = run_and_save(
      rate_config(ctx, "ar1", {Algorithm::Offline, Algorithm::Online}, {0.8}, kTGrid, ctx.rate_seeds), ctx, "ar1");
  const auto& off = rep.fit(Algorithm::Offline, 0.8, "w_l1_err");
  const auto& on = rep.fit(Algorithm::Online, 0.8, "w_l1_err");
  auto in_band = [](double s) { return s >= -0.53 && s <= -0.13; };
  return {!rep.nonconverged && in_band(off.fit.slope) && in_band(on.fit.slope),
          fmt("offline slope %.3f +- %.3f, online slope %.3f +- %.3f, band [-0.53, -0.13]; offline medians ",
              off.fit.slope, off.fit.half_width, on.fit.slope, on.fit.half_width) +
              medians_text(off.medians) + "; online medians " + medians_text(on.medians)};
}

// 8. Larger discount, larger error.
Verdict discount_ordering(const Context& ctx) {
  const auto rep = run_and_save(
      rate_config(ctx, "box", {Algorithm::Offline}, {0.8, 0.95}, {1u << 15}, ctx.ordering_seeds), ctx, "discount");
  const auto m80 = rep.medians(Algorithm::Offline, 0.8, "sup_err");
  const auto m95 = rep.medians(Algorithm::Offline, 0.95, "sup_err");
  return {!rep.nonconverged && m95.at(0) >= m80.at(0),
          fmt("median sup error %.4f at gamma 0.95 vs %.4f at gamma 0.8", m95.at(0), m80.at(0))};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// First n steps of a saved trajectory, with S_{n+1} as the terminal state.
void write_prefix(const std::string& from, const std::string& to, std::size_t n) {
  auto traj = load_trajectory(from);
  traj.terminal_state = traj.state(n + 1);
  traj.steps.resize(n);
  save_trajectory(to, traj);
}

// 9. Every CLI command twice, byte-compared.
Verdict determinism(const Context& ctx) {
  const fs::path dir = ctx.workdir / "acceptance_cli";
  fs::remove_all(dir);
  std::vector<std::string> mismatched;
  std::size_t compared = 0;
  for (const char* run : {"a", "b"}) {
    const fs::path d = dir / run;
    fs::create_directories(d);
    const std::string D = d.string() + "/";
    std::ofstream(D + "sweep.json") << R"({"env": {"name": "box"}, "algorithms": ["offline", "online"],
      "T_grid": [512, 1024, 2048], "gamma_grid": [0.8], "seeds": [1, 2],
      "query": {"stationary_samples": 300}, "oracle": {"h": 0.005}})";
    const std::vector<std::string> cmds{
        "simulate --env box --T 3000 --seed 7 --out " + D + "traj.csv",
        "simulate --env ar1 --T 2000 --seed 7 --out " + D + "ar1.csv",
        "oracle --env box --gamma 0.8 --oracle-h 0.005 --out " + D + "oracle",
        "fit-offline --trajectory " + D + "traj.csv --gamma 0.8 --out " + D + "model",
        "run-online --trajectory " + D + "head.csv --gamma 0.8 --out " + D + "head",
        "run-online --trajectory " + D + "traj.csv --gamma 0.8 --resume " + D + "head --out " + D + "online",
        "evaluate --env box --model " + D + "model --oracle " + D + "oracle --seed 3 --out " + D + "eval_off.csv",
        "evaluate --env box --checkpoint " + D + "online --oracle " + D + "oracle --seed 3 --out " + D +
            "eval_on.csv",
        "rate-sweep --config " + D + "sweep.json --records " + D + "records.csv --summary " + D + "summary.csv"};
    for (const auto& c : cmds) {
      if (c.starts_with("run-online --trajectory " + D + "head.csv")) write_prefix(D + "traj.csv", D + "head.csv", 1500);
      const std::string line = std::string(NNQL_CLI_PATH) + " " + c + " > /dev/null 2>&1";
      const int status = std::system(line.c_str());
      if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) return {false, "command failed: " + c};
    }
  }
  for (const auto& entry : fs::directory_iterator(dir / "a")) {
    if (entry.path().extension() != ".csv") continue;
    ++compared;
    if (slurp(entry.path()) != slurp(dir / "b" / entry.path().filename()))
      mismatched.push_back(entry.path().filename().string());
  }
  std::string detail = fmt("10 commands x 2 runs, %zu data CSVs compared", compared);
  for (const auto& m : mismatched) detail += "; differs: " + m;
  return {mismatched.empty() && compared >= 10, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  Context ctx;
  std::string workdir = ".";
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_option("--seeds", ctx.rate_seeds, "seeds for the rate experiments")->capture_default_str();
  app.add_option("--workdir", workdir, "directory for outputs and the oracle cache")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  ctx.workdir = workdir;
  ctx.ordering_seeds = std::min<std::size_t>(10, ctx.rate_seeds);
  fs::create_directories(ctx.cache());

  const std::vector<std::pair<std::string, Verdict (*)(const Context&)>> criteria{
      {"contraction", contraction},
      {"constant fixed point", constant_fixed_point},
      {"knn exactness", knn_exactness},
      {"oracle correctness", oracle_correctness},
      {"offline rate", offline_rate},
      {"online rate", online_rate},
      {"unbounded rate", unbounded_rate},
      {"discount ordering", discount_ordering},
      {"determinism", determinism}};

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s  %d %s: %s (%.1f s)\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                v.detail.c_str(), secs);
    std::fflush(stdout);
    if (!v.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
