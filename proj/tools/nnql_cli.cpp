// Command-line front end: simulate, oracle, fit-offline, run-online,
// evaluate, rate-sweep.
//
// Exit codes: 0 success, 1 invalid input, 2 non-convergence.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "nnql/nnql.hpp"

namespace {

using nnql::json;

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kNonConverged = 2;

/// Options shared by every subcommand that touches an environment.
struct EnvFlags {
  std::string name = "box";
  std::size_t dim = 1;
  std::size_t actions = 2;
  double sigma = 0.1;
  double noise_clip = 0.0;
  double level = 1.0;
  std::string policy = "uniform";

  void add(CLI::App& app) {
    app.add_option("--env", name, "environment: box, ar1, constant, identity, single_state")->capture_default_str();
    app.add_option("--dim", dim, "state dimension")->capture_default_str();
    app.add_option("--actions", actions, "number of actions")->capture_default_str();
    app.add_option("--sigma", sigma, "reward noise standard deviation")->capture_default_str();
    app.add_option("--noise-clip", noise_clip, "clip reward noise at +-value (0 = off)")->capture_default_str();
    app.add_option("--level", level, "reward level of the constant and identity envs")->capture_default_str();
    app.add_option("--policy", policy, "behavior policy: uniform, tilted")->capture_default_str();
  }

  json to_json() const {
    return json{{"env",
                 {{"name", name},
                  {"dim", dim},
                  {"actions", actions},
                  {"sigma", sigma},
                  {"noise_clip", noise_clip},
                  {"level", level}}},
                {"policy", {{"name", policy}}}};
  }
};

nnql::EnvOptions env_options(const json& j) {
  nnql::ExperimentConfig c;
  c.merge_json(j);
  return c.env;
}

std::string policy_name(const json& j) {
  nnql::ExperimentConfig c;
  c.merge_json(j);
  return c.policy;
}

/// Flag values, overridden key by key by the config file when one is given.
json resolve(json flags, const std::string& config_path) {
  if (config_path.empty()) return flags;
  flags.merge_patch(nnql::detail::read_json(config_path));
  return flags;
}

std::uint64_t require_seed(const json& j) {
  if (!j.contains("seed") || j.at("seed").is_null())
    throw nnql::InvalidInput("--seed is required for this command");
  return j.at("seed").get<std::uint64_t>();
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  return j.at(key).get<T>();
}

std::string stem_file(const std::string& stem, const char* ext) { return stem + ext; }

void log(const std::string& msg) { std::cerr << msg << '\n'; }

// ---------------------------------------------------------------------------

struct SimulateCmd {
  EnvFlags env;
  std::size_t T = 1000;
  std::optional<std::uint64_t> seed;
  std::string out = "trajectory.csv";
  std::string config;

  json flags() const {
    json j = env.to_json();
    j["T"] = T;
    j["out"] = out;
    if (seed) j["seed"] = *seed;
    return j;
  }

  int run() const {
    const json j = resolve(flags(), config);
    const auto seed_value = require_seed(j);
    const auto envspec = nnql::make_env(env_options(j));
    const auto policy = nnql::make_policy(policy_name(j), envspec);
    auto rng = nnql::make_rng(seed_value, {1, j.at("T").get<std::size_t>()});
    const auto traj =
        nnql::sample_trajectory(envspec, policy, j.at("T").get<std::size_t>(), envspec.default_start, rng);
    nnql::save_trajectory(j.at("out").get<std::string>(), traj);
    log("wrote " + j.at("out").get<std::string>() + " (T=" + std::to_string(traj.length()) + ")");
    return kOk;
  }
};

struct OracleCmd {
  EnvFlags env;
  double gamma = 0.9;
  double h = 0.0;
  double tol = 1e-9;
  std::string out = "oracle";
  std::string config;

  json flags() const {
    json j = env.to_json();
    j["gamma"] = gamma;
    j["oracle"] = {{"h", h}, {"tol", tol}};
    j["out"] = out;
    return j;
  }

  int run() const {
    const json j = resolve(flags(), config);
    const auto envspec = nnql::make_env(env_options(j));
    const double hh = get_or(j.at("oracle"), "h", 0.0);
    const auto o = nnql::grid_value_iteration(envspec, hh > 0.0 ? hh : nnql::default_oracle_h(envspec),
                                              j.at("gamma").get<double>(), get_or(j.at("oracle"), "tol", 1e-9));
    const auto stem = j.at("out").get<std::string>();
    nnql::save_oracle(stem_file(stem, ".csv"), stem_file(stem, ".json"), o);
    log("oracle: " + std::to_string(o.num_nodes()) + " nodes, " + std::to_string(o.iterations) +
        " iterations, residual " + nnql::format_double(o.residual));
    return o.converged ? kOk : kNonConverged;
  }
};

struct FitOfflineCmd {
  std::string trajectory;
  std::size_t actions = 0;
  double gamma = 0.9;
  std::size_t k = 0;
  double eps = 0.0;
  std::size_t max_sweeps = 10000;
  std::string norm = "l2";
  double reward_bound = 1.0;
  std::string out = "offline_model";
  std::string config;

  json flags() const {
    return json{{"trajectory", trajectory}, {"actions", actions},   {"gamma", gamma},
                {"k", k},                   {"norm", norm},         {"reward_bound", reward_bound},
                {"offline", {{"eps", eps}, {"max_sweeps", max_sweeps}}}, {"out", out}};
  }

  int run() const {
    const json j = resolve(flags(), config);
    const auto traj_path = j.at("trajectory").get<std::string>();
    if (traj_path.empty()) throw nnql::InvalidInput("--trajectory is required");
    const auto traj = nnql::load_trajectory(traj_path, j.at("actions").get<std::size_t>());
    nnql::OfflineParams p;
    p.gamma = j.at("gamma").get<double>();
    const auto kk = j.at("k").get<std::size_t>();
    p.k = kk > 0 ? kk : nnql::choose_k_offline(traj.length(), traj.dim);
    const double e = get_or(j.at("offline"), "eps", 0.0);
    p.fix_tol = e > 0.0 ? e : nnql::OfflineParams::default_tolerance(j.at("reward_bound").get<double>(), p.gamma);
    p.max_sweeps = get_or<std::size_t>(j.at("offline"), "max_sweeps", 10000);
    p.norm = nnql::parse_norm(j.at("norm").get<std::string>());
    const auto model = nnql::fit_offline(traj, p);
    const auto stem = j.at("out").get<std::string>();
    nnql::save_offline_model(stem_file(stem, ".csv"), stem_file(stem, ".json"), model, traj_path);
    log("offline: k=" + std::to_string(p.k) + ", " + std::to_string(model.sweeps_run) + " sweeps, final gap " +
        nnql::format_double(model.final_gap));
    if (!model.converged) {
      log("offline: did not converge within max_sweeps");
      return kNonConverged;
    }
    return kOk;
  }
};

struct RunOnlineCmd {
  std::string trajectory;
  std::size_t actions = 0;
  double gamma = 0.9;
  double beta = 0.0;
  std::size_t k = 0;
  std::string norm = "l2";
  std::string resume;
  std::string out = "online_checkpoint";
  std::string config;

  json flags() const {
    return json{{"trajectory", trajectory}, {"actions", actions}, {"gamma", gamma}, {"beta", beta}, {"k", k},
                {"norm", norm},             {"resume", resume},   {"out", out}};
  }

  int run() const {
    const json j = resolve(flags(), config);
    const auto traj_path = j.at("trajectory").get<std::string>();
    if (traj_path.empty()) throw nnql::InvalidInput("--trajectory is required");
    const auto traj = nnql::load_trajectory(traj_path, j.at("actions").get<std::size_t>());
    const auto resume_stem = j.at("resume").get<std::string>();
    std::optional<nnql::OnlineLearner> learner;
    if (!resume_stem.empty()) {
      learner.emplace(nnql::load_checkpoint(stem_file(resume_stem, ".csv"), stem_file(resume_stem, ".json")));
      if (learner->params().dim != traj.dim || learner->params().num_actions != traj.num_actions)
        throw nnql::InvalidInput("checkpoint does not match the trajectory");
    } else {
      auto p = nnql::OnlineParams::defaults(j.at("gamma").get<double>(), traj.dim, traj.num_actions);
      const double b = j.at("beta").get<double>();
      if (b > 0.0) p.beta = b;
      p.k_fixed = j.at("k").get<std::size_t>();
      p.norm = nnql::parse_norm(j.at("norm").get<std::string>());
      learner.emplace(p);
    }
    if (learner->t_now() > traj.length()) throw nnql::InvalidInput("checkpoint is ahead of the trajectory");
    for (std::size_t t = learner->t_now() + 1; t <= traj.length(); ++t) {
      const auto& st = traj.steps[t - 1];
      learner->step(st.t, st.state, st.action, st.reward, traj.state(t + 1));
    }
    const auto stem = j.at("out").get<std::string>();
    nnql::save_checkpoint(stem_file(stem, ".csv"), stem_file(stem, ".json"), *learner);
    const auto& d = learner->diagnostics();
    log("online: t=" + std::to_string(learner->t_now()) + ", truncated queries " +
        std::to_string(d.truncated_queries) + ", empty fallbacks " + std::to_string(d.empty_fallbacks));
    return kOk;
  }
};

struct EvaluateCmd {
  EnvFlags env;
  std::string model;
  std::string checkpoint;
  std::string trajectory;
  std::string oracle;
  double gamma = 0.9;
  double h = 0.0;
  double tol = 1e-9;
  std::size_t grid_points = 0;
  std::size_t samples = 2000;
  std::size_t burn_in = 1000;
  std::size_t thin = 5;
  std::optional<std::uint64_t> seed;
  std::string out = "metrics.csv";
  std::string config;

  json flags() const {
    json j = env.to_json();
    j["model"] = model;
    j["checkpoint"] = checkpoint;
    j["trajectory"] = trajectory;
    j["oracle_file"] = oracle;
    j["gamma"] = gamma;
    j["oracle"] = {{"h", h}, {"tol", tol}};
    j["query"] = {{"grid_points", grid_points}, {"stationary_samples", samples}, {"burn_in", burn_in}, {"thin", thin}};
    j["out"] = out;
    if (seed) j["seed"] = *seed;
    return j;
  }

  int run() const {
    const json j = resolve(flags(), config);
    const auto seed_value = require_seed(j);
    const auto envspec = nnql::make_env(env_options(j));
    const auto policy = nnql::make_policy(policy_name(j), envspec);

    nnql::OracleQ o;
    const auto oracle_stem = j.at("oracle_file").get<std::string>();
    if (!oracle_stem.empty()) {
      o = nnql::load_oracle(stem_file(oracle_stem, ".csv"), stem_file(oracle_stem, ".json"));
    } else {
      const double hh = get_or(j.at("oracle"), "h", 0.0);
      o = nnql::grid_value_iteration(envspec, hh > 0.0 ? hh : nnql::default_oracle_h(envspec),
                                     j.at("gamma").get<double>(), get_or(j.at("oracle"), "tol", 1e-9));
    }

    const auto model_stem = j.at("model").get<std::string>();
    const auto ckpt_stem = j.at("checkpoint").get<std::string>();
    if (model_stem.empty() == ckpt_stem.empty())
      throw nnql::InvalidInput("give exactly one of --model and --checkpoint");
    std::optional<nnql::OfflineModel> offline;
    std::optional<nnql::OnlineLearner> online;
    nnql::Estimator est;
    if (!model_stem.empty()) {
      const auto meta = nnql::detail::read_json(stem_file(model_stem, ".json"));
      auto traj_path = j.at("trajectory").get<std::string>();
      if (traj_path.empty()) traj_path = meta.at("trajectory").get<std::string>();
      const auto traj = nnql::load_trajectory(traj_path, meta.at("num_actions").get<std::size_t>());
      offline.emplace(nnql::load_offline_model(stem_file(model_stem, ".csv"), stem_file(model_stem, ".json"), traj));
      est = [&](const nnql::StateVec& s, nnql::ActionId a) { return nnql::evaluate_q(*offline, s, a).value; };
    } else {
      online.emplace(nnql::load_checkpoint(stem_file(ckpt_stem, ".csv"), stem_file(ckpt_stem, ".json")));
      est = [&](const nnql::StateVec& s, nnql::ActionId a) { return online->query(s, a).value; };
    }

    const auto& q = j.at("query");
    auto rng = nnql::make_rng(seed_value, {2});
    const auto samples = nnql::stationary_samples(envspec, policy, q.at("burn_in").get<std::size_t>(),
                                                  q.at("stationary_samples").get<std::size_t>(),
                                                  q.at("thin").get<std::size_t>(), envspec.default_start, rng);
    std::vector<nnql::StateVec> grid;
    if (envspec.support == nnql::Support::Bounded) {
      const auto gp = q.at("grid_points").get<std::size_t>();
      grid = nnql::query_grid(envspec.box, gp > 0 ? gp : 500 * envspec.dim);
    }
    const auto sup = nnql::sup_error(est, o, grid.empty() ? std::span<const nnql::StateVec>(samples) : grid);
    const auto l1 = nnql::weighted_l1_error(est, o, samples);

    auto out = nnql::detail::open_out(j.at("out").get<std::string>());
    out << "metric,value,used,skipped\n";
    out << "sup_err," << nnql::format_double(sup.value) << ',' << sup.used << ',' << sup.skipped << '\n';
    out << "w_l1_err," << nnql::format_double(l1.value) << ',' << l1.used << ',' << l1.skipped << '\n';
    log("sup_err " + nnql::format_double(sup.value) + ", w_l1_err " + nnql::format_double(l1.value));
    return kOk;
  }
};

struct RateSweepCmd {
  EnvFlags env;
  std::vector<std::string> algorithms{"offline"};
  std::vector<std::size_t> T_grid;
  std::vector<double> gamma_grid{0.9};
  std::vector<std::uint64_t> seeds;
  std::optional<std::uint64_t> seed;
  std::size_t k = 0;
  double beta = 0.0;
  std::string norm = "l2";
  std::size_t grid_points = 0;
  std::size_t samples = 2000;
  std::size_t burn_in = 1000;
  std::size_t thin = 5;
  double h = 0.0;
  double tol = 1e-9;
  std::string cache_dir;
  std::string records = "records.csv";
  std::string summary = "summary.csv";
  std::string metadata = "metadata.json";
  bool timing_in_csv = false;
  std::string config;

  json flags() const {
    json j = env.to_json();
    j["algorithms"] = algorithms;
    j["T_grid"] = T_grid;
    j["gamma_grid"] = gamma_grid;
    if (!seeds.empty()) j["seeds"] = seeds;
    if (seed) j["seed"] = *seed;
    j["k"] = k;
    j["beta"] = beta > 0.0 ? json(beta) : json(nullptr);
    j["norm"] = norm;
    j["query"] = {{"grid_points", grid_points}, {"stationary_samples", samples}, {"burn_in", burn_in}, {"thin", thin}};
    j["oracle"] = {{"h", h}, {"tol", tol}, {"cache_dir", cache_dir}};
    j["output"] = {{"records", records}, {"summary", summary}, {"metadata", metadata}, {"timing_in_csv", timing_in_csv}};
    return j;
  }

  int run() const {
    json j = resolve(flags(), config);
    // A single seed from either source expands to the seed list.
    if ((!j.contains("seeds") || j.at("seeds").empty()) && j.contains("seed")) j["seeds"] = {j.at("seed")};
    if (!j.contains("seeds") || j.at("seeds").empty()) throw nnql::InvalidInput("--seed or --seeds is required");
    j.erase("seed");
    auto c = nnql::ExperimentConfig::from_json(j);
    const auto report = nnql::run_experiment(c, [](const nnql::ErrorRecord& r) {
      log(std::string(nnql::algorithm_name(r.alg)) + " gamma=" + nnql::format_double(r.gamma) +
          " T=" + std::to_string(r.T) + " seed=" + std::to_string(r.seed) + " sup=" + nnql::format_double(r.sup_err) +
          " w_l1=" + nnql::format_double(r.w_l1_err));
    });
    nnql::write_report(c, report);
    for (const auto& f : report.fits)
      log(std::string(nnql::algorithm_name(f.alg)) + " gamma=" + nnql::format_double(f.gamma) + " " + f.metric +
          " slope " + nnql::format_double(f.fit.slope));
    if (report.nonconverged) {
      log("rate-sweep: some offline fits hit max_sweeps");
      return kNonConverged;
    }
    return kOk;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kNN Q-learning toolkit"};
  app.require_subcommand(1);

  SimulateCmd sim;
  auto* s = app.add_subcommand("simulate", "sample a trajectory and write it as CSV");
  sim.env.add(*s);
  s->add_option("--T", sim.T, "trajectory length")->capture_default_str();
  s->add_option("--seed", sim.seed, "random seed (required)");
  s->add_option("--out", sim.out, "output CSV")->capture_default_str();
  s->add_option("--config", sim.config, "JSON config; its values override flags");

  OracleCmd orc;
  auto* o = app.add_subcommand("oracle", "grid value iteration; writes <out>.csv and <out>.json");
  orc.env.add(*o);
  o->add_option("--gamma", orc.gamma, "discount")->capture_default_str();
  o->add_option("--oracle-h", orc.h, "lattice spacing (0 = default)")->capture_default_str();
  o->add_option("--tol", orc.tol, "value-iteration tolerance")->capture_default_str();
  o->add_option("--out", orc.out, "output stem")->capture_default_str();
  o->add_option("--config", orc.config, "JSON config; its values override flags");

  FitOfflineCmd off;
  auto* f = app.add_subcommand("fit-offline", "offline fixed-point fit; writes <out>.csv and <out>.json");
  f->add_option("--trajectory", off.trajectory, "trajectory CSV");
  f->add_option("--actions", off.actions, "number of actions (0 = infer)")->capture_default_str();
  f->add_option("--gamma", off.gamma, "discount")->capture_default_str();
  f->add_option("--k", off.k, "neighbors (0 = ceil(T^(2/(d+2))))")->capture_default_str();
  f->add_option("--eps", off.eps, "sup-norm stopping threshold (0 = 1e-8 R/(1-gamma))")->capture_default_str();
  f->add_option("--max-sweeps", off.max_sweeps, "sweep limit")->capture_default_str();
  f->add_option("--norm", off.norm, "l2, l1 or linf")->capture_default_str();
  f->add_option("--reward-bound", off.reward_bound, "R, for the default threshold")->capture_default_str();
  f->add_option("--out", off.out, "output stem")->capture_default_str();
  f->add_option("--config", off.config, "JSON config; its values override flags");

  RunOnlineCmd onl;
  auto* r = app.add_subcommand("run-online", "stream a trajectory through the online learner; writes a checkpoint");
  r->add_option("--trajectory", onl.trajectory, "trajectory CSV");
  r->add_option("--actions", onl.actions, "number of actions (0 = infer)")->capture_default_str();
  r->add_option("--gamma", onl.gamma, "discount")->capture_default_str();
  r->add_option("--beta", onl.beta, "window fraction (0 = gamma^((d+2)/(d+3)))")->capture_default_str();
  r->add_option("--k", onl.k, "constant neighbor count (0 = schedule)")->capture_default_str();
  r->add_option("--norm", onl.norm, "l2, l1 or linf")->capture_default_str();
  r->add_option("--resume", onl.resume, "checkpoint stem to continue from");
  r->add_option("--out", onl.out, "checkpoint stem")->capture_default_str();
  r->add_option("--config", onl.config, "JSON config; its values override flags");

  EvaluateCmd ev;
  auto* e = app.add_subcommand("evaluate", "error metrics of a saved model against the oracle");
  ev.env.add(*e);
  e->add_option("--model", ev.model, "offline model stem");
  e->add_option("--checkpoint", ev.checkpoint, "online checkpoint stem");
  e->add_option("--trajectory", ev.trajectory, "trajectory CSV (default: the one recorded with the model)");
  e->add_option("--oracle", ev.oracle, "oracle stem (default: build one)");
  e->add_option("--gamma", ev.gamma, "discount, when building the oracle")->capture_default_str();
  e->add_option("--oracle-h", ev.h, "oracle lattice spacing (0 = default)")->capture_default_str();
  e->add_option("--tol", ev.tol, "oracle tolerance")->capture_default_str();
  e->add_option("--grid-points", ev.grid_points, "query grid size (0 = 500 d)")->capture_default_str();
  e->add_option("--samples", ev.samples, "stationary samples")->capture_default_str();
  e->add_option("--burn-in", ev.burn_in, "burn-in steps")->capture_default_str();
  e->add_option("--thin", ev.thin, "thinning stride")->capture_default_str();
  e->add_option("--seed", ev.seed, "random seed (required)");
  e->add_option("--out", ev.out, "metrics CSV")->capture_default_str();
  e->add_option("--config", ev.config, "JSON config; its values override flags");

  RateSweepCmd rs;
  auto* w = app.add_subcommand("rate-sweep", "error-vs-T sweep with log-log slope fits");
  rs.env.add(*w);
  w->add_option("--alg", rs.algorithms, "offline and/or online")->capture_default_str();
  w->add_option("--T", rs.T_grid, "trajectory lengths");
  w->add_option("--gamma", rs.gamma_grid, "discounts")->capture_default_str();
  w->add_option("--seeds", rs.seeds, "seed list");
  w->add_option("--seed", rs.seed, "single seed");
  w->add_option("--k", rs.k, "override k (0 = schedules)")->capture_default_str();
  w->add_option("--beta", rs.beta, "override beta (0 = schedule)")->capture_default_str();
  w->add_option("--norm", rs.norm, "l2, l1 or linf")->capture_default_str();
  w->add_option("--grid-points", rs.grid_points, "query grid size (0 = 500 d)")->capture_default_str();
  w->add_option("--samples", rs.samples, "stationary samples")->capture_default_str();
  w->add_option("--burn-in", rs.burn_in, "burn-in steps")->capture_default_str();
  w->add_option("--thin", rs.thin, "thinning stride")->capture_default_str();
  w->add_option("--oracle-h", rs.h, "oracle lattice spacing (0 = default)")->capture_default_str();
  w->add_option("--tol", rs.tol, "oracle tolerance")->capture_default_str();
  w->add_option("--cache-dir", rs.cache_dir, "oracle cache directory");
  w->add_option("--records", rs.records, "records CSV")->capture_default_str();
  w->add_option("--summary", rs.summary, "slope summary CSV")->capture_default_str();
  w->add_option("--metadata", rs.metadata, "metadata JSON (timings, diagnostics)")->capture_default_str();
  w->add_flag("--timing-in-csv", rs.timing_in_csv, "fill runtime_ms in the records CSV");
  w->add_option("--config", rs.config, "JSON config; its values override flags");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (s->parsed()) return sim.run();
    if (o->parsed()) return orc.run();
    if (f->parsed()) return off.run();
    if (r->parsed()) return onl.run();
    if (e->parsed()) return ev.run();
    if (w->parsed()) return rs.run();
  } catch (const nnql::InvalidInput& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kInvalid;
  } catch (const nnql::OutOfDomain& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kInvalid;
  } catch (const nnql::Unsupported& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kInvalid;
  } catch (const nnql::json::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kInvalid;
  } catch (const std::filesystem::filesystem_error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kInvalid;
  }
  return kInvalid;
}
