#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "nnql/envs.hpp"
#include "nnql/offline.hpp"

using namespace nnql;

namespace {

Trajectory make_traj(const std::string& env_name, std::size_t T, std::uint64_t seed, double sigma = 0.1,
                     std::size_t dim = 1, double clip = 0.0) {
  EnvOptions opt;
  opt.name = env_name;
  opt.sigma = sigma;
  opt.dim = dim;
  opt.noise_clip = clip;
  const auto env = make_env(opt);
  auto rng = make_rng(seed, {1, T});
  return sample_trajectory(env, make_policy("uniform", env), T, env.default_start, rng);
}

// F computed straight from the definition with a linear-scan neighbor search.
std::vector<double> brute_force_operator(const std::vector<double>& q, const Trajectory& traj, std::size_t k,
                                         double gamma) {
  const std::size_t T = traj.length();
  std::vector<double> out(T);
  for (std::size_t t = 1; t <= T; ++t) {
    const StateVec& next = traj.state(t + 1);
    double best = -1e300;
    for (ActionId a = 0; a < traj.num_actions; ++a) {
      std::vector<std::pair<double, StepIndex>> c;
      for (const auto& st : traj.steps) {
        if (st.action != a) continue;
        double r = 0.0;
        for (std::size_t i = 0; i < traj.dim; ++i) r += (st.state[i] - next[i]) * (st.state[i] - next[i]);
        c.emplace_back(r, st.t);
      }
      std::sort(c.begin(), c.end());
      const std::size_t n = std::min(k, c.size());
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) sum += q[c[i].second - 1];
      best = std::max(best, n ? sum / static_cast<double>(n) : 0.0);
    }
    out[t - 1] = traj.steps[t - 1].reward + gamma * best;
  }
  return out;
}

double sup_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

// Snaps states to a coarse lattice so neighbor sets contain exact ties.
Trajectory quantize(Trajectory traj, double step) {
  auto snap = [&](const StateVec& s) {
    std::vector<double> x(s.coords().begin(), s.coords().end());
    for (auto& v : x) v = std::round(v / step) * step;
    return StateVec(std::move(x));
  };
  for (auto& st : traj.steps) st.state = snap(st.state);
  traj.terminal_state = snap(traj.terminal_state);
  return traj;
}

}  // namespace

TEST(ChooseK, Examples) {
  EXPECT_EQ(choose_k_offline(4096, 2), 64u);
  EXPECT_EQ(choose_k_offline(1, 1), 1u);
  EXPECT_EQ(choose_k_offline(1, 5), 1u);
  EXPECT_EQ(choose_k_offline(1000, 1), 100u);
  EXPECT_THROW(choose_k_offline(0, 1), InvalidInput);
}

TEST(ChooseK, LeastIntegerRootByScan) {
  for (std::size_t d = 1; d <= 4; ++d)
    for (std::size_t T = 1; T <= 3000; T += (T < 100 ? 1 : 37)) {
      const auto target = static_cast<unsigned __int128>(T) * T;
      std::size_t k = 1;
      for (;; ++k) {
        unsigned __int128 p = 1;
        for (std::size_t i = 0; i < d + 2; ++i) p *= k;
        if (p >= target) break;
      }
      EXPECT_EQ(choose_k_offline(T, d), std::min(k, T)) << "T=" << T << " d=" << d;
    }
}

TEST(BellmanOperator, ZeroInputGivesRewards) {
  const auto traj = make_traj("box", 300, 1);
  OfflineParams p;
  p.k = 10;
  const auto out = apply_bellman_operator(std::vector<double>(300, 0.0), traj, build_trajectory_index(traj, p.norm), p);
  for (std::size_t t = 0; t < 300; ++t) EXPECT_EQ(out[t], traj.steps[t].reward);
}

TEST(BellmanOperator, GeometricSeriesOnConstantReward) {
  const auto traj = make_traj("constant", 200, 2, 0.0);
  OfflineParams p;
  p.k = 5;
  p.gamma = 0.5;
  const BellmanOperator op(traj, build_trajectory_index(traj, p.norm), p);
  std::vector<double> q(200, 0.0);
  double expected = 0.0;
  for (int i = 0; i < 30; ++i) {
    q = op.apply(q);
    expected = 1.0 + 0.5 * expected;
    for (double v : q) EXPECT_DOUBLE_EQ(v, expected);
  }
}

TEST(BellmanOperator, MatchesDefinitionWithTies) {
  std::mt19937_64 gen(3);
  for (std::size_t dim : {1u, 2u}) {
    for (bool ties : {false, true}) {
      auto traj = make_traj("box", 400, 4 + dim, 0.1, dim);
      if (ties) traj = quantize(traj, 0.05);
      for (std::size_t k : {1u, 7u, 33u}) {
        OfflineParams p;
        p.k = k;
        p.gamma = 0.9;
        const BellmanOperator op(traj, build_trajectory_index(traj, p.norm), p);
        std::uniform_real_distribution<double> u(-5.0, 5.0);
        std::vector<double> q(traj.length());
        for (auto& v : q) v = u(gen);
        EXPECT_LE(sup_diff(op.apply(q), brute_force_operator(q, traj, k, 0.9)), 1e-12);
      }
    }
  }
}

TEST(BellmanOperator, ContractionRandomPairs) {
  std::mt19937_64 gen(9);
  const auto traj = make_traj("box", 200, 7);
  for (double gamma : {0.5, 0.9, 0.99}) {
    OfflineParams p;
    p.k = choose_k_offline(200, 1);
    p.gamma = gamma;
    const BellmanOperator op(traj, build_trajectory_index(traj, p.norm), p);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    for (int pair = 0; pair < 100; ++pair) {
      std::vector<double> a(200), b(200);
      for (auto& v : a) v = u(gen);
      for (auto& v : b) v = u(gen) * (pair % 2 ? 1e-3 : 1.0);
      EXPECT_LE(sup_diff(op.apply(a), op.apply(b)), gamma * sup_diff(a, b) + 1e-12);
    }
  }
}

TEST(BellmanOperator, MissingActionFallsBackToZero) {
  Trajectory traj;
  traj.dim = 1;
  traj.num_actions = 2;
  for (StepIndex t = 1; t <= 20; ++t) traj.steps.push_back({t, StateVec{0.05 * static_cast<double>(t)}, 0, 1.0});
  traj.terminal_state = StateVec{0.5};
  OfflineParams p;
  p.k = 3;
  p.gamma = 0.5;
  const BellmanOperator op(traj, build_trajectory_index(traj, p.norm), p);
  EXPECT_EQ(op.empty_action_queries(), 20u);
  const std::vector<double> neg(20, -4.0);
  // Action 0 averages -4, the empty action contributes 0 and wins the max.
  for (double v : op.apply(neg)) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(FitOffline, ConstantRewardFixedPoint) {
  const auto traj = make_traj("constant", 500, 3, 0.0);
  OfflineParams p;
  p.k = choose_k_offline(500, 1);
  p.gamma = 0.5;
  p.fix_tol = 1e-9;
  const auto m = fit_offline(traj, p);
  EXPECT_TRUE(m.converged);
  for (double v : m.Q) EXPECT_NEAR(v, 2.0, 1e-9);
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) EXPECT_NEAR(evaluate_q(m, StateVec{u(gen)}, i % 2).value, 2.0, 1e-9);
}

TEST(FitOffline, SweepCountBound) {
  for (double gamma : {0.5, 0.8, 0.95}) {
    const auto traj = make_traj("box", 1000, 4);
    OfflineParams p;
    p.k = choose_k_offline(1000, 1);
    p.gamma = gamma;
    p.fix_tol = OfflineParams::default_tolerance(1.0, gamma);
    const auto m = fit_offline(traj, p);
    // Q_m bounds the sup of the iterates up to the noise; 1.5 covers sigma = 0.1.
    const double qm = 1.5 / (1.0 - gamma);
    EXPECT_LE(m.sweeps_run, static_cast<std::size_t>(std::ceil(std::log(qm / p.fix_tol) / std::log(1.0 / gamma))) + 1);
    EXPECT_TRUE(m.converged);
  }
}

TEST(FitOffline, ResidualAtConvergence) {
  const auto traj = make_traj("box", 2000, 5);
  OfflineParams p;
  p.k = choose_k_offline(2000, 1);
  p.gamma = 0.9;
  p.fix_tol = 1e-7;
  const auto m = fit_offline(traj, p);
  const BellmanOperator op(traj, m.index, p);
  EXPECT_LE(sup_diff(op.apply(m.Q), m.Q), p.fix_tol * (1.0 + p.gamma) / (1.0 - p.gamma));
}

TEST(FitOffline, DeterministicAndNonConvergenceFlag) {
  const auto traj = make_traj("box", 800, 6);
  OfflineParams p;
  p.k = 20;
  p.gamma = 0.9;
  const auto a = fit_offline(traj, p), b = fit_offline(traj, p);
  EXPECT_EQ(a.Q, b.Q);
  p.max_sweeps = 3;
  const auto c = fit_offline(traj, p);
  EXPECT_FALSE(c.converged);
  EXPECT_EQ(c.sweeps_run, 3u);
  EXPECT_GT(c.final_gap, p.fix_tol);
}

TEST(FitOffline, ParameterErrors) {
  const auto traj = make_traj("box", 10, 6);
  OfflineParams p;
  p.k = 11;
  EXPECT_THROW(fit_offline(traj, p), InvalidInput);
  p.k = 2;
  p.gamma = 1.0;
  EXPECT_THROW(fit_offline(traj, p), InvalidInput);
  p.gamma = 0.5;
  p.fix_tol = 0.0;
  EXPECT_THROW(fit_offline(traj, p), InvalidInput);
}

TEST(FitOffline, BoundedIteratesWithClippedNoise) {
  const double clip = 0.3, gamma = 0.8;
  const auto traj = make_traj("box", 3000, 8, 0.5, 1, clip);
  OfflineParams p;
  p.k = choose_k_offline(3000, 1);
  p.gamma = gamma;
  const auto m = fit_offline(traj, p);
  for (double v : m.Q) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GE(v, -clip / (1.0 - gamma));
    EXPECT_LE(v, (1.0 + clip) / (1.0 - gamma));
  }
}

TEST(EvaluateQ, ReproducesSweepValueAtNextState) {
  const auto traj = make_traj("box", 1500, 9);
  OfflineParams p;
  p.k = choose_k_offline(1500, 1);
  p.gamma = 0.8;
  const auto m = fit_offline(traj, p);
  const BellmanOperator op(traj, m.index, p);
  for (StepIndex t = 1; t <= 1500; t += 37)
    for (ActionId a = 0; a < 2; ++a)
      EXPECT_NEAR(evaluate_q(m, traj.state(t + 1), a).value, op.q_at_next(m.Q, t, a), 1e-12);
}

TEST(EvaluateQ, SingleNeighborIdentity) {
  const auto traj = make_traj("box", 300, 10);
  OfflineParams p;
  p.k = 1;
  p.gamma = 0.7;
  const auto m = fit_offline(traj, p);
  for (StepIndex t = 1; t <= 300; t += 11) {
    const auto& st = traj.steps[t - 1];
    const auto est = evaluate_q(m, st.state, st.action);
    // An earlier step at the same state would win the tie; states are continuous here.
    EXPECT_EQ(est.value, m.Q[t - 1]);
    EXPECT_EQ(est.neighbors, 1u);
  }
}

TEST(EvaluateQ, MissingActionWarns) {
  Trajectory traj;
  traj.dim = 1;
  traj.num_actions = 2;
  for (StepIndex t = 1; t <= 5; ++t) traj.steps.push_back({t, StateVec{0.1 * static_cast<double>(t)}, 0, 1.0});
  traj.terminal_state = StateVec{0.5};
  OfflineParams p;
  p.k = 2;
  p.gamma = 0.5;
  const auto m = fit_offline(traj, p);
  const auto est = evaluate_q(m, StateVec{0.3}, 1);
  EXPECT_TRUE(est.fallback());
  EXPECT_EQ(est.value, 0.0);
}
