// Offline and online learners on the same trajectories of the box environment,
// scored against the grid oracle.
#include <cstdio>

#include "nnql/nnql.hpp"

using namespace nnql;

int main() {
  const double gamma = 0.8;
  const std::uint64_t seed = 1;
  EnvOptions opt;
  const EnvSpec env = make_env(opt);
  const Policy policy = make_policy("uniform", env);
  const OracleQ oracle = grid_value_iteration(env, default_oracle_h(env), gamma, 1e-9);
  const auto grid = query_grid(env.box, 500);

  std::printf("%8s %6s %12s %6s %12s\n", "T", "k_off", "sup_off", "k_on", "sup_on");
  for (std::size_t T : {1u << 10, 1u << 12, 1u << 14}) {
    auto rng = make_rng(seed, {1, T});
    const Trajectory traj = sample_trajectory(env, policy, T, env.default_start, rng);

    OfflineParams p;
    p.k = choose_k_offline(T, env.dim);
    p.gamma = gamma;
    p.fix_tol = OfflineParams::default_tolerance(env.reward_bound, gamma);
    const OfflineModel model = fit_offline(traj, p);
    const double off =
        sup_error([&](const StateVec& s, ActionId a) { return evaluate_q(model, s, a).value; }, oracle, grid).value;

    const auto params = OnlineParams::defaults(gamma, env.dim, env.num_actions);
    const OnlineLearner learner = run_online(traj, params);
    const double on =
        sup_error([&](const StateVec& s, ActionId a) { return learner.query(s, a).value; }, oracle, grid).value;

    std::printf("%8zu %6zu %12.5f %6zu %12.5f\n", T, p.k, off, params.k(T), on);
  }
  return 0;
}
