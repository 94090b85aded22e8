#include <cmath>

#include <gtest/gtest.h>

#include "nnql/envs.hpp"
#include "nnql/mdp.hpp"

using namespace nnql;

namespace {

EnvSpec identity_env(double level = 1.0, double sigma = 0.0) {
  EnvOptions opt;
  opt.name = "identity";
  opt.level = level;
  opt.sigma = sigma;
  return make_env(opt);
}

}  // namespace

TEST(Rng, SameSeedAndStreamReproduce) {
  auto a = make_rng(7, {1, 100}), b = make_rng(7, {1, 100}), c = make_rng(7, {2});
  const auto x = a(), y = b(), z = c();
  EXPECT_EQ(x, y);
  EXPECT_NE(x, z);
}

TEST(Policy, RejectsZeroProbability) {
  EXPECT_THROW(Policy::fixed("p", 1, {1.0, 0.0}), InvalidInput);
  EXPECT_THROW(Policy::fixed("p", 1, {0.6, 0.6}), InvalidInput);
}

TEST(SampleAction, UniformFrequenciesWithinBinomialBound) {
  const auto pol = Policy::uniform(1, 2);
  auto rng = make_rng(1);
  const int n = 100000;
  int ones = 0;
  for (int i = 0; i < n; ++i) ones += sample_action(pol, StateVec{0.5}, rng) == 1;
  const double sd = std::sqrt(n * 0.25);
  EXPECT_LE(std::abs(ones - n / 2), 3.0 * sd);
}

TEST(SampleAction, DeterministicGivenSeed) {
  const auto pol = Policy::fixed("p", 1, {0.2, 0.3, 0.5});
  auto r1 = make_rng(3), r2 = make_rng(3);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_action(pol, StateVec{0.1}, r1), sample_action(pol, StateVec{0.1}, r2));
}

TEST(SampleAction, DimensionMismatchThrows) {
  const auto pol = Policy::uniform(2, 2);
  auto rng = make_rng(0);
  EXPECT_THROW(sample_action(pol, StateVec{0.1}, rng), InvalidInput);
}

TEST(StepEnv, NoiseFreeConstantIdentity) {
  const auto env = identity_env();
  auto rng = make_rng(0);
  const auto tr = step_env(env, StateVec{0.3}, 1, rng);
  EXPECT_EQ(tr.reward, 1.0);
  EXPECT_EQ(tr.next_state, StateVec{0.3});
}

TEST(StepEnv, InvalidActionThrows) {
  const auto env = identity_env();
  auto rng = make_rng(0);
  EXPECT_THROW(step_env(env, StateVec{0.3}, 2, rng), InvalidInput);
}

TEST(StepEnv, NoiseMeanMatchesReward) {
  EnvOptions opt;
  opt.sigma = 0.1;
  const auto env = make_env(opt);
  const StateVec s{0.37};
  const double r = env.reward_fn(s, 1);
  auto rng = make_rng(11);
  const int n = 100000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += step_env(env, s, 1, rng).reward;
  EXPECT_NEAR(sum / n, r, 4.0 * 0.1 / std::sqrt(static_cast<double>(n)));
}

TEST(StepEnv, ClippedNoiseStaysInBand) {
  EnvOptions opt;
  opt.sigma = 0.5;
  opt.noise_clip = 0.2;
  const auto env = make_env(opt);
  auto rng = make_rng(2);
  for (int i = 0; i < 10000; ++i) {
    const auto tr = step_env(env, StateVec{0.5}, 0, rng);
    EXPECT_LE(std::abs(tr.reward - env.reward_fn(StateVec{0.5}, 0)), 0.2 + 1e-15);
  }
}

TEST(SampleTrajectory, IdentityKeepsState) {
  const auto env = identity_env();
  auto rng = make_rng(5);
  const auto traj = sample_trajectory(env, Policy::uniform(1, 2), 50, StateVec{0.3}, rng);
  for (StepIndex t = 1; t <= 51; ++t) EXPECT_EQ(traj.state(t), StateVec{0.3});
}

TEST(SampleTrajectory, IndexingContract) {
  const auto env = identity_env();
  auto rng = make_rng(5);
  const auto traj = sample_trajectory(env, Policy::uniform(1, 2), 5, StateVec{0.3}, rng);
  ASSERT_EQ(traj.length(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(traj.steps[i].t, i + 1);
  EXPECT_EQ(traj.terminal_state.dim(), 1u);
  EXPECT_THROW(traj.state(7), InvalidInput);
  EXPECT_THROW(sample_trajectory(env, Policy::uniform(1, 2), 0, StateVec{0.3}, rng), InvalidInput);
}

TEST(SampleTrajectory, BothActionsOccur) {
  // P(one action never drawn in 1000 fair draws) = 2 * 2^-1000.
  const double log_fail = std::log(2.0) - 1000.0 * std::log(2.0);
  EXPECT_LT(log_fail, -690.0);
  EnvOptions opt;
  const auto env = make_env(opt);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto rng = make_rng(seed);
    const auto traj = sample_trajectory(env, Policy::uniform(1, 2), 1000, env.default_start, rng);
    std::size_t zeros = 0;
    for (const auto& st : traj.steps) zeros += st.action == 0;
    EXPECT_GT(zeros, 0u);
    EXPECT_LT(zeros, 1000u);
  }
}

TEST(SampleTrajectory, BitIdenticalForSameSeed) {
  EnvOptions opt;
  opt.name = "ar1";
  opt.dim = 2;
  const auto env = make_env(opt);
  const auto pol = make_policy("tilted", env);
  auto r1 = make_rng(9, {1}), r2 = make_rng(9, {1});
  const auto a = sample_trajectory(env, pol, 500, env.default_start, r1);
  const auto b = sample_trajectory(env, pol, 500, env.default_start, r2);
  for (std::size_t i = 0; i < 500; ++i) {
    EXPECT_EQ(a.steps[i].state, b.steps[i].state);
    EXPECT_EQ(a.steps[i].action, b.steps[i].action);
    EXPECT_EQ(a.steps[i].reward, b.steps[i].reward);
  }
  EXPECT_EQ(a.terminal_state, b.terminal_state);
}
