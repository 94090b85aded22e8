#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nnql/state.hpp"

namespace nnql {

using Rng = std::mt19937_64;

/// Independent, reproducible generator for (seed, stream...) tuples.
inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream = {}) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed),
                                   static_cast<std::uint32_t>(seed >> 32)};
  for (auto s : stream) {
    words.push_back(static_cast<std::uint32_t>(s));
    words.push_back(static_cast<std::uint32_t>(s >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

struct StepRecord {
  StepIndex t = 0;
  StateVec state;
  ActionId action = 0;
  double reward = 0.0;
};

/// Sample path S_1, A_1, R_1, ..., S_T, A_T, R_T, S_{T+1}.
struct Trajectory {
  std::vector<StepRecord> steps;
  StateVec terminal_state;
  std::size_t dim = 0;
  std::size_t num_actions = 0;

  std::size_t length() const noexcept { return steps.size(); }

  /// S_t for t in [1, T+1].
  const StateVec& state(StepIndex t) const {
    if (t >= 1 && t <= steps.size()) return steps[t - 1].state;
    if (t == steps.size() + 1) return terminal_state;
    throw InvalidInput("Trajectory::state: step " + std::to_string(t) + " out of range");
  }

  void validate() const {
    if (steps.empty()) throw InvalidInput("Trajectory: T must be >= 1");
    if (dim == 0 || num_actions == 0) throw InvalidInput("Trajectory: dim and num_actions must be >= 1");
    for (std::size_t i = 0; i < steps.size(); ++i) {
      const auto& st = steps[i];
      if (st.t != i + 1) throw InvalidInput("Trajectory: step indices must be contiguous from 1");
      require_dim(st.state, dim, "Trajectory");
      if (st.action >= num_actions) throw InvalidInput("Trajectory: action id out of range");
      if (!std::isfinite(st.reward)) throw InvalidInput("Trajectory: non-finite reward");
    }
    require_dim(terminal_state, dim, "Trajectory terminal state");
  }
};

/// Product-form transition density p(y|s,a) = prod_i p_i(y_i | s_i, a).
///
/// `lipschitz` is the pointwise modulus L_i(y) of p_i(y|.,a) in s;
/// `sup_density` is sup_s p_i(y|s,a). Both are only required for the
/// kernel Lipschitz check on bounded environments.
struct SeparableKernel {
  std::function<double(std::size_t axis, double s, ActionId a, double y)> density;
  std::function<double(std::size_t axis, double y, ActionId a)> lipschitz;
  std::function<double(std::size_t axis, double y, ActionId a)> sup_density;
};

enum class Support { Bounded, Unbounded };

/// An MDP with a known generative model. Immutable once built.
struct EnvSpec {
  std::string name;
  std::size_t dim = 1;
  std::size_t num_actions = 2;
  /// Mean reward r(s,a).
  std::function<double(const StateVec&, ActionId)> reward_fn;
  /// Draws S' ~ p(.|s,a).
  std::function<StateVec(const StateVec&, ActionId, Rng&)> transition;
  /// Gaussian reward noise scale; 0 means noise-free.
  double noise_sigma = 0.0;
  /// Symmetric clip of the noise at +-noise_clip (0 = unclipped).
  double noise_clip = 0.0;
  double reward_bound = 1.0;          // R
  double reward_lipschitz = 0.0;      // L_r
  double kernel_lipschitz_mass = 0.0; // C_p
  Support support = Support::Bounded;
  /// Bounded: the state space. Unbounded: box holding all but
  /// `box_mass_loss` of the stationary mass (oracle truncation).
  Box box;
  double box_mass_loss = 0.0;
  std::optional<SeparableKernel> kernel;
  /// Mixing parameter m of the minorization condition, when known.
  double mixing_m = 1.0;
  StateVec default_start;
  /// Constants that are declared but could not be verified constructively.
  std::vector<std::string> unverified;

  bool has_density() const noexcept { return kernel.has_value() && bool(kernel->density); }
};

/// p(y|s,a) for environments with a separable kernel.
inline double kernel_density(const EnvSpec& env, const StateVec& s, ActionId a, const StateVec& y) {
  if (!env.has_density()) throw Unsupported(env.name + ": no closed-form transition density");
  double p = 1.0;
  for (std::size_t i = 0; i < env.dim; ++i) p *= env.kernel->density(i, s[i], a, y[i]);
  return p;
}

/// L_p(y) with |p(y|s,a) - p(y|s',a)| <= L_p(y) * ||s - s'|| for l1, l2 and linf.
inline double kernel_lipschitz(const EnvSpec& env, const StateVec& y, ActionId a) {
  if (!env.kernel || !env.kernel->lipschitz || !env.kernel->sup_density)
    throw Unsupported(env.name + ": no pointwise kernel Lipschitz modulus");
  double total = 0.0;
  for (std::size_t i = 0; i < env.dim; ++i) {
    double term = env.kernel->lipschitz(i, y[i], a);
    for (std::size_t j = 0; j < env.dim; ++j)
      if (j != i) term *= env.kernel->sup_density(j, y[j], a);
    total += term;
  }
  return total;
}

/// Fixed behavior policy with every action probability >= floor.
class Policy {
 public:
  using ProbsFn = std::function<void(const StateVec&, std::span<double>)>;

  Policy(std::string name, std::size_t dim, std::size_t num_actions, double floor, ProbsFn probs)
      : name_(std::move(name)), dim_(dim), num_actions_(num_actions), floor_(floor),
        probs_(std::move(probs)) {
    if (num_actions_ == 0) throw InvalidInput("Policy: no actions");
    if (!(floor_ > 0.0)) throw InvalidInput("Policy: floor pi0 must be > 0");
    if (floor_ * static_cast<double>(num_actions_) > 1.0 + 1e-12)
      throw InvalidInput("Policy: floor pi0 exceeds 1/|A|");
  }

  /// State-independent policy; the floor is the smallest entry.
  static Policy fixed(std::string name, std::size_t dim, std::vector<double> probs) {
    if (probs.empty()) throw InvalidInput("Policy: empty probability vector");
    check_probs(probs, 0.0);
    const double floor = *std::min_element(probs.begin(), probs.end());
    if (!(floor > 0.0)) throw InvalidInput("Policy: every action probability must be > 0");
    const std::size_t n = probs.size();
    return Policy(std::move(name), dim, n, floor,
                  [p = std::move(probs)](const StateVec&, std::span<double> out) {
                    std::copy(p.begin(), p.end(), out.begin());
                  });
  }

  static Policy uniform(std::size_t dim, std::size_t num_actions) {
    return fixed("uniform", dim, std::vector<double>(num_actions, 1.0 / static_cast<double>(num_actions)));
  }

  const std::string& name() const noexcept { return name_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t num_actions() const noexcept { return num_actions_; }
  double floor() const noexcept { return floor_; }

  std::vector<double> probs(const StateVec& s) const {
    require_dim(s, dim_, "Policy::probs");
    std::vector<double> out(num_actions_, 0.0);
    probs_(s, out);
    check_probs(out, floor_);
    return out;
  }

 private:
  static void check_probs(std::span<const double> p, double floor) {
    double sum = 0.0;
    for (double v : p) {
      if (!std::isfinite(v) || v < floor - 1e-15)
        throw InvalidInput("Policy: probability below floor or non-finite");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw InvalidInput("Policy: probabilities must sum to 1");
  }

  std::string name_;
  std::size_t dim_;
  std::size_t num_actions_;
  double floor_;
  ProbsFn probs_;
};

inline ActionId sample_action(const Policy& policy, const StateVec& s, Rng& rng) {
  const auto probs = policy.probs(s);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (ActionId a = 0; a + 1 < probs.size(); ++a) {
    acc += probs[a];
    if (u < acc) return a;
  }
  return probs.size() - 1;
}

struct Transition {
  double reward;
  StateVec next_state;
};

/// One environment step: reward r(s,a) + W and S' ~ p(.|s,a).
inline Transition step_env(const EnvSpec& env, const StateVec& s, ActionId a, Rng& rng) {
  require_dim(s, env.dim, "step_env");
  if (a >= env.num_actions) throw InvalidInput("step_env: invalid action id " + std::to_string(a));
  double reward = env.reward_fn(s, a);
  if (env.noise_sigma > 0.0) {
    double w = std::normal_distribution<double>(0.0, env.noise_sigma)(rng);
    if (env.noise_clip > 0.0) w = std::clamp(w, -env.noise_clip, env.noise_clip);
    reward += w;
  }
  StateVec next = env.transition(s, a, rng);
  require_dim(next, env.dim, "step_env transition");
  return {reward, std::move(next)};
}

inline Trajectory sample_trajectory(const EnvSpec& env, const Policy& policy, std::size_t T,
                                    const StateVec& s0, Rng& rng) {
  if (T == 0) throw InvalidInput("sample_trajectory: T must be >= 1");
  if (policy.num_actions() != env.num_actions)
    throw InvalidInput("sample_trajectory: policy/env action count mismatch");
  require_dim(s0, env.dim, "sample_trajectory");
  Trajectory traj;
  traj.dim = env.dim;
  traj.num_actions = env.num_actions;
  traj.steps.reserve(T);
  StateVec s = s0;
  for (std::size_t t = 1; t <= T; ++t) {
    const ActionId a = sample_action(policy, s, rng);
    auto [reward, next] = step_env(env, s, a, rng);
    traj.steps.push_back(StepRecord{t, std::move(s), a, reward});
    s = std::move(next);
  }
  traj.terminal_state = std::move(s);
  return traj;
}

}  // namespace nnql
