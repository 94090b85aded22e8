#pragma once

// Built-in environment and policy catalog.
//
//   box          [0,1]^d, sinusoidal reward, truncated-Gaussian kernel
//   constant     same kernel as `box`, reward identically `level`
//   identity     [0,1]^d, S' = S, reward identically `level` (no density)
//   single_state one state, reward r(s,a) = a
//   ar1          unbounded, S' = rho*S + b(a) + N(0, tau^2) per axis

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "nnql/mdp.hpp"

namespace nnql {

struct EnvOptions {
  std::string name = "box";
  std::size_t dim = 1;
  std::size_t num_actions = 2;
  double sigma = 0.1;
  double noise_clip = 0.0;
  /// Reward value of the constant-reward environments.
  double level = 1.0;
};

namespace detail {

inline double std_normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
inline double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Per-action drift offsets spread symmetrically in [-scale, scale].
inline double action_offset(ActionId a, std::size_t num_actions, double scale) {
  if (num_actions == 1) return 0.0;
  return scale * (2.0 * static_cast<double>(a) / static_cast<double>(num_actions - 1) - 1.0);
}

inline double mean_coord(const StateVec& s) {
  double m = 0.0;
  for (double c : s.coords()) m += c;
  return m / static_cast<double>(s.dim());
}

/// N(mu, tau^2) restricted to [0, 1], with mu = 0.5 + slope*(x - 0.5) + shift_a.
struct TruncatedGaussianAxis {
  double slope = 0.6;
  double shift = 0.15;
  double tau = 0.5;
  std::size_t num_actions = 2;

  double mean(double x, ActionId a) const {
    return 0.5 + slope * (x - 0.5) + action_offset(a, num_actions, shift);
  }
  double mass(double mu) const {
    return std_normal_cdf((1.0 - mu) / tau) - std_normal_cdf(-mu / tau);
  }
  double density_at_mean(double y, double mu) const {
    if (y < 0.0 || y > 1.0) return 0.0;
    return std_normal_pdf((y - mu) / tau) / (tau * mass(mu));
  }
  double density(double x, ActionId a, double y) const { return density_at_mean(y, mean(x, a)); }

  /// d p(y | mu) / d mu.
  double dmu(double y, double mu) const {
    if (y < 0.0 || y > 1.0) return 0.0;
    const double z = mass(mu);
    const double dz = (std_normal_pdf(-mu / tau) - std_normal_pdf((1.0 - mu) / tau)) / tau;
    return density_at_mean(y, mu) * ((y - mu) / (tau * tau) - dz / z);
  }

  // The suprema below are taken over a dense sample of the mean's range
  // (2001 points) and padded by 1% to cover the gaps between samples.
  double lipschitz(double y, ActionId a) const {
    const double lo = mean(0.0, a), hi = mean(1.0, a);
    double best = 0.0;
    for (int i = 0; i <= 2000; ++i) best = std::max(best, std::abs(dmu(y, lo + (hi - lo) * i / 2000.0)));
    return 1.01 * std::abs(slope) * best;
  }
  double sup_density(double y, ActionId a) const {
    const double lo = mean(0.0, a), hi = mean(1.0, a);
    double best = 0.0;
    for (int i = 0; i <= 2000; ++i) best = std::max(best, density_at_mean(y, lo + (hi - lo) * i / 2000.0));
    return 1.01 * best;
  }

  double sample(double x, ActionId a, Rng& rng) const {
    std::normal_distribution<double> noise(mean(x, a), tau);
    for (;;) {
      const double y = noise(rng);
      if (y >= 0.0 && y <= 1.0) return y;
    }
  }
};

inline SeparableKernel truncated_gaussian_kernel(TruncatedGaussianAxis axis) {
  SeparableKernel k;
  k.density = [axis](std::size_t, double s, ActionId a, double y) { return axis.density(s, a, y); };
  k.lipschitz = [axis](std::size_t, double y, ActionId a) { return axis.lipschitz(y, a); };
  k.sup_density = [axis](std::size_t, double y, ActionId a) { return axis.sup_density(y, a); };
  return k;
}

/// C_p = max_a sum_i int L_i * prod_{j != i} int sup_j, by trapezoid on [0,1].
inline double truncated_gaussian_cp(const TruncatedGaussianAxis& axis, std::size_t dim) {
  constexpr int n = 400;
  double worst = 0.0;
  for (ActionId a = 0; a < axis.num_actions; ++a) {
    double lip = 0.0, sup = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double y = static_cast<double>(i) / n;
      const double w = (i == 0 || i == n) ? 0.5 / n : 1.0 / n;
      lip += w * axis.lipschitz(y, a);
      sup += w * axis.sup_density(y, a);
    }
    worst = std::max(worst, static_cast<double>(dim) * lip * std::pow(sup, static_cast<double>(dim) - 1.0));
  }
  return worst;
}

inline StateVec box_center(std::size_t dim) { return StateVec(std::vector<double>(dim, 0.5)); }

}  // namespace detail

inline EnvSpec make_box_env(const EnvOptions& opt) {
  detail::TruncatedGaussianAxis axis;
  axis.num_actions = opt.num_actions;
  EnvSpec env;
  env.name = "box";
  env.dim = opt.dim;
  env.num_actions = opt.num_actions;
  const std::size_t na = opt.num_actions;
  env.reward_fn = [na](const StateVec& s, ActionId a) {
    return 0.5 + 0.4 * std::sin(2.0 * std::numbers::pi *
                                (detail::mean_coord(s) + static_cast<double>(a) / static_cast<double>(na)));
  };
  env.transition = [axis](const StateVec& s, ActionId a, Rng& rng) {
    std::vector<double> next(s.dim());
    for (std::size_t i = 0; i < s.dim(); ++i) next[i] = axis.sample(s[i], a, rng);
    return StateVec(std::move(next));
  };
  env.noise_sigma = opt.sigma;
  env.noise_clip = opt.noise_clip;
  env.reward_bound = 1.0;
  // |mean(s) - mean(s')| <= ||s - s'||_inf <= ||s - s'|| for l1, l2, linf.
  env.reward_lipschitz = 0.8 * std::numbers::pi;
  env.kernel_lipschitz_mass = detail::truncated_gaussian_cp(axis, opt.dim);
  env.support = Support::Bounded;
  env.box = Box::cube(opt.dim, 0.0, 1.0);
  env.kernel = detail::truncated_gaussian_kernel(axis);
  env.default_start = detail::box_center(opt.dim);
  return env;
}

inline EnvSpec make_constant_env(const EnvOptions& opt) {
  if (opt.level < 0.0) throw InvalidInput("constant env: reward level must be >= 0");
  EnvSpec env = make_box_env(opt);
  env.name = "constant";
  const double c = opt.level;
  env.reward_fn = [c](const StateVec&, ActionId) { return c; };
  env.reward_bound = c;
  env.reward_lipschitz = 0.0;
  return env;
}

inline EnvSpec make_identity_env(const EnvOptions& opt) {
  if (opt.level < 0.0) throw InvalidInput("identity env: reward level must be >= 0");
  EnvSpec env;
  env.name = "identity";
  env.dim = opt.dim;
  env.num_actions = opt.num_actions;
  const double c = opt.level;
  env.reward_fn = [c](const StateVec&, ActionId) { return c; };
  env.transition = [](const StateVec& s, ActionId, Rng&) { return s; };
  env.noise_sigma = opt.sigma;
  env.noise_clip = opt.noise_clip;
  env.reward_bound = c;
  env.reward_lipschitz = 0.0;
  env.kernel_lipschitz_mass = 0.0;
  env.support = Support::Bounded;
  env.box = Box::cube(opt.dim, 0.0, 1.0);
  env.default_start = detail::box_center(opt.dim);
  env.unverified.push_back("point-mass kernel: no density, the minorization condition fails");
  return env;
}

inline EnvSpec make_single_state_env(const EnvOptions& opt) {
  EnvSpec env;
  env.name = "single_state";
  env.dim = 1;
  env.num_actions = opt.num_actions;
  env.reward_fn = [](const StateVec&, ActionId a) { return static_cast<double>(a); };
  env.transition = [](const StateVec& s, ActionId, Rng&) { return s; };
  env.noise_sigma = opt.sigma;
  env.noise_clip = opt.noise_clip;
  env.reward_bound = static_cast<double>(opt.num_actions - 1);
  env.support = Support::Bounded;
  env.box = Box::cube(1, 0.0, 0.0);
  // The state space is a single point; the density is the counting measure.
  SeparableKernel k;
  k.density = [](std::size_t, double, ActionId, double) { return 1.0; };
  env.kernel = std::move(k);
  env.default_start = StateVec{0.0};
  return env;
}

/// Per-axis S' = rho*s + b(a) + N(0, tau^2), b(a) spread over [-drift, drift].
inline EnvSpec make_ar1_env(const EnvOptions& opt) {
  constexpr double rho = 0.5, drift = 0.5, tau = 0.5;
  const std::size_t na = opt.num_actions;
  EnvSpec env;
  env.name = "ar1";
  env.dim = opt.dim;
  env.num_actions = na;
  env.reward_fn = [na](const StateVec& s, ActionId a) {
    return 0.5 + 0.4 * std::sin(2.0 * detail::mean_coord(s) +
                                2.0 * std::numbers::pi * static_cast<double>(a) / static_cast<double>(na));
  };
  env.transition = [na](const StateVec& s, ActionId a, Rng& rng) {
    std::normal_distribution<double> noise(0.0, tau);
    std::vector<double> next(s.dim());
    for (std::size_t i = 0; i < s.dim(); ++i)
      next[i] = rho * s[i] + detail::action_offset(a, na, drift) + noise(rng);
    return StateVec(std::move(next));
  };
  env.noise_sigma = opt.sigma;
  env.noise_clip = opt.noise_clip;
  env.reward_bound = 1.0;
  env.reward_lipschitz = 0.8;
  // Total-variation modulus of the Gaussian location family, summed over axes.
  env.kernel_lipschitz_mass =
      static_cast<double>(opt.dim) * rho * std::sqrt(2.0 / std::numbers::pi) / tau;
  env.support = Support::Unbounded;

  // Started at 0, every coordinate is drift part (|.| <= drift/(1-rho)) plus a
  // centred Gaussian with variance <= tau^2/(1-rho^2), at all times. Pick z
  // so the union over axes of both Gaussian tails is <= 1e-6.
  const double budget = 1e-6 / (2.0 * static_cast<double>(opt.dim));
  double zlo = 0.0, zhi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (zlo + zhi);
    (detail::std_normal_cdf(-mid) > budget ? zlo : zhi) = mid;
  }
  const double half = drift / (1.0 - rho) + zhi * tau / std::sqrt(1.0 - rho * rho);
  env.box = Box::cube(opt.dim, -half, half);
  env.box_mass_loss = 2.0 * static_cast<double>(opt.dim) * detail::std_normal_cdf(-zhi);

  SeparableKernel k;
  k.density = [na](std::size_t, double s, ActionId a, double y) {
    return detail::std_normal_pdf((y - rho * s - detail::action_offset(a, na, drift)) / tau) / tau;
  };
  env.kernel = std::move(k);
  env.default_start = StateVec(std::vector<double>(opt.dim, 0.0));
  env.unverified = {
      "C_p is the total-variation modulus; the pointwise sup_s L_p(y) is not integrable on R^d",
      "tail minorization: g(s') = inf_s p(s'|s) is 0 on an unbounded state space",
      "drift bound E||S'|| <= rho*||s|| + drift + tau*sqrt(2/pi) holds only on bounded sets of s"};
  return env;
}

inline EnvSpec make_env(const EnvOptions& opt) {
  if (opt.dim == 0) throw InvalidInput("env.dim must be >= 1");
  if (opt.num_actions == 0) throw InvalidInput("env.actions must be >= 1");
  if (opt.sigma < 0.0 || !std::isfinite(opt.sigma)) throw InvalidInput("env.sigma must be >= 0");
  if (opt.noise_clip < 0.0) throw InvalidInput("env.noise_clip must be >= 0");
  if (opt.name == "box") return make_box_env(opt);
  if (opt.name == "constant") return make_constant_env(opt);
  if (opt.name == "identity") return make_identity_env(opt);
  if (opt.name == "single_state") return make_single_state_env(opt);
  if (opt.name == "ar1") return make_ar1_env(opt);
  throw InvalidInput("unknown environment '" + opt.name + "'");
}

/// Built-in policies: `uniform`, and `tilted` (state dependent, floor 0.5/|A|).
inline Policy make_policy(const std::string& name, const EnvSpec& env) {
  if (name == "uniform") return Policy::uniform(env.dim, env.num_actions);
  if (name == "tilted") {
    const std::size_t na = env.num_actions;
    const double floor = 0.5 / static_cast<double>(na);
    return Policy("tilted", env.dim, na, floor, [na, floor](const StateVec& s, std::span<double> out) {
      const double m = detail::mean_coord(s);
      double total = 0.0;
      for (ActionId a = 0; a < na; ++a) {
        out[a] = 1.0 + 0.9 * std::sin(2.0 * std::numbers::pi *
                                      (m + static_cast<double>(a) / static_cast<double>(na)));
        total += out[a];
      }
      const double free_mass = 1.0 - floor * static_cast<double>(na);
      double sum = 0.0;
      for (ActionId a = 0; a + 1 < na; ++a) {
        out[a] = floor + free_mass * out[a] / total;
        sum += out[a];
      }
      out[na - 1] = 1.0 - sum;
    });
  }
  throw InvalidInput("unknown policy '" + name + "'");
}

}  // namespace nnql
