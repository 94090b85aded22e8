#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "nnql/mdp.hpp"
#include "nnql/oracle.hpp"

namespace nnql {

using Estimator = std::function<double(const StateVec&, ActionId)>;

struct ErrorResult {
  double value = 0.0;
  std::size_t used = 0;
  /// Points outside the oracle domain, left out of the metric.
  std::size_t skipped = 0;
};

/// max over points and actions of |estimator - oracle|.
inline ErrorResult sup_error(const Estimator& estimator, const OracleQ& oracle, std::span<const StateVec> query_set) {
  if (query_set.empty()) throw InvalidInput("sup_error: empty query set");
  ErrorResult r;
  for (const auto& s : query_set) {
    if (!oracle.box.contains(s.coords())) {
      ++r.skipped;
      continue;
    }
    for (ActionId a = 0; a < oracle.num_actions; ++a)
      r.value = std::max(r.value, std::abs(estimator(s, a) - oracle_eval(oracle, s, a)));
    ++r.used;
  }
  if (r.used == 0) throw InvalidInput("sup_error: every query point lies outside the oracle domain");
  return r;
}

/// Monte-Carlo form of the stationary-weighted error:
/// mean over samples of max_a |estimator - oracle|.
inline ErrorResult weighted_l1_error(const Estimator& estimator, const OracleQ& oracle,
                                     std::span<const StateVec> samples) {
  if (samples.empty()) throw InvalidInput("weighted_l1_error: no samples");
  ErrorResult r;
  double total = 0.0;
  for (const auto& s : samples) {
    if (!oracle.box.contains(s.coords())) {
      ++r.skipped;
      continue;
    }
    double worst = 0.0;
    for (ActionId a = 0; a < oracle.num_actions; ++a)
      worst = std::max(worst, std::abs(estimator(s, a) - oracle_eval(oracle, s, a)));
    total += worst;
    ++r.used;
  }
  if (r.used == 0) throw InvalidInput("weighted_l1_error: every sample lies outside the oracle domain");
  r.value = total / static_cast<double>(r.used);
  return r;
}

/// Runs the behavior chain `burn_in` steps from s0, then keeps every
/// `thin`-th state until n are collected.
inline std::vector<StateVec> stationary_samples(const EnvSpec& env, const Policy& policy, std::size_t burn_in,
                                                std::size_t n, std::size_t thin, const StateVec& s0, Rng& rng) {
  if (n == 0) throw InvalidInput("stationary_samples: n must be >= 1");
  if (thin == 0) throw InvalidInput("stationary_samples: thin must be >= 1");
  require_dim(s0, env.dim, "stationary_samples");
  StateVec s = s0;
  auto advance = [&] { s = step_env(env, s, sample_action(policy, s, rng), rng).next_state; };
  for (std::size_t i = 0; i < burn_in; ++i) advance();
  std::vector<StateVec> out;
  out.reserve(n);
  while (out.size() < n) {
    for (std::size_t i = 0; i < thin; ++i) advance();
    out.push_back(s);
  }
  return out;
}

/// Regular grid of about `target` points over a box, endpoints included.
inline std::vector<StateVec> query_grid(const Box& box, std::size_t target) {
  if (target == 0) throw InvalidInput("query_grid: target must be >= 1");
  const std::size_t d = box.dim();
  auto per_axis = static_cast<std::size_t>(std::ceil(std::pow(static_cast<double>(target), 1.0 / static_cast<double>(d)) - 1e-9));
  per_axis = std::max<std::size_t>(per_axis, 2);
  std::size_t total = 1;
  for (std::size_t i = 0; i < d; ++i) total *= per_axis;
  std::vector<StateVec> out;
  out.reserve(total);
  std::vector<double> x(d);
  for (std::size_t idx = 0; idx < total; ++idx) {
    std::size_t rem = idx;
    for (std::size_t ax = 0; ax < d; ++ax) {
      const auto i = rem % per_axis;
      rem /= per_axis;
      x[ax] = box.lo[ax] + (box.hi[ax] - box.lo[ax]) * static_cast<double>(i) / static_cast<double>(per_axis - 1);
    }
    out.emplace_back(x);
  }
  return out;
}

struct RatePoint {
  double T;
  double error;
  std::uint64_t seed = 0;
};

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  /// 95% Student-t half-width of the per-seed slopes; NaN with < 2 seeds.
  double half_width = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> seed_slopes;
};

namespace detail {

inline std::pair<double, double> ols(std::span<const double> x, std::span<const double> y) {
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// Least squares of ln(median error over seeds) on ln T, plus the spread of
/// per-seed slopes.
inline RateFit rate_fit(std::span<const RatePoint> points) {
  std::map<double, std::vector<double>> by_T;
  std::map<std::uint64_t, std::vector<const RatePoint*>> by_seed;
  for (const auto& p : points) {
    if (!(p.T > 0.0)) throw InvalidInput("rate_fit: T must be > 0");
    if (!(p.error > 0.0) || !std::isfinite(p.error)) throw InvalidInput("rate_fit: errors must be positive and finite");
    by_T[p.T].push_back(p.error);
    by_seed[p.seed].push_back(&p);
  }
  if (by_T.size() < 2) throw InvalidInput("rate_fit: need at least two distinct T values");
  std::vector<double> x, y;
  for (auto& [T, errs] : by_T) {
    x.push_back(std::log(T));
    y.push_back(std::log(detail::median(errs)));
  }
  RateFit fit;
  std::tie(fit.slope, fit.intercept) = detail::ols(x, y);

  for (const auto& [seed, pts] : by_seed) {
    std::vector<double> sx, sy;
    for (const auto* p : pts) {
      sx.push_back(std::log(p->T));
      sy.push_back(std::log(p->error));
    }
    if (std::adjacent_find(sx.begin(), sx.end(), std::not_equal_to<>()) == sx.end()) continue;
    fit.seed_slopes.push_back(detail::ols(sx, sy).first);
  }
  const std::size_t m = fit.seed_slopes.size();
  if (m >= 2) {
    double mean = 0.0;
    for (double s : fit.seed_slopes) mean += s;
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (double s : fit.seed_slopes) var += (s - mean) * (s - mean);
    var /= static_cast<double>(m - 1);
    const boost::math::students_t dist(static_cast<double>(m - 1));
    fit.half_width = boost::math::quantile(dist, 0.975) * std::sqrt(var / static_cast<double>(m));
  }
  return fit;
}

}  // namespace nnql
