#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "nnql/knn_index.hpp"
#include "nnql/mdp.hpp"
#include "nnql/offline.hpp"

namespace nnql {

/// beta = gamma^((d+2)/(d+3)).
inline double schedule_beta(double gamma, std::size_t d) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidInput("schedule_beta: gamma must lie in (0, 1)");
  if (d == 0) throw InvalidInput("schedule_beta: d must be >= 1");
  return std::pow(gamma, static_cast<double>(d + 2) / static_cast<double>(d + 3));
}

/// ceil(x), except that values within 1e-9 (relative) of an integer snap to it.
inline std::size_t snapped_ceil(double x) {
  const double r = std::round(x);
  if (std::abs(x - r) <= 1e-9 * std::max(1.0, std::abs(r))) return static_cast<std::size_t>(std::max(r, 0.0));
  return static_cast<std::size_t>(std::max(std::ceil(x), 0.0));
}

/// k(t) = ceil(((1 - beta) t)^(2/(d+2))), at least 1.
inline std::size_t schedule_k_online(StepIndex t, double beta, std::size_t d) {
  if (t == 0) throw InvalidInput("schedule_k_online: t must be >= 1");
  if (!(beta > 0.0 && beta < 1.0)) throw InvalidInput("schedule_k_online: beta must lie in (0, 1)");
  if (d == 0) throw InvalidInput("schedule_k_online: d must be >= 1");
  const double base = (1.0 - beta) * static_cast<double>(t);
  return std::max<std::size_t>(1, snapped_ceil(std::pow(base, 2.0 / static_cast<double>(d + 2))));
}

/// ceil(beta * t) for the double beta, without rounding error in the product.
inline StepIndex window_start(double beta, StepIndex t) {
  const auto tt = static_cast<double>(t);
  const double p = beta * tt;
  const double err = std::fma(beta, tt, -p);
  const double c = std::ceil(p);
  if (c == p && err > 0.0) return static_cast<StepIndex>(c) + 1;
  return static_cast<StepIndex>(c);
}

/// t_c = max{3m/(1-beta), (ln^2 T + 1)^((d+2)/2)}: the horizon before which
/// the online error guarantees do not apply. Diagnostic only.
inline double warmup_threshold(std::size_t T, double beta, double m, std::size_t d) {
  if (!(beta > 0.0 && beta < 1.0)) throw InvalidInput("warmup_threshold: beta must lie in (0, 1)");
  if (!(m >= 1.0)) throw InvalidInput("warmup_threshold: m must be >= 1");
  if (T == 0 || d == 0) throw InvalidInput("warmup_threshold: T and d must be >= 1");
  const double lnT = std::log(static_cast<double>(T));
  return std::max(3.0 * m / (1.0 - beta), std::pow(lnT * lnT + 1.0, static_cast<double>(d + 2) / 2.0));
}

struct OnlineParams {
  double gamma = 0.9;
  double beta = 0.5;
  std::size_t dim = 1;
  std::size_t num_actions = 2;
  Norm norm = Norm::L2;
  /// Constant neighbor count; 0 selects the k(t) schedule.
  std::size_t k_fixed = 0;

  static OnlineParams defaults(double gamma, std::size_t dim, std::size_t num_actions) {
    OnlineParams p;
    p.gamma = gamma;
    p.beta = schedule_beta(gamma, dim);
    p.dim = dim;
    p.num_actions = num_actions;
    return p;
  }

  std::size_t k(StepIndex t) const { return k_fixed > 0 ? k_fixed : schedule_k_online(t, beta, dim); }

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidInput("OnlineParams: gamma must lie in (0, 1)");
    if (!(beta > 0.0 && beta < 1.0)) throw InvalidInput("OnlineParams: beta must lie in (0, 1)");
    if (dim == 0 || num_actions == 0) throw InvalidInput("OnlineParams: dim and num_actions must be >= 1");
  }
};

struct OnlineDiagnostics {
  /// q evaluations whose window held fewer than k(t) samples for the action.
  std::size_t truncated_queries = 0;
  /// q evaluations whose window held no sample for the action (q := 0).
  std::size_t empty_fallbacks = 0;
};

/// Single-pass streaming estimator over the sliding window [ceil(beta t), t).
class OnlineLearner {
 public:
  /// Called with (t, j) for every neighbor j used while processing step t.
  using NeighborObserver = std::function<void(StepIndex, StepIndex)>;

  explicit OnlineLearner(OnlineParams params)
      : params_((params.validate(), params)), index_(params.dim, params.num_actions, params.norm) {}

  const OnlineParams& params() const noexcept { return params_; }
  StepIndex t_now() const noexcept { return static_cast<StepIndex>(q_.size()); }
  std::span<const double> Q() const noexcept { return q_; }
  const NeighborIndex& index() const noexcept { return index_; }
  const OnlineDiagnostics& diagnostics() const noexcept { return diag_; }

  void set_observer(NeighborObserver observer) { observer_ = std::move(observer); }

  /// Processes (S_t, A_t, R_t, S_{t+1}) for t = t_now() + 1.
  void step(const StateVec& state, ActionId action, double reward, const StateVec& next) {
    step(t_now() + 1, state, action, reward, next);
  }

  void step(StepIndex t, const StateVec& state, ActionId action, double reward, const StateVec& next) {
    if (t != t_now() + 1)
      throw InvalidInput("online_step: expected step " + std::to_string(t_now() + 1) + ", got " + std::to_string(t));
    require_dim(state, params_.dim, "online_step");
    require_dim(next, params_.dim, "online_step");
    if (action >= params_.num_actions) throw InvalidInput("online_step: action id out of range");
    if (!std::isfinite(reward)) throw InvalidInput("online_step: non-finite reward");

    const StepIndex lo = window_start(params_.beta, t);
    if (lo > index_.watermark()) index_.evict_before(lo);
    const std::size_t k = params_.k(t);
    double best = -std::numeric_limits<double>::infinity();
    for (ActionId a = 0; a < params_.num_actions; ++a) {
      long double sum = 0.0L;
      const std::size_t n = lo >= t ? 0 : index_.for_each_knn(next, a, k, Window{lo, t}, [&](StepIndex j) {
        sum += q_[j - 1];
        if (observer_) observer_(t, j);
      });
      double q = 0.0;
      if (n == 0) {
        ++diag_.empty_fallbacks;
      } else {
        if (n < k) ++diag_.truncated_queries;
        q = static_cast<double>(sum / n);
      }
      best = std::max(best, q);
    }
    q_.push_back(reward + params_.gamma * best);
    index_.insert(t, state, action);
  }

  /// q_t(s, a) over the current window [ceil(beta t_now), t_now] with k(t_now).
  QEstimate query(const StateVec& s, ActionId a) const {
    if (t_now() == 0) throw InvalidInput("online_query: no step processed yet");
    const std::size_t k = params_.k(t_now());
    long double sum = 0.0L;
    const std::size_t n = index_.for_each_knn(s, a, k, Window{window_start(params_.beta, t_now()), t_now() + 1},
                                              [&](StepIndex j) { sum += q_[j - 1]; });
    if (n == 0) return {};
    return {static_cast<double>(sum / n), n, n < k};
  }

  /// Rebuilds a learner from a checkpoint: the full Q array and the
  /// (t, state, action) of every step still inside the window.
  static OnlineLearner restore(OnlineParams params, std::vector<double> q, std::span<const IndexEntry> window,
                               OnlineDiagnostics diag = {}) {
    OnlineLearner learner(params);
    learner.q_ = std::move(q);
    learner.diag_ = diag;
    const StepIndex t = learner.t_now();
    if (t > 0) learner.index_.evict_before(window_start(params.beta, t));
    for (const auto& e : window) {
      if (e.t > t) throw InvalidInput("checkpoint: window entry beyond t_now");
      learner.index_.insert(e.t, e.state, e.action);
    }
    return learner;
  }

  /// Steps still inside the window, in step order.
  std::vector<IndexEntry> window_entries() const { return index_.entries(); }

 private:
  OnlineParams params_;
  NeighborIndex index_;
  std::vector<double> q_;
  OnlineDiagnostics diag_;
  NeighborObserver observer_;
};

/// Streams a whole trajectory through a fresh learner.
inline OnlineLearner run_online(const Trajectory& traj, const OnlineParams& params) {
  traj.validate();
  if (params.dim != traj.dim || params.num_actions != traj.num_actions)
    throw InvalidInput("run_online: params do not match trajectory");
  OnlineLearner learner(params);
  for (const auto& st : traj.steps) learner.step(st.t, st.state, st.action, st.reward, traj.state(st.t + 1));
  return learner;
}

}  // namespace nnql
