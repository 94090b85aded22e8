#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "nnql/knn_index.hpp"
#include "nnql/mdp.hpp"

namespace nnql {

/// Value of a kNN estimate together with how it was formed.
struct QEstimate {
  double value = 0.0;
  std::size_t neighbors = 0;
  bool truncated = false;

  /// No sample for the action: the value is the fallback 0.
  bool fallback() const noexcept { return neighbors == 0; }
};

/// k = ceil(T^(2/(d+2))) clamped to [1, T], computed exactly in integers.
inline std::size_t choose_k_offline(std::size_t T, std::size_t d) {
  if (T == 0) throw InvalidInput("choose_k_offline: T must be >= 1");
  if (d == 0) throw InvalidInput("choose_k_offline: d must be >= 1");
  // k is the least integer with k^(d+2) >= T^2.
  const auto target = static_cast<unsigned __int128>(T) * T;
  auto reaches = [&](std::size_t k) {
    unsigned __int128 p = 1;
    for (std::size_t i = 0; i < d + 2; ++i) {
      p *= k;
      if (p >= target) return true;
    }
    return p >= target;
  };
  auto k = static_cast<std::size_t>(std::ceil(std::pow(static_cast<double>(T), 2.0 / static_cast<double>(d + 2))));
  k = std::max<std::size_t>(k, 1);
  while (k > 1 && reaches(k - 1)) --k;
  while (!reaches(k)) ++k;
  return std::min(k, T);
}

struct OfflineParams {
  std::size_t k = 1;
  double gamma = 0.9;
  std::size_t max_sweeps = 10000;
  /// Stop once the sup-norm change of a sweep is at most this.
  double fix_tol = 1e-8;
  Norm norm = Norm::L2;

  static double default_tolerance(double reward_bound, double gamma) {
    return 1e-8 * reward_bound / (1.0 - gamma);
  }

  void validate(std::size_t T) const {
    if (k == 0) throw InvalidInput("OfflineParams: k must be >= 1");
    if (k > T) throw InvalidInput("OfflineParams: k = " + std::to_string(k) + " exceeds T = " + std::to_string(T));
    if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidInput("OfflineParams: gamma must lie in (0, 1)");
    if (!(fix_tol > 0.0)) throw InvalidInput("OfflineParams: fix_tol must be > 0");
    if (max_sweeps == 0) throw InvalidInput("OfflineParams: max_sweeps must be >= 1");
  }
};

inline NeighborIndex build_trajectory_index(const Trajectory& traj, Norm norm) {
  std::vector<IndexEntry> entries;
  entries.reserve(traj.length());
  for (const auto& st : traj.steps) entries.push_back({st.t, st.state, st.action});
  return NeighborIndex::build(traj.dim, traj.num_actions, entries, norm);
}

/// The empirical Bellman operator F on step-value arrays:
///   q(S_{t+1}, a) = mean of Q over N(S_{t+1}, a)
///   F[Q](t)       = R_t + gamma * max_a q(S_{t+1}, a)      for t = 1..T.
///
/// Neighbor sets do not depend on Q, so they are resolved once into runs of
/// each action's block layout; an application is then a prefix sum per
/// action plus O(runs) work per (t, a).
class BellmanOperator {
 public:
  BellmanOperator(const Trajectory& traj, const NeighborIndex& index, const OfflineParams& params)
      : T_(traj.length()), num_actions_(traj.num_actions), gamma_(params.gamma) {
    traj.validate();
    params.validate(T_);
    if (index.dim() != traj.dim || index.num_actions() != traj.num_actions)
      throw InvalidInput("BellmanOperator: index does not match trajectory");
    rewards_.reserve(T_);
    for (const auto& st : traj.steps) rewards_.push_back(st.reward);

    layouts_.resize(num_actions_);
    for (ActionId a = 0; a < num_actions_; ++a) {
      blocks_.push_back(index.static_block(a));
      if (blocks_.back()) layouts_[a].assign(blocks_.back()->layout().begin(), blocks_.back()->layout().end());
    }

    offsets_.reserve(T_ * num_actions_ + 1);
    counts_.reserve(T_ * num_actions_);
    offsets_.push_back(0);
    std::vector<Run> scratch;
    for (std::size_t t = 1; t <= T_; ++t) {
      const StateVec& next = traj.state(t + 1);
      for (ActionId a = 0; a < num_actions_; ++a) {
        std::size_t count = 0;
        if (blocks_[a]) {
          count = blocks_[a]->knn_runs(next.data(), params.k, scratch);
          runs_.insert(runs_.end(), scratch.begin(), scratch.end());
        } else {
          ++empty_queries_;
        }
        counts_.push_back(static_cast<std::uint32_t>(count));
        offsets_.push_back(runs_.size());
      }
    }
  }

  std::size_t length() const noexcept { return T_; }
  double gamma() const noexcept { return gamma_; }

  /// (t, a) pairs per application whose action has no stored samples; their
  /// q falls back to 0.
  std::size_t empty_action_queries() const noexcept { return empty_queries_; }

  void apply(std::span<const double> q_prev, std::span<double> q_next) const {
    if (q_prev.size() != T_ || q_next.size() != T_)
      throw InvalidInput("BellmanOperator::apply: arrays must have length T");
    const auto prefix = prefix_sums(q_prev);
    for (std::size_t t = 0; t < T_; ++t) {
      double best = -std::numeric_limits<double>::infinity();
      for (ActionId a = 0; a < num_actions_; ++a) best = std::max(best, q_value(prefix, t, a));
      q_next[t] = rewards_[t] + gamma_ * best;
    }
  }

  std::vector<double> apply(std::span<const double> q_prev) const {
    std::vector<double> out(T_);
    apply(q_prev, out);
    return out;
  }

  /// q(S_{t+1}, a) computed from Q, for 1-based t.
  double q_at_next(std::span<const double> q, StepIndex t, ActionId a) const {
    if (q.size() != T_) throw InvalidInput("q_at_next: array must have length T");
    if (t < 1 || t > T_ || a >= num_actions_) throw InvalidInput("q_at_next: index out of range");
    return q_value(prefix_sums(q), t - 1, a);
  }

 private:
  using Prefix = std::vector<std::vector<long double>>;

  Prefix prefix_sums(std::span<const double> q) const {
    Prefix prefix(num_actions_);
    for (ActionId a = 0; a < num_actions_; ++a) {
      const auto& layout = layouts_[a];
      auto& p = prefix[a];
      p.resize(layout.size() + 1);
      p[0] = 0.0L;
      for (std::size_t i = 0; i < layout.size(); ++i) p[i + 1] = p[i] + q[layout[i] - 1];
    }
    return prefix;
  }

  double q_value(const Prefix& prefix, std::size_t t0, ActionId a) const {
    const std::size_t slot = t0 * num_actions_ + a;
    const auto count = counts_[slot];
    if (count == 0) return 0.0;
    long double sum = 0.0L;
    const auto& p = prefix[a];
    for (std::size_t r = offsets_[slot]; r < offsets_[slot + 1]; ++r)
      sum += p[runs_[r].begin + runs_[r].length] - p[runs_[r].begin];
    return static_cast<double>(sum / count);
  }

  std::size_t T_;
  std::size_t num_actions_;
  double gamma_;
  std::vector<double> rewards_;
  std::vector<const detail::Block*> blocks_;
  std::vector<std::vector<StepIndex>> layouts_;
  std::vector<std::size_t> offsets_;
  std::vector<std::uint32_t> counts_;
  std::vector<Run> runs_;
  std::size_t empty_queries_ = 0;
};

/// One application of F, building the operator on the fly.
inline std::vector<double> apply_bellman_operator(std::span<const double> q_prev, const Trajectory& traj,
                                                  const NeighborIndex& index, const OfflineParams& params) {
  return BellmanOperator(traj, index, params).apply(q_prev);
}

struct OfflineModel {
  std::vector<double> Q;
  NeighborIndex index;
  OfflineParams params;
  std::size_t sweeps_run = 0;
  double final_gap = std::numeric_limits<double>::infinity();
  bool converged = false;
  std::size_t empty_action_queries = 0;

  std::size_t length() const noexcept { return Q.size(); }
};

/// Fixed-point iteration from Q = 0 until the sup-norm change of a sweep
/// is at most fix_tol, or max_sweeps sweeps (then converged == false).
inline OfflineModel fit_offline(const Trajectory& traj, const OfflineParams& params) {
  traj.validate();
  params.validate(traj.length());
  OfflineModel model{std::vector<double>(traj.length(), 0.0), build_trajectory_index(traj, params.norm), params};
  const BellmanOperator op(traj, model.index, params);
  model.empty_action_queries = op.empty_action_queries();
  std::vector<double> next(traj.length());
  while (model.sweeps_run < params.max_sweeps) {
    op.apply(model.Q, next);
    double gap = 0.0;
    for (std::size_t t = 0; t < next.size(); ++t) gap = std::max(gap, std::abs(next[t] - model.Q[t]));
    model.Q.swap(next);
    ++model.sweeps_run;
    model.final_gap = gap;
    if (gap <= params.fix_tol) {
      model.converged = true;
      break;
    }
  }
  return model;
}

/// q(s, a) = mean of Q over the k nearest stored states with action a.
inline QEstimate evaluate_q(const OfflineModel& model, const StateVec& s, ActionId a) {
  long double sum = 0.0L;
  const std::size_t n =
      model.index.for_each_knn(s, a, model.params.k, Window{}, [&](StepIndex t) { sum += model.Q[t - 1]; });
  if (n == 0) return {};
  return {static_cast<double>(sum / n), n, n < model.params.k};
}

}  // namespace nnql
