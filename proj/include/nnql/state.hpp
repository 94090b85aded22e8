#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace nnql {

/// 1-based position of a step inside a trajectory.
using StepIndex = std::uint64_t;
using ActionId = std::size_t;

/// Raised for malformed arguments, bad schedules, inconsistent dimensions.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A query fell outside the region a structure was built for.
class OutOfDomain : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// The requested operation is not available for this environment.
class Unsupported : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Point of the continuous state space. Coordinates are always finite.
class StateVec {
 public:
  StateVec() = default;
  explicit StateVec(std::vector<double> coords) : coords_(std::move(coords)) { validate(); }
  StateVec(std::initializer_list<double> coords) : coords_(coords) { validate(); }
  explicit StateVec(std::span<const double> coords) : coords_(coords.begin(), coords.end()) {
    validate();
  }

  std::size_t dim() const noexcept { return coords_.size(); }
  double operator[](std::size_t i) const { return coords_[i]; }
  std::span<const double> coords() const noexcept { return coords_; }
  const double* data() const noexcept { return coords_.data(); }

  bool operator==(const StateVec&) const = default;

 private:
  void validate() const {
    if (coords_.empty()) throw InvalidInput("StateVec: dimension must be >= 1");
    for (double c : coords_)
      if (!std::isfinite(c)) throw InvalidInput("StateVec: non-finite coordinate");
  }

  std::vector<double> coords_;
};

inline void require_dim(const StateVec& s, std::size_t dim, std::string_view what) {
  if (s.dim() != dim)
    throw InvalidInput(std::string(what) + ": state has dimension " + std::to_string(s.dim()) +
                       ", expected " + std::to_string(dim));
}

enum class Norm { L2, L1, LInf };

inline Norm parse_norm(std::string_view name) {
  if (name == "l2" || name == "euclidean") return Norm::L2;
  if (name == "l1") return Norm::L1;
  if (name == "linf" || name == "max") return Norm::LInf;
  throw InvalidInput("unknown norm '" + std::string(name) + "' (expected l2, l1 or linf)");
}

inline std::string_view norm_name(Norm n) {
  switch (n) {
    case Norm::L2: return "l2";
    case Norm::L1: return "l1";
    case Norm::LInf: return "linf";
  }
  return "l2";
}

/// Distance under a configurable norm.
///
/// Searches order points by a monotone "rank" of the distance (the squared
/// distance for l2, the distance itself otherwise) so that every comparison,
/// including tie detection, happens on one exactly reproducible value.
class Metric {
 public:
  constexpr explicit Metric(Norm norm = Norm::L2) noexcept : norm_(norm) {}

  constexpr Norm norm() const noexcept { return norm_; }

  double rank(const double* a, const double* b, std::size_t dim) const noexcept {
    double acc = 0.0;
    switch (norm_) {
      case Norm::L2:
        for (std::size_t i = 0; i < dim; ++i) {
          const double d = a[i] - b[i];
          acc += d * d;
        }
        break;
      case Norm::L1:
        for (std::size_t i = 0; i < dim; ++i) acc += std::abs(a[i] - b[i]);
        break;
      case Norm::LInf:
        for (std::size_t i = 0; i < dim; ++i) acc = std::max(acc, std::abs(a[i] - b[i]));
        break;
    }
    return acc;
  }

  /// Lower bound on rank() between `q` and any point of the box [lo, hi].
  double rank_to_box(const double* q, const double* lo, const double* hi,
                     std::size_t dim) const noexcept {
    double acc = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      double gap = 0.0;
      if (q[i] < lo[i])
        gap = lo[i] - q[i];
      else if (q[i] > hi[i])
        gap = q[i] - hi[i];
      switch (norm_) {
        case Norm::L2: acc += gap * gap; break;
        case Norm::L1: acc += gap; break;
        case Norm::LInf: acc = std::max(acc, gap); break;
      }
    }
    return acc;
  }

  double rank_to_distance(double rank) const noexcept {
    return norm_ == Norm::L2 ? std::sqrt(rank) : rank;
  }

  double distance(const StateVec& a, const StateVec& b) const noexcept {
    return rank_to_distance(rank(a.data(), b.data(), std::min(a.dim(), b.dim())));
  }

 private:
  Norm norm_;
};

/// Axis-aligned box, used for bounded supports and oracle truncation.
struct Box {
  std::vector<double> lo;
  std::vector<double> hi;

  std::size_t dim() const noexcept { return lo.size(); }

  bool contains(std::span<const double> s) const noexcept {
    if (s.size() != lo.size()) return false;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (!(s[i] >= lo[i] && s[i] <= hi[i])) return false;
    return true;
  }

  static Box cube(std::size_t dim, double lo, double hi) {
    return Box{std::vector<double>(dim, lo), std::vector<double>(dim, hi)};
  }
};

}  // namespace nnql
