#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "nnql/mdp.hpp"

namespace nnql {

/// Ground-truth Q* approximated on a regular lattice over the environment box.
///
/// Nodes are stored row-major with axis 0 varying fastest; `table` holds
/// Q(node, a) at index node * num_actions + a.
struct OracleQ {
  std::string env_name;
  std::size_t dim = 0;
  std::size_t num_actions = 0;
  double gamma = 0.0;
  double h = 0.0;
  double tol = 0.0;
  Box box;
  std::vector<std::size_t> nodes_per_axis;
  std::vector<double> table;
  /// sup_{node,a} |T Q - Q| of the stored table under the lattice kernel.
  double residual = std::numeric_limits<double>::infinity();
  std::size_t iterations = 0;
  bool converged = false;
  /// Largest |1 - raw quadrature mass| of a kernel row before normalisation.
  double mass_defect = 0.0;
  /// The box truncates an unbounded support.
  bool truncated = false;
  /// Stationary mass outside the box declared by the environment.
  double box_mass_loss = 0.0;

  std::size_t num_nodes() const noexcept { return table.size() / std::max<std::size_t>(num_actions, 1); }

  double spacing(std::size_t axis) const {
    const std::size_t n = nodes_per_axis[axis];
    return n > 1 ? (box.hi[axis] - box.lo[axis]) / static_cast<double>(n - 1) : 0.0;
  }

  double node_coord(std::size_t axis, std::size_t i) const {
    return nodes_per_axis[axis] > 1 ? box.lo[axis] + spacing(axis) * static_cast<double>(i) : box.lo[axis];
  }

  StateVec node_state(std::size_t node) const {
    std::vector<double> x(dim);
    for (std::size_t ax = 0; ax < dim; ++ax) {
      x[ax] = node_coord(ax, node % nodes_per_axis[ax]);
      node /= nodes_per_axis[ax];
    }
    return StateVec(std::move(x));
  }

  double value(std::size_t node, ActionId a) const { return table[node * num_actions + a]; }
};

namespace detail {

/// out = (M_0 x M_1 x ... ) applied to `v` on a tensor grid, where mats[ax]
/// is a row-major n_ax x m_ax matrix mapping axis-ax input index j (size
/// m_ax) to output index i (size n_ax).
inline std::vector<double> apply_separable(std::span<const std::vector<double>> mats,
                                           std::span<const std::size_t> in_shape,
                                           std::span<const std::size_t> out_shape, std::vector<double> v) {
  std::vector<std::size_t> shape(in_shape.begin(), in_shape.end());
  for (std::size_t ax = 0; ax < shape.size(); ++ax) {
    const std::size_t m = shape[ax], n = out_shape[ax];
    std::size_t inner = 1, outer = 1;
    for (std::size_t j = 0; j < ax; ++j) inner *= shape[j];
    for (std::size_t j = ax + 1; j < shape.size(); ++j) outer *= shape[j];
    std::vector<double> out(inner * n * outer, 0.0);
    const auto& M = mats[ax];
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < n; ++i) {
        const double* row = M.data() + i * m;
        double* dst = out.data() + (o * n + i) * inner;
        if (inner == 1) {
          const double* src = v.data() + o * m;
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += row[j] * src[j];
          *dst = acc;
          continue;
        }
        for (std::size_t j = 0; j < m; ++j) {
          const double w = row[j];
          if (w == 0.0) continue;
          const double* src = v.data() + (o * m + j) * inner;
          for (std::size_t l = 0; l < inner; ++l) dst[l] += w * src[l];
        }
      }
    v = std::move(out);
    shape[ax] = n;
  }
  return v;
}

inline std::vector<double> lattice(const OracleQ& o, std::size_t ax) {
  std::vector<double> x(o.nodes_per_axis[ax]);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = o.node_coord(ax, i);
  return x;
}

/// Node-centred cell widths: h inside, h/2 at the two ends.
inline std::vector<double> cell_weights(const OracleQ& o, std::size_t ax) {
  const std::size_t n = o.nodes_per_axis[ax];
  if (n == 1) return {1.0};
  std::vector<double> w(n, o.spacing(ax));
  w.front() *= 0.5;
  w.back() *= 0.5;
  return w;
}

}  // namespace detail

inline OracleQ make_oracle_grid(const EnvSpec& env, double h) {
  if (!(h > 0.0)) throw InvalidInput("grid_value_iteration: resolution h must be > 0");
  if (env.box.dim() != env.dim) throw InvalidInput("grid_value_iteration: environment box has wrong dimension");
  OracleQ o;
  o.env_name = env.name;
  o.dim = env.dim;
  o.num_actions = env.num_actions;
  o.h = h;
  o.box = env.box;
  o.truncated = env.support == Support::Unbounded;
  o.box_mass_loss = env.box_mass_loss;
  std::size_t total = 1;
  for (std::size_t ax = 0; ax < env.dim; ++ax) {
    const double width = env.box.hi[ax] - env.box.lo[ax];
    if (width < 0.0) throw InvalidInput("grid_value_iteration: inverted box");
    const std::size_t cells = width == 0.0 ? 0 : static_cast<std::size_t>(std::ceil(width / h - 1e-9));
    o.nodes_per_axis.push_back(cells + 1);
    total *= cells + 1;
  }
  o.table.assign(total * env.num_actions, 0.0);
  return o;
}

/// Value iteration Q <- r + gamma * P max_a Q on the lattice, with the kernel
/// discretised by node-centred cell quadrature and each row renormalised.
/// Stops when the sup change is <= tol * (1 - gamma).
inline OracleQ grid_value_iteration(const EnvSpec& env, double h, double gamma, double tol,
                                    std::size_t max_iterations = 1000000) {
  if (!env.has_density()) throw Unsupported(env.name + ": oracle needs a closed-form transition density");
  if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidInput("grid_value_iteration: gamma must lie in (0, 1)");
  if (!(tol > 0.0)) throw InvalidInput("grid_value_iteration: tol must be > 0");
  OracleQ o = make_oracle_grid(env, h);
  o.gamma = gamma;
  o.tol = tol;
  const std::size_t A = env.num_actions, N = o.num_nodes();

  // mats[a][ax]: row-normalised axis kernel, rows = from-node, cols = to-node.
  std::vector<std::vector<std::vector<double>>> mats(A, std::vector<std::vector<double>>(env.dim));
  for (std::size_t ax = 0; ax < env.dim; ++ax) {
    const auto x = detail::lattice(o, ax);
    const auto w = detail::cell_weights(o, ax);
    const std::size_t n = x.size();
    for (ActionId a = 0; a < A; ++a) {
      auto& M = mats[a][ax];
      M.assign(n * n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        double mass = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          M[i * n + j] = n == 1 ? 1.0 : env.kernel->density(ax, x[i], a, x[j]) * w[j];
          mass += M[i * n + j];
        }
        if (!(mass > 0.0)) throw Unsupported(env.name + ": kernel row has no mass inside the oracle box");
        if (n > 1) o.mass_defect = std::max(o.mass_defect, std::abs(1.0 - mass));
        for (std::size_t j = 0; j < n; ++j) M[i * n + j] /= mass;
      }
    }
  }

  std::vector<double> rewards(N * A);
  for (std::size_t node = 0; node < N; ++node) {
    const StateVec s = o.node_state(node);
    for (ActionId a = 0; a < A; ++a) rewards[node * A + a] = env.reward_fn(s, a);
  }

  auto backup = [&](const std::vector<double>& q) {
    std::vector<double> v(N);
    for (std::size_t node = 0; node < N; ++node) {
      double best = q[node * A];
      for (ActionId a = 1; a < A; ++a) best = std::max(best, q[node * A + a]);
      v[node] = best;
    }
    std::vector<double> next(N * A);
    for (ActionId a = 0; a < A; ++a) {
      const auto ev = detail::apply_separable(mats[a], o.nodes_per_axis, o.nodes_per_axis, v);
      for (std::size_t node = 0; node < N; ++node) next[node * A + a] = rewards[node * A + a] + gamma * ev[node];
    }
    return next;
  };
  auto sup_diff = [](const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
  };

  while (o.iterations < max_iterations) {
    auto next = backup(o.table);
    const double change = sup_diff(next, o.table);
    o.table = std::move(next);
    ++o.iterations;
    if (change <= tol * (1.0 - gamma)) {
      o.converged = true;
      break;
    }
  }
  o.residual = sup_diff(backup(o.table), o.table);
  return o;
}

/// Multilinear interpolation of the oracle table.
inline double oracle_eval(const OracleQ& o, const StateVec& s, ActionId a) {
  require_dim(s, o.dim, "oracle_eval");
  if (a >= o.num_actions) throw InvalidInput("oracle_eval: action id out of range");
  std::vector<std::size_t> base(o.dim);
  std::vector<double> frac(o.dim);
  for (std::size_t ax = 0; ax < o.dim; ++ax) {
    const double lo = o.box.lo[ax], hi = o.box.hi[ax];
    const double slack = 1e-12 * std::max(1.0, std::abs(hi - lo));
    if (s[ax] < lo - slack || s[ax] > hi + slack)
      throw OutOfDomain("oracle_eval: state outside the oracle box on axis " + std::to_string(ax));
    const std::size_t n = o.nodes_per_axis[ax];
    if (n == 1) {
      base[ax] = 0;
      frac[ax] = 0.0;
      continue;
    }
    const double u = std::clamp((s[ax] - lo) / o.spacing(ax), 0.0, static_cast<double>(n - 1));
    auto i = static_cast<std::size_t>(std::floor(u));
    if (i >= n - 1) i = n - 2;
    base[ax] = i;
    frac[ax] = u - static_cast<double>(i);
  }
  double value = 0.0;
  for (std::size_t corner = 0; corner < (std::size_t{1} << o.dim); ++corner) {
    double w = 1.0;
    std::size_t node = 0, stride = 1;
    for (std::size_t ax = 0; ax < o.dim; ++ax) {
      const bool up = (corner >> ax) & 1u;
      if (o.nodes_per_axis[ax] == 1 && up) {
        w = 0.0;
        break;
      }
      w *= up ? frac[ax] : 1.0 - frac[ax];
      node += (base[ax] + (up ? 1 : 0)) * stride;
      stride *= o.nodes_per_axis[ax];
    }
    if (w != 0.0) value += w * o.value(node, a);
  }
  return value;
}

/// L = L_r + gamma * C_p * R / (1 - gamma).
inline double lipschitz_constant(const EnvSpec& env, double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidInput("lipschitz_constant: gamma must lie in [0, 1)");
  return env.reward_lipschitz + gamma * env.kernel_lipschitz_mass * env.reward_bound / (1.0 - gamma);
}

/// sup over points and actions of |Q(s,a) - r(s,a) - gamma E[max_a' Q(S',a')]|
/// with Q the interpolated oracle. The expectation uses 3-point Gauss-Legendre
/// on every lattice cell (the interpolant is smooth inside a cell), over the
/// oracle box, renormalised by the kernel mass inside the box.
inline double bellman_residual(const OracleQ& o, const EnvSpec& env, double gamma,
                               std::span<const StateVec> points) {
  if (!env.has_density()) throw Unsupported(env.name + ": residual needs a closed-form transition density");
  if (env.dim != o.dim || env.num_actions != o.num_actions)
    throw InvalidInput("bellman_residual: oracle does not match environment");
  constexpr std::array<double, 3> gl_x{-0.7745966692414834, 0.0, 0.7745966692414834};
  constexpr std::array<double, 3> gl_w{5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};

  std::vector<std::vector<double>> qx(o.dim), qw(o.dim);
  std::vector<std::size_t> shape(o.dim);
  for (std::size_t ax = 0; ax < o.dim; ++ax) {
    const std::size_t n = o.nodes_per_axis[ax];
    if (n == 1) {
      qx[ax] = {o.box.lo[ax]};
      qw[ax] = {1.0};
    } else {
      const double hh = o.spacing(ax);
      for (std::size_t c = 0; c + 1 < n; ++c) {
        const double mid = o.node_coord(ax, c) + 0.5 * hh;
        for (std::size_t g = 0; g < 3; ++g) {
          qx[ax].push_back(mid + 0.5 * hh * gl_x[g]);
          qw[ax].push_back(0.5 * hh * gl_w[g]);
        }
      }
    }
    shape[ax] = qx[ax].size();
  }
  std::size_t total = 1;
  for (auto n : shape) total *= n;
  std::vector<double> vmax(total);
  for (std::size_t idx = 0; idx < total; ++idx) {
    std::vector<double> y(o.dim);
    std::size_t rem = idx;
    for (std::size_t ax = 0; ax < o.dim; ++ax) {
      y[ax] = qx[ax][rem % shape[ax]];
      rem /= shape[ax];
    }
    const StateVec ys(std::move(y));
    double best = -std::numeric_limits<double>::infinity();
    for (ActionId a = 0; a < o.num_actions; ++a) best = std::max(best, oracle_eval(o, ys, a));
    vmax[idx] = best;
  }

  const std::vector<std::size_t> one(o.dim, 1);
  double worst = 0.0;
  for (const auto& s : points) {
    require_dim(s, o.dim, "bellman_residual");
    if (!o.box.contains(s.coords())) throw OutOfDomain("bellman_residual: sample point outside the oracle box");
    for (ActionId a = 0; a < o.num_actions; ++a) {
      std::vector<std::vector<double>> rows(o.dim);
      double mass = 1.0;
      for (std::size_t ax = 0; ax < o.dim; ++ax) {
        double m = 0.0;
        rows[ax].resize(shape[ax]);
        for (std::size_t j = 0; j < shape[ax]; ++j) {
          rows[ax][j] = shape[ax] == 1 ? 1.0 : qw[ax][j] * env.kernel->density(ax, s[ax], a, qx[ax][j]);
          m += rows[ax][j];
        }
        mass *= m;
      }
      if (!(mass > 0.0)) throw Unsupported("bellman_residual: kernel has no mass inside the oracle box");
      const double expect = detail::apply_separable(rows, shape, one, vmax)[0] / mass;
      const double res = std::abs(oracle_eval(o, s, a) - env.reward_fn(s, a) - gamma * expect);
      worst = std::max(worst, res);
    }
  }
  return worst;
}

}  // namespace nnql
