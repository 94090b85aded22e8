#pragma once

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nnql/offline.hpp"
#include "nnql/online.hpp"
#include "nnql/oracle.hpp"

namespace nnql {

using json = nlohmann::json;

/// Shortest representation that reads back to the same double.
inline std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

inline double parse_double(std::string_view s, std::size_t line) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw InvalidInput("line " + std::to_string(line) + ": bad number '" + std::string(s) + "'");
  return v;
}

inline std::uint64_t parse_uint(std::string_view s, std::size_t line) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw InvalidInput("line " + std::to_string(line) + ": bad integer '" + std::string(s) + "'");
  return v;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open '" + path + "' for reading");
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput("cannot open '" + path + "' for writing");
  return out;
}

inline json read_json(const std::string& path) {
  auto in = open_in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidInput(path + ": " + e.what());
  }
}

inline void write_json(const std::string& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

inline std::size_t count_state_columns(const std::vector<std::string_view>& header, std::size_t first) {
  std::size_t d = 0;
  while (first + d < header.size() && header[first + d] == "s" + std::to_string(d)) ++d;
  return d;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Trajectories: header t,s0..s{d-1},a,r; a last row t = T+1 holds the
// terminal state with empty a and r.

inline void write_trajectory_csv(std::ostream& out, const Trajectory& traj) {
  out << 't';
  for (std::size_t i = 0; i < traj.dim; ++i) out << ",s" << i;
  out << ",a,r\n";
  for (const auto& st : traj.steps) {
    out << st.t;
    for (double x : st.state.coords()) out << ',' << format_double(x);
    out << ',' << st.action << ',' << format_double(st.reward) << '\n';
  }
  out << traj.length() + 1;
  for (double x : traj.terminal_state.coords()) out << ',' << format_double(x);
  out << ",,\n";
}

/// Reads a trajectory. `num_actions` = 0 infers it as max action + 1.
inline Trajectory read_trajectory_csv(std::istream& in, std::size_t num_actions = 0) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("trajectory: empty file");
  const auto header = detail::split_csv(detail::trim_cr(line));
  const std::size_t d = detail::count_state_columns(header, 1);
  if (header.size() != d + 3 || header[0] != "t" || d == 0 || header[d + 1] != "a" || header[d + 2] != "r")
    throw InvalidInput("trajectory: header must be t,s0,...,s{d-1},a,r");
  Trajectory traj;
  traj.dim = d;
  std::size_t lineno = 1, max_action = 0;
  bool terminal = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto row = detail::trim_cr(line);
    if (row.empty()) continue;
    if (terminal) throw InvalidInput("trajectory: rows after the terminal row");
    const auto f = detail::split_csv(row);
    if (f.size() != d + 3) throw InvalidInput("line " + std::to_string(lineno) + ": wrong column count");
    const StepIndex t = detail::parse_uint(f[0], lineno);
    std::vector<double> s(d);
    for (std::size_t i = 0; i < d; ++i) s[i] = detail::parse_double(f[1 + i], lineno);
    if (f[d + 1].empty() && f[d + 2].empty()) {
      if (t != traj.steps.size() + 1) throw InvalidInput("trajectory: terminal row must have t = T+1");
      traj.terminal_state = StateVec(std::move(s));
      terminal = true;
      continue;
    }
    if (t != traj.steps.size() + 1) throw InvalidInput("line " + std::to_string(lineno) + ": steps must be 1, 2, ...");
    const auto a = static_cast<ActionId>(detail::parse_uint(f[d + 1], lineno));
    max_action = std::max(max_action, a);
    traj.steps.push_back({t, StateVec(std::move(s)), a, detail::parse_double(f[d + 2], lineno)});
  }
  if (!terminal) throw InvalidInput("trajectory: missing terminal row t = T+1");
  traj.num_actions = num_actions > 0 ? num_actions : max_action + 1;
  traj.validate();
  return traj;
}

inline void save_trajectory(const std::string& path, const Trajectory& traj) {
  auto out = detail::open_out(path);
  write_trajectory_csv(out, traj);
}

inline Trajectory load_trajectory(const std::string& path, std::size_t num_actions = 0) {
  auto in = detail::open_in(path);
  return read_trajectory_csv(in, num_actions);
}

// ---------------------------------------------------------------------------
// Offline model: CSV t,Q plus a JSON sidecar. The index is rebuilt from the
// trajectory the sidecar names.

inline json offline_sidecar(const OfflineModel& model, const std::string& trajectory_path) {
  return json{{"k", model.params.k},
              {"gamma", model.params.gamma},
              {"sweeps_run", model.sweeps_run},
              {"final_gap", model.final_gap},
              {"converged", model.converged},
              {"fix_tol", model.params.fix_tol},
              {"max_sweeps", model.params.max_sweeps},
              {"norm", std::string(norm_name(model.params.norm))},
              {"dim", model.index.dim()},
              {"num_actions", model.index.num_actions()},
              {"empty_action_queries", model.empty_action_queries},
              {"trajectory", trajectory_path}};
}

inline void write_q_csv(std::ostream& out, std::span<const double> q) {
  out << "t,Q\n";
  for (std::size_t i = 0; i < q.size(); ++i) out << i + 1 << ',' << format_double(q[i]) << '\n';
}

inline std::vector<double> read_q_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::trim_cr(line) != "t,Q") throw InvalidInput("model: header must be t,Q");
  std::vector<double> q;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto row = detail::trim_cr(line);
    if (row.empty()) continue;
    const auto f = detail::split_csv(row);
    if (f.size() != 2) throw InvalidInput("line " + std::to_string(lineno) + ": expected t,Q");
    if (detail::parse_uint(f[0], lineno) != q.size() + 1) throw InvalidInput("model: steps must be 1, 2, ...");
    q.push_back(detail::parse_double(f[1], lineno));
  }
  return q;
}

inline void save_offline_model(const std::string& csv_path, const std::string& json_path, const OfflineModel& model,
                               const std::string& trajectory_path) {
  auto out = detail::open_out(csv_path);
  write_q_csv(out, model.Q);
  detail::write_json(json_path, offline_sidecar(model, trajectory_path));
}

inline OfflineModel load_offline_model(const std::string& csv_path, const std::string& json_path,
                                       const Trajectory& traj) {
  auto in = detail::open_in(csv_path);
  auto q = read_q_csv(in);
  const json meta = detail::read_json(json_path);
  if (q.size() != traj.length()) throw InvalidInput("model: Q length does not match the trajectory");
  try {
    OfflineParams p;
    p.k = meta.at("k").get<std::size_t>();
    p.gamma = meta.at("gamma").get<double>();
    p.fix_tol = meta.at("fix_tol").get<double>();
    p.max_sweeps = meta.at("max_sweeps").get<std::size_t>();
    p.norm = parse_norm(meta.at("norm").get<std::string>());
    p.validate(traj.length());
    OfflineModel model{std::move(q), build_trajectory_index(traj, p.norm), p};
    model.sweeps_run = meta.at("sweeps_run").get<std::size_t>();
    model.final_gap = meta.at("final_gap").get<double>();
    model.converged = meta.at("converged").get<bool>();
    model.empty_action_queries = meta.value("empty_action_queries", std::size_t{0});
    return model;
  } catch (const json::exception& e) {
    throw InvalidInput(json_path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Online checkpoint: CSV t,Q,s0..,a (state and action only for steps still in
// the window) plus a JSON sidecar with t_now and the parameters.

inline void save_checkpoint(const std::string& csv_path, const std::string& json_path, const OnlineLearner& learner) {
  const auto& p = learner.params();
  const auto window = learner.window_entries();
  auto out = detail::open_out(csv_path);
  out << "t,Q";
  for (std::size_t i = 0; i < p.dim; ++i) out << ",s" << i;
  out << ",a\n";
  std::size_t w = 0;
  const auto q = learner.Q();
  for (std::size_t i = 0; i < q.size(); ++i) {
    const StepIndex t = i + 1;
    out << t << ',' << format_double(q[i]);
    if (w < window.size() && window[w].t == t) {
      for (double x : window[w].state.coords()) out << ',' << format_double(x);
      out << ',' << window[w].action << '\n';
      ++w;
    } else {
      for (std::size_t j = 0; j <= p.dim; ++j) out << ',';
      out << '\n';
    }
  }
  detail::write_json(json_path, json{{"t_now", learner.t_now()},
                                     {"gamma", p.gamma},
                                     {"beta", p.beta},
                                     {"dim", p.dim},
                                     {"num_actions", p.num_actions},
                                     {"norm", std::string(norm_name(p.norm))},
                                     {"k_fixed", p.k_fixed},
                                     {"watermark", learner.index().watermark()},
                                     {"truncated_queries", learner.diagnostics().truncated_queries},
                                     {"empty_fallbacks", learner.diagnostics().empty_fallbacks}});
}

inline OnlineLearner load_checkpoint(const std::string& csv_path, const std::string& json_path) {
  const json meta = detail::read_json(json_path);
  OnlineParams p;
  OnlineDiagnostics diag;
  StepIndex t_now = 0;
  try {
    p.gamma = meta.at("gamma").get<double>();
    p.beta = meta.at("beta").get<double>();
    p.dim = meta.at("dim").get<std::size_t>();
    p.num_actions = meta.at("num_actions").get<std::size_t>();
    p.norm = parse_norm(meta.at("norm").get<std::string>());
    p.k_fixed = meta.at("k_fixed").get<std::size_t>();
    t_now = meta.at("t_now").get<StepIndex>();
    diag.truncated_queries = meta.at("truncated_queries").get<std::size_t>();
    diag.empty_fallbacks = meta.at("empty_fallbacks").get<std::size_t>();
  } catch (const json::exception& e) {
    throw InvalidInput(json_path + ": " + e.what());
  }
  p.validate();
  auto in = detail::open_in(csv_path);
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("checkpoint: empty file");
  const auto header = detail::split_csv(detail::trim_cr(line));
  if (header.size() != p.dim + 3 || header[0] != "t" || header[1] != "Q" ||
      detail::count_state_columns(header, 2) != p.dim || header.back() != "a")
    throw InvalidInput("checkpoint: header must be t,Q,s0,...,s{d-1},a");
  std::vector<double> q;
  std::vector<IndexEntry> window;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto row = detail::trim_cr(line);
    if (row.empty()) continue;
    const auto f = detail::split_csv(row);
    if (f.size() != p.dim + 3) throw InvalidInput("line " + std::to_string(lineno) + ": wrong column count");
    const StepIndex t = detail::parse_uint(f[0], lineno);
    if (t != q.size() + 1) throw InvalidInput("checkpoint: steps must be 1, 2, ...");
    q.push_back(detail::parse_double(f[1], lineno));
    if (f.back().empty()) continue;
    std::vector<double> s(p.dim);
    for (std::size_t i = 0; i < p.dim; ++i) s[i] = detail::parse_double(f[2 + i], lineno);
    const auto a = static_cast<ActionId>(detail::parse_uint(f.back(), lineno));
    if (a >= p.num_actions) throw InvalidInput("line " + std::to_string(lineno) + ": action id out of range");
    window.push_back({t, StateVec(std::move(s)), a});
  }
  if (q.size() != t_now) throw InvalidInput("checkpoint: row count does not match t_now");
  return OnlineLearner::restore(p, std::move(q), window, diag);
}

// ---------------------------------------------------------------------------
// Oracle: CSV node,x0..,q0.. plus a JSON header.

inline json oracle_header(const OracleQ& o) {
  return json{{"env", o.env_name},
              {"dim", o.dim},
              {"num_actions", o.num_actions},
              {"h", o.h},
              {"gamma", o.gamma},
              {"tol", o.tol},
              {"residual", o.residual},
              {"iterations", o.iterations},
              {"converged", o.converged},
              {"mass_defect", o.mass_defect},
              {"truncated", o.truncated},
              {"box_mass_loss", o.box_mass_loss},
              {"box_lo", o.box.lo},
              {"box_hi", o.box.hi},
              {"nodes_per_axis", o.nodes_per_axis}};
}

inline void save_oracle(const std::string& csv_path, const std::string& json_path, const OracleQ& o) {
  auto out = detail::open_out(csv_path);
  out << "node";
  for (std::size_t i = 0; i < o.dim; ++i) out << ",x" << i;
  for (std::size_t a = 0; a < o.num_actions; ++a) out << ",q" << a;
  out << '\n';
  for (std::size_t node = 0; node < o.num_nodes(); ++node) {
    out << node;
    const StateVec s = o.node_state(node);
    for (double x : s.coords()) out << ',' << format_double(x);
    for (ActionId a = 0; a < o.num_actions; ++a) out << ',' << format_double(o.value(node, a));
    out << '\n';
  }
  detail::write_json(json_path, oracle_header(o));
}

inline OracleQ load_oracle(const std::string& csv_path, const std::string& json_path) {
  const json meta = detail::read_json(json_path);
  OracleQ o;
  try {
    o.env_name = meta.at("env").get<std::string>();
    o.dim = meta.at("dim").get<std::size_t>();
    o.num_actions = meta.at("num_actions").get<std::size_t>();
    o.h = meta.at("h").get<double>();
    o.gamma = meta.at("gamma").get<double>();
    o.tol = meta.at("tol").get<double>();
    o.residual = meta.at("residual").get<double>();
    o.iterations = meta.at("iterations").get<std::size_t>();
    o.converged = meta.at("converged").get<bool>();
    o.mass_defect = meta.at("mass_defect").get<double>();
    o.truncated = meta.at("truncated").get<bool>();
    o.box_mass_loss = meta.at("box_mass_loss").get<double>();
    o.box.lo = meta.at("box_lo").get<std::vector<double>>();
    o.box.hi = meta.at("box_hi").get<std::vector<double>>();
    o.nodes_per_axis = meta.at("nodes_per_axis").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw InvalidInput(json_path + ": " + e.what());
  }
  if (o.dim == 0 || o.num_actions == 0 || o.box.lo.size() != o.dim || o.box.hi.size() != o.dim ||
      o.nodes_per_axis.size() != o.dim)
    throw InvalidInput(json_path + ": inconsistent oracle header");
  std::size_t total = 1;
  for (auto n : o.nodes_per_axis) total *= n;
  o.table.assign(total * o.num_actions, 0.0);

  auto in = detail::open_in(csv_path);
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("oracle: empty file");
  std::size_t lineno = 1, rows = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto row = detail::trim_cr(line);
    if (row.empty()) continue;
    const auto f = detail::split_csv(row);
    if (f.size() != 1 + o.dim + o.num_actions) throw InvalidInput("line " + std::to_string(lineno) + ": wrong column count");
    const auto node = detail::parse_uint(f[0], lineno);
    if (node != rows) throw InvalidInput("oracle: nodes must be listed in order");
    for (ActionId a = 0; a < o.num_actions; ++a)
      o.table[node * o.num_actions + a] = detail::parse_double(f[1 + o.dim + a], lineno);
    ++rows;
  }
  if (rows != total) throw InvalidInput("oracle: node count does not match the header");
  return o;
}

}  // namespace nnql
