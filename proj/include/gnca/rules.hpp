#pragma once

// Ground-truth transition rules: the Voronoi density rule and Boids.

#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gnca/errors.hpp"
#include "gnca/graph.hpp"
#include "gnca/rng.hpp"
#include "gnca/tensor.hpp"

namespace gnca {

enum class StateKind { binary, real };

/// Per-node state rows, n×d.
struct StateMatrix {
  Tensor values;
  StateKind kind = StateKind::real;

  static StateMatrix binary(Tensor v) {
    for (double x : v.data()) {
      if (x != 0.0 && x != 1.0) throw std::invalid_argument("binary state must contain only 0 and 1");
    }
    return StateMatrix{std::move(v), StateKind::binary};
  }
  static StateMatrix real(Tensor v) { return StateMatrix{std::move(v), StateKind::real}; }

  std::size_t num_nodes() const { return values.rows(); }
  std::size_t dim() const { return values.cols(); }

  friend bool operator==(const StateMatrix&, const StateMatrix&) = default;
};

inline StateMatrix random_binary_state(std::size_t n, Rng& rng, double p_alive = 0.5) {
  Tensor v = Tensor::zeros(n, 1);
  for (double& x : v.data()) x = rng.bernoulli(p_alive) ? 1.0 : 0.0;
  return StateMatrix{std::move(v), StateKind::binary};
}

// ---------------------------------------------------------------------------
// Voronoi density rule
// ---------------------------------------------------------------------------

struct VoronoiRule {
  double kappa = 0.42;

  explicit VoronoiRule(double k = 0.42) : kappa(k) {
    if (!(kappa >= 0.0 && kappa <= 1.0)) throw std::invalid_argument("VoronoiRule: kappa must be in [0,1]");
  }
};

/// ρ_i = mean state of the neighbours of i; 0 for isolated nodes.
inline std::vector<double> neighborhood_density(const Graph& g, const StateMatrix& s) {
  std::vector<double> rho(g.num_nodes(), 0.0);
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    const auto nb = g.neighbors(i);
    if (nb.empty()) continue;
    double alive = 0.0;
    for (std::size_t j : nb) alive += s.values(j, 0);
    rho[i] = alive / static_cast<double>(nb.size());
  }
  return rho;
}

/// Synchronous update: keep s_i when ρ_i ≤ κ, otherwise flip it.
inline StateMatrix voronoi_step(const VoronoiRule& rule, const Graph& g, const StateMatrix& s) {
  if (s.dim() != 1 || s.num_nodes() != g.num_nodes()) throw ShapeError("voronoi_step: state must be n×1");
  for (double x : s.values.data()) {
    if (x != 0.0 && x != 1.0) throw std::invalid_argument("voronoi_step: state is not binary");
  }
  const auto rho = neighborhood_density(g, s);
  Tensor next = s.values;
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    if (rho[i] > rule.kappa) next(i, 0) = 1.0 - s.values(i, 0);
  }
  return StateMatrix{std::move(next), StateKind::binary};
}

/// Trajectory [initial, step(initial), ...] of length steps + 1.
template <class Step, class State>
std::vector<State> rollout(Step&& step, State initial, std::size_t steps) {
  std::vector<State> out;
  out.reserve(steps + 1);
  out.push_back(std::move(initial));
  for (std::size_t t = 0; t < steps; ++t) out.push_back(step(out.back()));
  return out;
}

// ---------------------------------------------------------------------------
// Boids
// ---------------------------------------------------------------------------

struct BoidsConfig {
  double radius = 0.15;
  double boundary_margin = 0.2;
  double separation_dist = 0.015;
  double align_scale = 1.0 / 8.0;
  double cohesion_scale = 1.0 / 100.0;
  double speed_limit = 0.01;
  double max_turn_deg = 5.0;
  double box_half_width = 1.0;
  double boundary_push = 0.005;

  void validate() const {
    for (double v : {radius, boundary_margin, separation_dist, align_scale, cohesion_scale, speed_limit, max_turn_deg,
                     box_half_width, boundary_push}) {
      if (!(v > 0.0)) throw ConfigError("BoidsConfig: all parameters must be positive");
    }
    if (!(radius > separation_dist)) throw ConfigError("BoidsConfig: radius must exceed separation_dist");
  }
};

/// Which steering terms are applied; all on for the real rule.
struct BoidsForces {
  bool boundary = true;
  bool separation = true;
  bool alignment = true;
  bool cohesion = true;
};

/// Rows [p_x, p_y, v_x, v_y].
struct BoidsState {
  Tensor values;

  std::size_t size() const { return values.rows(); }
  friend bool operator==(const BoidsState&, const BoidsState&) = default;
};

/// Positions uniform in the box; velocities uniform in [-1,1]^2 scaled by
/// the speed limit.
inline BoidsState random_boids(std::size_t n, const BoidsConfig& cfg, Rng& rng) {
  BoidsState s{Tensor::zeros(n, 4)};
  for (std::size_t i = 0; i < n; ++i) {
    s.values(i, 0) = rng.uniform(-cfg.box_half_width, cfg.box_half_width);
    s.values(i, 1) = rng.uniform(-cfg.box_half_width, cfg.box_half_width);
    s.values(i, 2) = cfg.speed_limit * rng.uniform(-1.0, 1.0);
    s.values(i, 3) = cfg.speed_limit * rng.uniform(-1.0, 1.0);
  }
  return s;
}

inline Graph boids_graph(const BoidsConfig& cfg, const BoidsState& s) {
  Tensor pos = Tensor::zeros(s.size(), 2);
  for (std::size_t i = 0; i < s.size(); ++i) {
    pos(i, 0) = s.values(i, 0);
    pos(i, 1) = s.values(i, 1);
  }
  return radius_graph(PointCloud{std::move(pos)}, cfg.radius);
}

/// Limits the heading change to max_turn (radians) by rotating the old
/// heading toward the new one, keeping the new speed; then clamps speed.
inline std::array<double, 2> limit_velocity(std::array<double, 2> old_v, std::array<double, 2> new_v, double max_turn,
                                            double speed_limit) {
  const double old_speed = std::hypot(old_v[0], old_v[1]);
  double new_speed = std::hypot(new_v[0], new_v[1]);
  if (old_speed > 0.0 && new_speed > 0.0) {
    const double cross = old_v[0] * new_v[1] - old_v[1] * new_v[0];
    const double dot = old_v[0] * new_v[0] + old_v[1] * new_v[1];
    const double angle = std::atan2(std::abs(cross), dot);
    if (angle > max_turn) {
      const double turn = cross >= 0.0 ? max_turn : -max_turn;
      const double ux = old_v[0] / old_speed, uy = old_v[1] / old_speed;
      const double c = std::cos(turn), s = std::sin(turn);
      new_v = {new_speed * (c * ux - s * uy), new_speed * (s * ux + c * uy)};
    }
  }
  new_speed = std::hypot(new_v[0], new_v[1]);
  if (new_speed > speed_limit) {
    const double k = speed_limit / new_speed;
    new_v = {new_v[0] * k, new_v[1] * k};
  }
  return new_v;
}

struct BoidsStep {
  BoidsState next;
  Graph graph;  // neighbourhood used for this step
};

/// One synchronous Boids update. Neighbours are computed once from the
/// current positions; forces are applied in order boundary, separation,
/// alignment, cohesion; then turn and speed limits; then positions advance.
inline BoidsStep boids_step(const BoidsConfig& cfg, const BoidsState& s, BoidsForces forces = {}) {
  const std::size_t n = s.size();
  if (s.values.cols() != 4) throw ShapeError("boids_step: state must be n×4");
  if (!s.values.all_finite()) throw NonFiniteError("boids_step: non-finite state");
  Graph g = boids_graph(cfg, s);
  const double inner = cfg.box_half_width - cfg.boundary_margin;
  const double max_turn = cfg.max_turn_deg * std::numbers::pi / 180.0;
  const double sep2 = cfg.separation_dist * cfg.separation_dist;
  const Tensor& x = s.values;

  BoidsState next{Tensor::zeros(n, 4)};
  for (std::size_t i = 0; i < n; ++i) {
    const double px = x(i, 0), py = x(i, 1), vx = x(i, 2), vy = x(i, 3);
    double ax = 0.0, ay = 0.0;

    if (forces.boundary && (std::abs(px) > inner || std::abs(py) > inner)) {
      const double dist = std::hypot(px, py);
      if (dist > 0.0) {
        ax += cfg.boundary_push * (-px) / dist;
        ay += cfg.boundary_push * (-py) / dist;
      }
    }

    const auto nb = g.neighbors(i);
    if (forces.separation) {
      for (std::size_t j : nb) {
        const double dx = px - x(j, 0), dy = py - x(j, 1);
        if (dx * dx + dy * dy < sep2) {
          ax += dx;
          ay += dy;
        }
      }
    }
    if (!nb.empty()) {
      double mvx = 0.0, mvy = 0.0, mpx = 0.0, mpy = 0.0;
      for (std::size_t j : nb) {
        mvx += x(j, 2);
        mvy += x(j, 3);
        mpx += x(j, 0);
        mpy += x(j, 1);
      }
      const double inv = 1.0 / static_cast<double>(nb.size());
      if (forces.alignment) {
        ax += cfg.align_scale * (mvx * inv - vx);
        ay += cfg.align_scale * (mvy * inv - vy);
      }
      if (forces.cohesion) {
        ax += cfg.cohesion_scale * (mpx * inv - px);
        ay += cfg.cohesion_scale * (mpy * inv - py);
      }
    }

    const auto v = limit_velocity({vx, vy}, {vx + ax, vy + ay}, max_turn, cfg.speed_limit);
    next.values(i, 0) = px + v[0];
    next.values(i, 1) = py + v[1];
    next.values(i, 2) = v[0];
    next.values(i, 3) = v[1];
  }
  return BoidsStep{std::move(next), std::move(g)};
}

// ---------------------------------------------------------------------------
// Trajectory files (JSONL): {"t": int, "states": [[...], ...]} per line.
// ---------------------------------------------------------------------------

inline void write_trajectory_jsonl(std::ostream& out, std::span<const Tensor> states, bool binary) {
  for (std::size_t t = 0; t < states.size(); ++t) {
    nlohmann::json rows = nlohmann::json::array();
    const Tensor& s = states[t];
    for (std::size_t i = 0; i < s.rows(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t k = 0; k < s.cols(); ++k) {
        if (binary) {
          row.push_back(static_cast<int>(s(i, k)));
        } else {
          row.push_back(s(i, k));
        }
      }
      rows.push_back(std::move(row));
    }
    out << nlohmann::json{{"t", t}, {"states", std::move(rows)}}.dump() << '\n';
  }
}

inline std::vector<Tensor> read_trajectory_jsonl(std::istream& in) {
  std::vector<Tensor> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto rec = nlohmann::json::parse(line);
    if (!rec.contains("t") || !rec.contains("states")) throw SchemaError("trajectory record needs 't' and 'states'");
    if (rec["t"].get<std::size_t>() != out.size()) throw SchemaError("trajectory records must be consecutive");
    const auto& rows = rec["states"];
    const std::size_t n = rows.size();
    const std::size_t d = n ? rows[0].size() : 0;
    Tensor s = Tensor::zeros(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      if (rows[i].size() != d) throw SchemaError("ragged state rows");
      for (std::size_t k = 0; k < d; ++k) s(i, k) = rows[i][k].get<double>();
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace gnca
