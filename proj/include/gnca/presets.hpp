#pragma once

// Conversions from a resolved Config to the typed trainer configurations.

#include <string>

#include "gnca/config.hpp"
#include "gnca/trainers.hpp"

namespace gnca {

inline VoronoiTrainConfig voronoi_train_config(const Config& cfg) {
  VoronoiTrainConfig t;
  t.kappa = cfg.real("voronoi.kappa");
  t.batches = cfg.count("voronoi.batches");
  t.batch_size = cfg.count("voronoi.batch_size");
  t.lr = cfg.real("voronoi.lr");
  t.hidden = cfg.count("hidden");
  t.seed = cfg.count("seed");
  return t;
}

/// The Delaunay graph used by every Voronoi command for a given seed.
inline Graph voronoi_graph(const Config& cfg) { return random_delaunay(cfg.count("voronoi.n"), derive_seed(cfg.count("seed"), 100)); }

inline MinimalMlpTrainConfig minimal_train_config(const Config& cfg) {
  MinimalMlpTrainConfig t;
  t.kappa = cfg.real("voronoi.kappa");
  t.epochs = cfg.count("minimal.epochs");
  t.lr = cfg.real("minimal.lr");
  t.l2 = cfg.real("minimal.l2");
  t.plateau_patience = cfg.count("minimal.plateau_patience");
  t.plateau_min_delta = cfg.real("minimal.min_delta");
  t.max_attempts = cfg.count("minimal.max_attempts");
  t.seed = cfg.count("seed");
  return t;
}

inline BoidsConfig boids_config(const Config& cfg) {
  BoidsConfig b;
  b.radius = cfg.real("boids.radius");
  b.boundary_margin = cfg.real("boids.margin");
  b.separation_dist = cfg.real("boids.separation");
  b.align_scale = cfg.real("boids.align");
  b.cohesion_scale = cfg.real("boids.cohesion");
  b.speed_limit = cfg.real("boids.speed_limit");
  b.max_turn_deg = cfg.real("boids.max_turn_deg");
  b.boundary_push = cfg.real("boids.boundary_push");
  b.validate();
  return b;
}

inline BoidsTrainConfig boids_train_config(const Config& cfg) {
  BoidsTrainConfig t;
  t.boids = boids_config(cfg);
  t.n_boids = cfg.count("boids.n");
  t.steps = cfg.count("boids.steps");
  t.train_trajectories = cfg.count("boids.train");
  t.val_trajectories = cfg.count("boids.val");
  t.test_trajectories = cfg.count("boids.test");
  t.batch_size = cfg.count("boids.batch_size");
  t.lr = cfg.real("boids.lr");
  t.plateau_patience = cfg.count("boids.plateau_patience");
  t.early_stop_patience = cfg.count("boids.early_stop_patience");
  t.max_epochs = cfg.count("boids.max_epochs");
  t.hidden = cfg.count("hidden");
  t.velocity_only_base = cfg.flag("boids.velocity_only_base");
  t.position_scale = cfg.real("boids.position_scale");
  t.velocity_scale = cfg.real("boids.velocity_scale");
  t.seed = cfg.count("seed");
  return t;
}

/// target.t is either N (fixed) or LO:HI (uniform per batch).
inline FixedTargetConfig target_config(const Config& cfg) {
  FixedTargetConfig f;
  const std::string t = cfg.get("target.t");
  try {
    const auto colon = t.find(':');
    std::size_t used = 0;
    f.t_min = std::stoul(t.substr(0, colon), &used);
    if (used != (colon == std::string::npos ? t.size() : colon)) throw std::invalid_argument("trailing");
    f.t_max = f.t_min;
    if (colon != std::string::npos) {
      f.t_max = std::stoul(t.substr(colon + 1), &used);
      if (used != t.size() - colon - 1) throw std::invalid_argument("trailing");
    }
  } catch (const std::exception&) {
    throw ConfigError("target.t must be N or LO:HI, got '" + t + "'");
  }
  f.batch_size = cfg.count("target.batch_size");
  f.cache_size = cfg.count("target.cache_size");
  f.lr = cfg.real("target.lr");
  f.clip_norm = cfg.real("target.clip_norm");
  f.batches_per_epoch = cfg.count("target.batches_per_epoch");
  f.plateau_patience = cfg.count("target.plateau_patience");
  f.early_stop_patience = cfg.count("target.early_stop_patience");
  f.max_epochs = cfg.count("target.max_epochs");
  f.hidden = cfg.count("target.hidden");
  f.init_gain = cfg.real("target.init_gain");
  f.seed = cfg.count("seed");
  f.validate();
  return f;
}

inline Graph target_graph(const Config& cfg) { return graph_from_spec(cfg.get("target.graph"), derive_seed(cfg.count("seed"), 100)); }

}  // namespace gnca
