#pragma once

// Training procedures: one-step Voronoi learning, the 2-hidden-unit MLP for
// the Voronoi rule, Boids trajectory imitation, and fixed-target BPTT with a
// replay cache.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gnca/errors.hpp"
#include "gnca/graph.hpp"
#include "gnca/metrics.hpp"
#include "gnca/model.hpp"
#include "gnca/optim.hpp"
#include "gnca/rng.hpp"
#include "gnca/rules.hpp"
#include "gnca/tensor.hpp"

namespace gnca {

struct TrainReport {
  std::vector<std::size_t> epochs;
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> val_accuracy;  // empty when not applicable
  std::vector<double> learning_rate;
  std::size_t best_epoch = 0;
  double wall_clock_seconds = 0.0;   // kept out of the JSON so reruns compare equal
  std::string checkpoint_path;

  void log(std::size_t epoch, double train, double val, double lr, std::optional<double> acc = std::nullopt) {
    epochs.push_back(epoch);
    train_loss.push_back(train);
    val_loss.push_back(val);
    learning_rate.push_back(lr);
    if (acc) val_accuracy.push_back(*acc);
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["epochs"] = epochs;
    j["train_loss"] = train_loss;
    j["val_loss"] = val_loss;
    j["val_accuracy"] = val_accuracy;
    j["learning_rate"] = learning_rate;
    j["best_epoch"] = best_epoch;
    j["checkpoint"] = checkpoint_path;
    return j;
  }
};

namespace detail {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

/// Stacks equally shaped n×d states into one (k·n)×d block.
inline Tensor stack_rows(std::span<const Tensor> parts) {
  if (parts.empty()) return Tensor::zeros(0, 0);
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    if (p.cols() != cols) throw ShapeError("stack_rows: column mismatch");
    rows += p.rows();
  }
  Tensor out = Tensor::zeros(rows, cols);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.size();
  }
  return out;
}

inline Tensor block_rows(const Tensor& x, std::size_t block, std::size_t rows_per_block) {
  Tensor out = Tensor::zeros(rows_per_block, x.cols());
  const auto begin = x.data().begin() + static_cast<std::ptrdiff_t>(block * rows_per_block * x.cols());
  std::copy(begin, begin + static_cast<std::ptrdiff_t>(out.size()), out.data().begin());
  return out;
}

inline Tensor tile_rows(const Tensor& x, std::size_t copies) {
  std::vector<Tensor> parts(copies, x);
  return stack_rows(parts);
}

/// One optimiser step from the tape's gradients; returns the gradient norm.
inline double apply_gradients(GncaParams& params, AdamState& adam, const Tape& tape, const BoundGnca& bound,
                              std::optional<double> clip = std::nullopt) {
  std::vector<Tensor> grads = gradients(tape, bound);
  const double norm = clip ? clip_global_norm(grads, *clip) : global_norm(grads);
  const auto ptrs = params.tensors();
  adam_step(adam, ptrs, grads);
  return norm;
}

}  // namespace detail

/// Autonomous rollout feeding predictions back as inputs.
inline std::vector<Tensor> autonomous_eval(const GncaParams& params, const Graph& g, const Tensor& s0, std::size_t steps,
                                           bool round) {
  std::vector<Tensor> traj{s0};
  traj.reserve(steps + 1);
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor next = gnca_forward(params, g, traj.back());
    traj.push_back(round ? round_binary(next) : std::move(next));
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Voronoi: one-step supervised learning
// ---------------------------------------------------------------------------

struct VoronoiTrainConfig {
  double kappa = 0.42;
  std::size_t batches = 300;
  std::size_t batch_size = 32;
  double lr = 0.01;
  std::size_t hidden = 256;
  std::uint64_t seed = 0;
  std::ostream* log = nullptr;
};

struct VoronoiTrainResult {
  GncaParams params;
  TrainReport report;
};

inline GncaConfig voronoi_gnca_config(std::size_t hidden) {
  GncaConfig c;
  c.state_dim = 1;
  c.out_dim = 1;
  c.hidden = hidden;
  c.output = OutputActivation::sigmoid;
  c.aggregation = Reduce::sum;
  return c;
}

/// Fraction of node states predicted correctly after rounding.
inline double binary_accuracy(const Tensor& probs, const Tensor& targets) {
  const Tensor pred = round_binary(probs);
  std::size_t ok = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) ok += pred[k] == targets[k];
  return static_cast<double>(ok) / static_cast<double>(pred.size());
}

/// Random binary batch on a replicated graph, with rule targets.
inline std::pair<Tensor, Tensor> voronoi_batch(const Graph& batched, const VoronoiRule& rule, Rng& rng) {
  StateMatrix s = random_binary_state(batched.num_nodes(), rng);
  StateMatrix next = voronoi_step(rule, batched, s);
  return {std::move(s.values), std::move(next.values)};
}

inline VoronoiTrainResult train_voronoi(const Graph& g, const VoronoiTrainConfig& cfg) {
  if (cfg.batch_size == 0 || cfg.batches == 0) throw ConfigError("train_voronoi: batches and batch_size must be positive");
  const VoronoiRule rule(cfg.kappa);
  detail::Stopwatch clock;
  VoronoiTrainResult out{init_gnca(voronoi_gnca_config(cfg.hidden), derive_seed(cfg.seed, 0)), {}};
  const Graph batched = replicate(g, cfg.batch_size);
  Rng train_rng(derive_seed(cfg.seed, 1));
  Rng val_rng(derive_seed(cfg.seed, 2));
  AdamState adam;
  adam.lr = cfg.lr;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t step = 0; step < cfg.batches; ++step) {
    auto [x, y] = voronoi_batch(batched, rule, train_rng);
    double loss_value;
    {
      Tape tape;
      BoundGnca p = bind(tape, out.params, true);
      Var loss = bce_with_logits(gnca_logits(p, batched, tape.constant(std::move(x))), tape.constant(std::move(y)));
      loss_value = loss.value().item();
      tape.backward(loss);
      detail::apply_gradients(out.params, adam, tape, p);
    }
    auto [vx, vy] = voronoi_batch(batched, rule, val_rng);
    double val_loss, val_acc;
    {
      Tape tape;
      BoundGnca p = bind(tape, out.params, false);
      Var logits = gnca_logits(p, batched, tape.constant(std::move(vx)));
      val_loss = bce_with_logits(logits, tape.constant(vy)).value().item();
      val_acc = binary_accuracy(sigmoid(logits).value(), vy);
    }
    out.report.log(step, loss_value, val_loss, adam.lr, val_acc);
    if (val_loss < best) {
      best = val_loss;
      out.report.best_epoch = step;
    }
    if (cfg.log && (step % 25 == 0 || step + 1 == cfg.batches)) {
      *cfg.log << "voronoi step " << step << " loss " << loss_value << " val_acc " << val_acc << '\n';
    }
  }
  out.report.wall_clock_seconds = clock.seconds();
  return out;
}

/// Accuracy on `batches` fresh random batches.
inline double voronoi_accuracy(const GncaParams& params, const Graph& g, double kappa, std::size_t batches,
                               std::size_t batch_size, std::uint64_t seed) {
  const VoronoiRule rule(kappa);
  const Graph batched = replicate(g, batch_size);
  Rng rng(seed);
  double acc = 0.0;
  for (std::size_t b = 0; b < batches; ++b) {
    auto [x, y] = voronoi_batch(batched, rule, rng);
    acc += binary_accuracy(gnca_forward(params, batched, x), y);
  }
  return acc / static_cast<double>(batches);
}

struct VoronoiEvaluation {
  EntropyReport truth;
  EntropyReport model;
  std::size_t identical_steps = 0;  // leading steps where both rollouts agree exactly
};

/// Rollouts of the rule and of a binary step function from the same seeded
/// random start.
inline VoronoiEvaluation compare_voronoi_rollouts(const std::function<Tensor(const Tensor&)>& model_step, const Graph& g,
                                                  double kappa, std::size_t steps, std::uint64_t seed) {
  const VoronoiRule rule(kappa);
  Rng rng(seed);
  const StateMatrix s0 = random_binary_state(g.num_nodes(), rng);
  std::vector<Tensor> truth{s0.values}, model{s0.values};
  StateMatrix s = s0;
  for (std::size_t t = 0; t < steps; ++t) {
    s = voronoi_step(rule, g, s);
    truth.push_back(s.values);
    model.push_back(model_step(model.back()));
  }
  VoronoiEvaluation e{entropy_report(truth), entropy_report(model), 0};
  while (e.identical_steps + 1 < truth.size() && truth[e.identical_steps + 1] == model[e.identical_steps + 1]) ++e.identical_steps;
  return e;
}

// ---------------------------------------------------------------------------
// Voronoi: the enumerated (s, ρ) dataset and its 2-hidden-unit MLP
// ---------------------------------------------------------------------------

struct MinimalDataset {
  Tensor inputs;   // 198×2 rows [s, ρ]
  Tensor targets;  // 198×1
};

/// s ∈ {0,1} × ρ ∈ {0.01, …, 0.99}, targets from the Voronoi rule.
inline MinimalDataset minimal_voronoi_dataset(double kappa) {
  const VoronoiRule rule(kappa);
  MinimalDataset d{Tensor::zeros(198, 2), Tensor::zeros(198, 1)};
  std::size_t row = 0;
  for (int s = 0; s <= 1; ++s) {
    for (int k = 1; k <= 99; ++k, ++row) {
      const double rho = static_cast<double>(k) / 100.0;
      d.inputs(row, 0) = s;
      d.inputs(row, 1) = rho;
      d.targets(row, 0) = rho > rule.kappa ? 1.0 - s : static_cast<double>(s);
    }
  }
  return d;
}

struct MinimalEvaluation {
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<std::size_t> wrong_rows;
};

inline MinimalEvaluation evaluate_minimal_net(const MinimalVoronoiNet& net, const MinimalDataset& d) {
  Tape tape;
  const Tensor pred = round_binary(net.forward(tape.constant(d.inputs)).value());
  MinimalEvaluation e;
  e.total = pred.rows();
  for (std::size_t r = 0; r < pred.rows(); ++r) {
    if (pred(r, 0) == d.targets(r, 0)) {
      ++e.correct;
    } else {
      e.wrong_rows.push_back(r);
    }
  }
  return e;
}

struct MinimalMlpTrainConfig {
  double kappa = 0.42;
  std::size_t epochs = 100000;
  double lr = 0.001;
  double l2 = 0.001;
  std::size_t plateau_patience = 10000;
  double plateau_min_delta = 1e-8;
  std::size_t max_attempts = 20;
  std::uint64_t seed = 0;
};

struct MinimalMlpTrainResult {
  MinimalVoronoiNet net;
  MinimalEvaluation evaluation;
  std::size_t attempts = 0;
  double final_loss = 0.0;
};

/// Full-batch MSE + L2 on the kernels, weights uniform in [−1, 1]; retried
/// with fresh seeds until the training set is classified perfectly.
inline MinimalMlpTrainResult train_minimal_voronoi_mlp(const MinimalMlpTrainConfig& cfg) {
  const MinimalDataset data = minimal_voronoi_dataset(cfg.kappa);
  MinimalMlpTrainResult best;
  for (std::size_t attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    Rng rng(derive_seed(cfg.seed, attempt));
    MinimalVoronoiNet net{Tensor::zeros(2, 2), Tensor::zeros(1, 2), Tensor::zeros(2, 1), Tensor::zeros(1, 1)};
    for (double& w : net.w1.data()) w = rng.uniform(-1.0, 1.0);
    for (double& w : net.w2.data()) w = rng.uniform(-1.0, 1.0);
    AdamState adam;
    adam.lr = cfg.lr;
    PlateauScheduler plateau{0.1, cfg.plateau_patience, cfg.plateau_min_delta};
    double loss_value = 0.0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      Tape tape;
      Var w1 = tape.parameter(net.w1), b1 = tape.parameter(net.b1), w2 = tape.parameter(net.w2), b2 = tape.parameter(net.b2);
      Var h = relu(affine(tape.constant(data.inputs), w1, b1));
      Var y = sigmoid(affine(h, w2, b2));
      Var penalty = add(sum(mul(w1, w1)), sum(mul(w2, w2)));
      Var loss = add(mse(y, tape.constant(data.targets)), scale(penalty, cfg.l2));
      loss_value = loss.value().item();
      tape.backward(loss);
      std::vector<Tensor*> ptrs{&net.w1, &net.b1, &net.w2, &net.b2};
      std::vector<Tensor> grads{tape.grad(w1), tape.grad(b1), tape.grad(w2), tape.grad(b2)};
      adam_step(adam, ptrs, grads);
      plateau.update(loss_value, adam.lr);
    }
    MinimalEvaluation eval = evaluate_minimal_net(net, data);
    const bool better = attempt == 0 || eval.correct > best.evaluation.correct;
    if (better) {
      best.net = net;
      best.evaluation = eval;
      best.final_loss = loss_value;
    }
    best.attempts = attempt + 1;
    if (eval.correct == eval.total) break;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Boids: trajectory imitation
// ---------------------------------------------------------------------------

struct BoidsTrainConfig {
  BoidsConfig boids;
  std::size_t n_boids = 50;
  std::size_t steps = 200;
  std::size_t train_trajectories = 30;
  std::size_t val_trajectories = 5;
  std::size_t test_trajectories = 5;
  std::size_t batch_size = 30;
  double lr = 1e-3;
  std::size_t plateau_patience = 10;
  std::size_t early_stop_patience = 20;
  std::size_t max_epochs = 1000;
  std::size_t hidden = 256;
  bool velocity_only_base = false;
  double position_scale = 1.0;
  double velocity_scale = 100.0;
  std::uint64_t seed = 0;
  std::ostream* log = nullptr;
};

struct Transition {
  Tensor state;
  Tensor next;
  Graph graph;
};

struct BoidsDataset {
  std::vector<Transition> train, val, test;
  std::vector<Tensor> test_initial_states;
};

/// Trajectory seeds: train k → stream k, validation → 1'000'000 + k,
/// test → 2'000'000 + k, so the splits never share a trajectory.
inline std::uint64_t boids_trajectory_seed(std::uint64_t seed, int split, std::size_t k) {
  return derive_seed(seed, 1'000'000ull * static_cast<std::uint64_t>(split) + k);
}

inline std::vector<Tensor> simulate_boids(const BoidsConfig& cfg, std::size_t n, std::size_t steps, std::uint64_t seed) {
  Rng rng(seed);
  BoidsState s = random_boids(n, cfg, rng);
  std::vector<Tensor> traj{s.values};
  for (std::size_t t = 0; t < steps; ++t) {
    s = boids_step(cfg, s).next;
    traj.push_back(s.values);
  }
  return traj;
}

inline BoidsDataset make_boids_dataset(const BoidsTrainConfig& cfg) {
  cfg.boids.validate();
  BoidsDataset d;
  auto fill = [&](std::vector<Transition>& out, int split, std::size_t count) {
    for (std::size_t k = 0; k < count; ++k) {
      const auto traj = simulate_boids(cfg.boids, cfg.n_boids, cfg.steps, boids_trajectory_seed(cfg.seed, split, k));
      if (split == 2) d.test_initial_states.push_back(traj[0]);
      for (std::size_t t = 0; t + 1 < traj.size(); ++t) {
        out.push_back({traj[t], traj[t + 1], boids_graph(cfg.boids, BoidsState{traj[t]})});
      }
    }
  };
  fill(d.train, 0, cfg.train_trajectories);
  fill(d.val, 1, cfg.val_trajectories);
  fill(d.test, 2, cfg.test_trajectories);
  return d;
}

/// Mean squared error over [p', v'] of a set of transitions, evaluated in chunks.
inline double boids_one_step_mse(const GncaParams& params, std::span<const Transition> data, std::size_t chunk = 100) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t begin = 0; begin < data.size(); begin += chunk) {
    const std::size_t end = std::min(begin + chunk, data.size());
    std::vector<const Graph*> graphs;
    std::vector<Tensor> xs, ys;
    for (std::size_t k = begin; k < end; ++k) {
      graphs.push_back(&data[k].graph);
      xs.push_back(data[k].state);
      ys.push_back(data[k].next);
    }
    const Graph g = disjoint_union(graphs);
    Tape tape;
    BoundGnca p = bind(tape, params, false);
    const Tensor pred = boids_gnca_forward(p, g, tape.constant(detail::stack_rows(xs))).value();
    const Tensor truth = detail::stack_rows(ys);
    for (std::size_t k = 0; k < pred.size(); ++k) total += (pred[k] - truth[k]) * (pred[k] - truth[k]);
    count += pred.size();
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

struct BoidsTrainResult {
  GncaParams params;
  TrainReport report;
  double test_mse = 0.0;
};

inline BoidsTrainResult train_boids(const BoidsTrainConfig& cfg, const BoidsDataset& data) {
  if (cfg.batch_size == 0) throw ConfigError("train_boids: batch_size must be positive");
  if (data.train.empty() || data.val.empty()) throw ConfigError("train_boids: empty training or validation split");
  detail::Stopwatch clock;
  BoidsTrainResult out{init_gnca(boids_gnca_config(cfg.hidden, cfg.velocity_only_base, cfg.velocity_scale, cfg.position_scale), derive_seed(cfg.seed, 7)), {}, 0.0};
  GncaParams best_params = out.params;
  AdamState adam;
  adam.lr = cfg.lr;
  PlateauScheduler plateau{0.1, cfg.plateau_patience};
  EarlyStopping stopper{cfg.early_stop_patience};
  Rng rng(derive_seed(cfg.seed, 8));
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    double train_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(begin + cfg.batch_size, order.size());
      std::vector<const Graph*> graphs;
      std::vector<Tensor> xs, ys;
      for (std::size_t k = begin; k < end; ++k) {
        const Transition& tr = data.train[order[k]];
        graphs.push_back(&tr.graph);
        xs.push_back(tr.state);
        ys.push_back(tr.next);
      }
      const Graph g = disjoint_union(graphs);
      Tape tape;
      BoundGnca p = bind(tape, out.params, true);
      Var loss = mse(boids_gnca_forward(p, g, tape.constant(detail::stack_rows(xs))), tape.constant(detail::stack_rows(ys)));
      train_total += loss.value().item();
      ++batches;
      tape.backward(loss);
      detail::apply_gradients(out.params, adam, tape, p);
    }
    const double val = boids_one_step_mse(out.params, data.val);
    out.report.log(epoch, train_total / static_cast<double>(batches), val, adam.lr);
    if (stopper.update(val)) {
      best_params = out.params;
      out.report.best_epoch = epoch;
    }
    plateau.update(val, adam.lr);
    if (cfg.log) {
      *cfg.log << "boids epoch " << epoch << " train " << train_total / static_cast<double>(batches) << " val " << val
               << " lr " << adam.lr << '\n';
    }
    if (stopper.should_stop()) break;
  }
  out.params = std::move(best_params);
  out.test_mse = data.test.empty() ? 0.0 : boids_one_step_mse(out.params, data.test);
  out.report.wall_clock_seconds = clock.seconds();
  return out;
}

/// Autonomous model rollout; the neighbourhood graph is rebuilt from the
/// predicted positions every step and no speed limit is imposed.
inline std::vector<Tensor> boids_model_rollout(const GncaParams& params, const BoidsConfig& cfg, const Tensor& s0,
                                               std::size_t steps) {
  std::vector<Tensor> traj{s0};
  BoidsState s{s0};
  for (std::size_t t = 0; t < steps; ++t) {
    s = boids_gnca_step(params, cfg, s);
    traj.push_back(s.values);
  }
  return traj;
}

inline std::vector<Tensor> boids_truth_rollout(const BoidsConfig& cfg, const Tensor& s0, std::size_t steps) {
  std::vector<Tensor> traj{s0};
  BoidsState s{s0};
  for (std::size_t t = 0; t < steps; ++t) {
    s = boids_step(cfg, s).next;
    traj.push_back(s.values);
  }
  return traj;
}

struct BoidsEvaluation {
  double one_step_mse = 0.0;
  SeriesComplexity truth;
  SeriesComplexity model;
  std::size_t rollouts = 0;
};

/// One-step test MSE plus SampEn/CD of truth and model rollouts started
/// from the first `seeds` test initial states, averaged over those starts.
inline BoidsEvaluation evaluate_boids(const GncaParams& params, const BoidsConfig& cfg, const BoidsDataset& data,
                                      std::size_t steps, std::size_t seeds) {
  BoidsEvaluation e;
  e.one_step_mse = boids_one_step_mse(params, data.test);
  e.rollouts = std::min(seeds, data.test_initial_states.size());
  if (e.rollouts == 0) throw ConfigError("evaluate_boids: no test initial states");
  for (std::size_t k = 0; k < e.rollouts; ++k) {
    const Tensor& s0 = data.test_initial_states[k];
    const SeriesComplexity t = boids_complexity(boids_truth_rollout(cfg, s0, steps));
    const SeriesComplexity m = boids_complexity(boids_model_rollout(params, cfg, s0, steps));
    e.truth.sampen += t.sampen;
    e.truth.corr_dim += t.corr_dim;
    e.model.sampen += m.sampen;
    e.model.corr_dim += m.corr_dim;
  }
  const double inv = 1.0 / static_cast<double>(e.rollouts);
  e.truth.sampen *= inv;
  e.truth.corr_dim *= inv;
  e.model.sampen *= inv;
  e.model.corr_dim *= inv;
  return e;
}

// ---------------------------------------------------------------------------
// Fixed target: BPTT with a replay cache
// ---------------------------------------------------------------------------

/// Per-dimension affine rescale of the coordinates to [−1, 1].
inline Tensor fixed_target_from_coords(const Tensor& coords) {
  if (coords.rank() != 2 || coords.rows() == 0) throw DegenerateInputError("fixed target needs node coordinates");
  return rescale_to_unit_box(coords);
}

struct NormalizedTarget {
  Tensor initial;
  std::vector<std::size_t> zero_rows;
};

/// Rows ŝ_i/‖ŝ_i‖; zero rows are kept as zero and reported.
inline NormalizedTarget normalized_initial_state(const Tensor& target) {
  NormalizedTarget out{target, {}};
  for (std::size_t i = 0; i < target.rows(); ++i) {
    double sq = 0.0;
    for (std::size_t k = 0; k < target.cols(); ++k) sq += target(i, k) * target(i, k);
    if (sq == 0.0) {
      out.zero_rows.push_back(i);
      continue;
    }
    const double norm = std::sqrt(sq);
    for (std::size_t k = 0; k < target.cols(); ++k) out.initial(i, k) = target(i, k) / norm;
  }
  return out;
}

class ReplayCache {
 public:
  ReplayCache(std::size_t capacity, Tensor initial) : initial_(std::move(initial)), slots_(capacity, initial_) {
    if (capacity == 0) throw std::invalid_argument("ReplayCache: capacity must be positive");
  }

  std::size_t size() const { return slots_.size(); }
  const Tensor& initial() const { return initial_; }
  const Tensor& operator[](std::size_t k) const { return slots_.at(k); }

  /// Distinct slot indices, uniform without replacement.
  std::vector<std::size_t> sample(std::size_t k, Rng& rng) const {
    if (k > slots_.size()) throw std::invalid_argument("ReplayCache: batch larger than cache");
    return rng.sample_without_replacement(slots_.size(), k);
  }

  void write(std::size_t slot, Tensor state) {
    if (state.shape() != initial_.shape()) throw ShapeError("ReplayCache: state shape mismatch");
    slots_.at(slot) = std::move(state);
  }

  void reset(std::size_t slot) { slots_.at(slot) = initial_; }

  std::size_t count_initial() const {
    std::size_t c = 0;
    for (const Tensor& s : slots_) c += s == initial_;
    return c;
  }

 private:
  Tensor initial_;
  std::vector<Tensor> slots_;
};

struct FixedTargetConfig {
  std::size_t t_min = 10;
  std::size_t t_max = 20;
  std::size_t batch_size = 8;
  std::size_t cache_size = 1024;
  double lr = 1e-3;
  double clip_norm = 1.0;
  std::size_t batches_per_epoch = 10;
  std::size_t plateau_patience = 750;
  std::size_t early_stop_patience = 1000;
  std::size_t max_epochs = 100000;
  std::size_t hidden = 256;
  double init_gain = 1.0;
  std::uint64_t seed = 0;
  std::ostream* log = nullptr;

  bool fixed_t() const { return t_min == t_max; }
  std::string t_mode() const {
    return fixed_t() ? std::to_string(t_min) : std::to_string(t_min) + ":" + std::to_string(t_max);
  }
  void validate() const {
    if (t_min == 0 || t_max < t_min) throw ConfigError("fixed target: need 0 < t_min ≤ t_max");
    if (batch_size == 0 || batch_size > cache_size) throw ConfigError("fixed target: batch_size must be in [1, cache_size]");
    if (batches_per_epoch == 0) throw ConfigError("fixed target: batches_per_epoch must be positive");
  }
};

inline GncaConfig fixed_target_gnca_config(std::size_t dim, std::size_t hidden) {
  GncaConfig c;
  c.state_dim = dim;
  c.out_dim = dim;
  c.hidden = hidden;
  c.output = OutputActivation::tanh;
  c.aggregation = Reduce::sum;
  return c;
}

/// Unrolls t steps on the tape and returns the full-mean MSE to the target.
inline Var unrolled_target_loss(const BoundGnca& p, const Graph& g, const Var& start, std::size_t t, const Var& target,
                                Var* final_state = nullptr) {
  Var s = start;
  for (std::size_t k = 0; k < t; ++k) s = gnca_forward(p, g, s);
  if (final_state) *final_state = s;
  return mse(s, target);
}

/// Sampled unroll length: fixed, or uniform over [t_min, t_max].
inline std::size_t sample_unroll(const FixedTargetConfig& cfg, Rng& rng) {
  if (cfg.fixed_t()) return cfg.t_min;
  return static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(cfg.t_min), static_cast<std::int64_t>(cfg.t_max)));
}

struct FixedTargetTrainResult {
  GncaParams params;
  TrainReport report;
  Tensor target;
  Tensor initial;
};

/// One batch: sample slots, unroll, step the optimiser, write the reached
/// states back, then reset one sampled slot to the initial state.
inline double fixed_target_batch(GncaParams& params, AdamState& adam, ReplayCache& cache, const Graph& batched,
                                 const Tensor& tiled_target, const FixedTargetConfig& cfg, Rng& rng) {
  const auto slots = cache.sample(cfg.batch_size, rng);
  const std::size_t t = sample_unroll(cfg, rng);
  std::vector<Tensor> starts;
  for (std::size_t s : slots) starts.push_back(cache[s]);
  Tape tape;
  BoundGnca p = bind(tape, params, true);
  Var reached;
  Var loss = unrolled_target_loss(p, batched, tape.constant(detail::stack_rows(starts)), t, tape.constant(tiled_target), &reached);
  const double value = loss.value().item();
  const Tensor final_states = reached.value();
  tape.backward(loss);
  detail::apply_gradients(params, adam, tape, p, cfg.clip_norm);
  const std::size_t n = cache.initial().rows();
  for (std::size_t k = 0; k < slots.size(); ++k) cache.write(slots[k], detail::block_rows(final_states, k, n));
  cache.reset(slots[rng.below(slots.size())]);
  return value;
}

/// MSE to the target at step t_max of a rollout from the initial state.
inline double fixed_target_validation(const GncaParams& params, const Graph& g, const Tensor& initial, const Tensor& target,
                                      std::size_t steps) {
  const auto traj = autonomous_eval(params, g, initial, steps, false);
  return mse_curve(std::span<const Tensor>(&traj.back(), 1), target)[0];
}

inline FixedTargetTrainResult train_fixed_target(const Graph& g, const FixedTargetConfig& cfg) {
  cfg.validate();
  detail::Stopwatch clock;
  if (!g.coords()) throw DegenerateInputError("fixed target: graph has no node coordinates");
  const Tensor target = fixed_target_from_coords(*g.coords());
  const NormalizedTarget norm = normalized_initial_state(target);
  if (!norm.zero_rows.empty() && cfg.log) {
    *cfg.log << "warning: " << norm.zero_rows.size() << " target rows have zero norm; kept as zero in the initial state\n";
  }
  FixedTargetTrainResult out{init_gnca(fixed_target_gnca_config(target.cols(), cfg.hidden), derive_seed(cfg.seed, 0), cfg.init_gain), {},
                             target, norm.initial};
  GncaParams best_params = out.params;
  const Graph batched = replicate(g, cfg.batch_size);
  const Tensor tiled_target = detail::tile_rows(target, cfg.batch_size);
  ReplayCache cache(cfg.cache_size, norm.initial);
  Rng rng(derive_seed(cfg.seed, 1));
  AdamState adam;
  adam.lr = cfg.lr;
  PlateauScheduler plateau{0.1, cfg.plateau_patience};
  EarlyStopping stopper{cfg.early_stop_patience};
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    double train_total = 0.0;
    for (std::size_t b = 0; b < cfg.batches_per_epoch; ++b) {
      train_total += fixed_target_batch(out.params, adam, cache, batched, tiled_target, cfg, rng);
    }
    const double val = fixed_target_validation(out.params, g, norm.initial, target, cfg.t_max);
    const double train = train_total / static_cast<double>(cfg.batches_per_epoch);
    out.report.log(epoch, train, val, adam.lr);
    if (stopper.update(val)) {
      best_params = out.params;
      out.report.best_epoch = epoch;
    }
    plateau.update(val, adam.lr);
    if (cfg.log && epoch % 10 == 0) {
      *cfg.log << "target epoch " << epoch << " train " << train << " val " << val << " lr " << adam.lr << '\n';
    }
    if (stopper.should_stop()) break;
  }
  out.params = std::move(best_params);
  out.report.wall_clock_seconds = clock.seconds();
  return out;
}

}  // namespace gnca
