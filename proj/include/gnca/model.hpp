#pragma once

// GNCA transition function: pre-MLP, one message-passing block
//   h_i ∥ Σ_{j∈N(i)} ReLU(h_j W + b),
// and a post-MLP, plus the Boids variant and hand-set exact rules.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gnca/errors.hpp"
#include "gnca/graph.hpp"
#include "gnca/rng.hpp"
#include "gnca/rules.hpp"
#include "gnca/tensor.hpp"

namespace gnca {

enum class OutputActivation { sigmoid, tanh, identity };

inline std::string to_string(OutputActivation a) {
  switch (a) {
    case OutputActivation::sigmoid: return "sigmoid";
    case OutputActivation::tanh: return "tanh";
    case OutputActivation::identity: return "identity";
  }
  return "identity";
}

inline OutputActivation activation_from_string(const std::string& s) {
  if (s == "sigmoid") return OutputActivation::sigmoid;
  if (s == "tanh") return OutputActivation::tanh;
  if (s == "identity") return OutputActivation::identity;
  throw ConfigError("unknown output activation '" + s + "'");
}

struct GncaConfig {
  std::size_t state_dim = 1;
  std::size_t out_dim = 1;
  std::size_t hidden = 256;
  OutputActivation output = OutputActivation::sigmoid;
  Reduce aggregation = Reduce::sum;
  bool edgeconv = false;            // Boids variant: EdgeConv branch on state differences
  bool velocity_only_base = false;  // Boids variant: base branch reads only [v_x, v_y]
  double position_scale = 1.0;      // Boids variant: position inputs ×a
  double velocity_scale = 1.0;      // Boids variant: velocity inputs ×k, predicted velocity ÷k

  std::size_t base_input_dim() const { return velocity_only_base ? 2 : state_dim; }
  friend bool operator==(const GncaConfig&, const GncaConfig&) = default;
};

/// Affine layer x·W + b with W of shape in×out.
struct Dense {
  Tensor weight;
  Tensor bias;
  friend bool operator==(const Dense&, const Dense&) = default;
};

struct GncaParams {
  GncaConfig config;
  Dense pre1, pre2;
  Tensor msg_w, msg_b;
  Dense post1, post2;
  std::optional<Dense> edge1, edge2;

  /// Stable, named view of every trainable tensor.
  std::vector<std::pair<std::string, Tensor*>> named_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out{
        {"pre1.weight", &pre1.weight}, {"pre1.bias", &pre1.bias},   {"pre2.weight", &pre2.weight},
        {"pre2.bias", &pre2.bias},     {"msg.weight", &msg_w},      {"msg.bias", &msg_b},
        {"post1.weight", &post1.weight}, {"post1.bias", &post1.bias}, {"post2.weight", &post2.weight},
        {"post2.bias", &post2.bias}};
    if (edge1) {
      out.emplace_back("edge1.weight", &edge1->weight);
      out.emplace_back("edge1.bias", &edge1->bias);
      out.emplace_back("edge2.weight", &edge2->weight);
      out.emplace_back("edge2.bias", &edge2->bias);
    }
    return out;
  }

  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out;
    for (auto& [name, t] : named_tensors()) out.push_back(t);
    return out;
  }

  std::vector<Tensor> tensor_values() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : const_cast<GncaParams*>(this)->named_tensors()) out.push_back(*t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Tensor& t : tensor_values()) n += t.size();
    return n;
  }

  friend bool operator==(const GncaParams&, const GncaParams&) = default;
};

namespace detail {

inline Dense glorot_dense(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0) {
  const double limit = gain * std::sqrt(6.0 / static_cast<double>(in + out));
  Dense d{Tensor::zeros(in, out), Tensor::zeros(1, out)};
  for (double& w : d.weight.data()) w = rng.uniform(-limit, limit);
  return d;
}

inline Dense zero_dense(std::size_t in, std::size_t out) { return Dense{Tensor::zeros(in, out), Tensor::zeros(1, out)}; }

}  // namespace detail

/// Glorot-uniform weights with limit gain·√(6 / (fan_in + fan_out)), zero biases.
inline GncaParams init_gnca(const GncaConfig& cfg, std::uint64_t seed, double gain = 1.0) {
  if (cfg.hidden == 0 || cfg.state_dim == 0 || cfg.out_dim == 0) throw ConfigError("init_gnca: zero-sized layer");
  if (cfg.velocity_only_base && cfg.state_dim != 4) throw ConfigError("velocity_only_base needs 4-wide boid states");
  for (double v : {cfg.position_scale, cfg.velocity_scale}) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("position_scale and velocity_scale must be positive");
  }
  if (!(gain > 0.0) || !std::isfinite(gain)) throw ConfigError("init_gnca: gain must be positive");
  Rng rng(seed);
  const std::size_t h = cfg.hidden;
  GncaParams p;
  p.config = cfg;
  p.pre1 = detail::glorot_dense(cfg.base_input_dim(), h, rng, gain);
  p.pre2 = detail::glorot_dense(h, h, rng, gain);
  Dense msg = detail::glorot_dense(h, h, rng, gain);
  p.msg_w = std::move(msg.weight);
  p.msg_b = std::move(msg.bias);
  p.post1 = detail::glorot_dense(2 * h, h, rng, gain);
  p.post2 = detail::glorot_dense(h, cfg.out_dim, rng, gain);
  if (cfg.edgeconv) {
    p.edge1 = detail::glorot_dense(cfg.state_dim + 1, h, rng, gain);
    p.edge2 = detail::glorot_dense(h, cfg.out_dim, rng, gain);
  }
  return p;
}

/// All-zero parameters of the right shapes.
inline GncaParams zero_gnca(const GncaConfig& cfg) {
  GncaParams p = init_gnca(cfg, 0);
  for (Tensor* t : p.tensors()) std::fill(t->data().begin(), t->data().end(), 0.0);
  return p;
}

/// Parameters placed on a tape.
struct BoundGnca {
  GncaConfig config;
  std::vector<Var> vars;  // same order as GncaParams::named_tensors()

  const Var& operator[](std::size_t k) const { return vars[k]; }
};

inline BoundGnca bind(Tape& tape, const GncaParams& params, bool trainable) {
  BoundGnca b{params.config, {}};
  for (Tensor& t : params.tensor_values()) b.vars.push_back(trainable ? tape.parameter(std::move(t)) : tape.constant(std::move(t)));
  return b;
}

inline std::vector<Tensor> gradients(const Tape& tape, const BoundGnca& b) {
  std::vector<Tensor> out;
  for (const Var& v : b.vars) out.push_back(tape.grad(v));
  return out;
}

namespace slot {
enum : std::size_t { pre1_w, pre1_b, pre2_w, pre2_b, msg_w, msg_b, post1_w, post1_b, post2_w, post2_b, edge1_w, edge1_b, edge2_w, edge2_b };
}

inline Var apply_activation(const Var& x, OutputActivation a) {
  switch (a) {
    case OutputActivation::sigmoid: return sigmoid(x);
    case OutputActivation::tanh: return tanh(x);
    case OutputActivation::identity: return x;
  }
  return x;
}

/// Output of the post-MLP before the output activation.
inline Var gnca_logits(const BoundGnca& p, const Graph& g, const Var& state) {
  const Tensor& sv = state.value();
  if (sv.rank() != 2 || sv.rows() != g.num_nodes()) throw ShapeError("gnca_forward: state must have one row per node");
  Var input = state;
  if (p.config.velocity_only_base) {
    if (sv.cols() != 4) throw ShapeError("gnca_forward: velocity-only base needs 4-wide states");
    input = slice_cols(state, 2, 2);
  }
  if (input.value().cols() != p[slot::pre1_w].value().rows()) {
    throw ShapeError("gnca_forward: state width " + std::to_string(input.value().cols()) + " does not match model input " +
                     std::to_string(p[slot::pre1_w].value().rows()));
  }
  Var h = relu(affine(input, p[slot::pre1_w], p[slot::pre1_b]));
  h = relu(affine(h, p[slot::pre2_w], p[slot::pre2_b]));
  Var messages = relu(affine(h, p[slot::msg_w], p[slot::msg_b]));
  Var aggregated = aggregate_neighbors(messages, g.senders(), g.receivers(), g.num_nodes(), p.config.aggregation);
  Var z = concat_rows(h, aggregated);
  z = relu(affine(z, p[slot::post1_w], p[slot::post1_b]));
  return affine(z, p[slot::post2_w], p[slot::post2_b]);
}

inline Var gnca_forward(const BoundGnca& p, const Graph& g, const Var& state) {
  return apply_activation(gnca_logits(p, g, state), p.config.output);
}

/// Stateless convenience forward (no gradients).
inline Tensor gnca_forward(const GncaParams& params, const Graph& g, const Tensor& state) {
  Tape tape;
  BoundGnca p = bind(tape, params, false);
  return gnca_forward(p, g, tape.constant(state)).value();
}

/// Rounds probabilities at 0.5; exactly 0.5 rounds up.
inline Tensor round_binary(const Tensor& probs) {
  Tensor out = probs;
  for (double& v : out.data()) v = v >= 0.5 ? 1.0 : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Boids variant: predicts the new velocity; position is advanced by it.
// ---------------------------------------------------------------------------

/// Σ_{j∈N(i)} MLP([s_i − s_j, ‖s_i − s_j‖]).
inline Var edgeconv_branch(const BoundGnca& p, const Graph& g, const Var& state) {
  Var diff = sub(gather_rows(state, g.receivers()), gather_rows(state, g.senders()));
  Var features = concat_rows(diff, row_norm(diff));
  Var hidden = relu(affine(features, p[slot::edge1_w], p[slot::edge1_b]));
  Var messages = affine(hidden, p[slot::edge2_w], p[slot::edge2_b]);
  return segment_reduce(messages, g.receivers(), g.num_nodes(), Reduce::sum);
}

/// [p + v', v'] with v' = (base GNCA output + EdgeConv output) / k, both
/// branches reading [a·p, k·v] where a and k are the position and velocity
/// scales.
inline Var boids_gnca_forward(const BoundGnca& p, const Graph& g, const Var& state) {
  if (state.value().cols() != 4) throw ShapeError("boids_gnca_forward: state must be n×4");
  if (p.config.out_dim != 2 || !p.config.edgeconv) throw ConfigError("boids_gnca_forward: needs out_dim 2 and EdgeConv branch");
  const double a = p.config.position_scale, k = p.config.velocity_scale;
  Var input = state;
  if (a != 1.0 || k != 1.0) input = concat_rows(scale(slice_cols(state, 0, 2), a), scale(slice_cols(state, 2, 2), k));
  Var velocity = add(gnca_forward(p, g, input), edgeconv_branch(p, g, input));
  if (k != 1.0) velocity = scale(velocity, 1.0 / k);
  Var position = add(slice_cols(state, 0, 2), velocity);
  return concat_rows(position, velocity);
}

/// Stateless convenience forward on a given graph (no gradients).
inline Tensor boids_gnca_forward(const GncaParams& params, const Graph& g, const Tensor& state) {
  Tape tape;
  BoundGnca p = bind(tape, params, false);
  return boids_gnca_forward(p, g, tape.constant(state)).value();
}

inline BoidsState boids_gnca_step(const GncaParams& params, const BoidsConfig& cfg, const BoidsState& s) {
  return BoidsState{boids_gnca_forward(params, boids_graph(cfg, s), s.values)};
}

inline GncaConfig boids_gnca_config(std::size_t hidden = 256, bool velocity_only_base = false, double velocity_scale = 1.0,
                                    double position_scale = 1.0) {
  GncaConfig c;
  c.state_dim = 4;
  c.out_dim = 2;
  c.hidden = hidden;
  c.output = OutputActivation::identity;
  c.edgeconv = true;
  c.velocity_only_base = velocity_only_base;
  c.velocity_scale = velocity_scale;
  c.position_scale = position_scale;
  return c;
}

// ---------------------------------------------------------------------------
// Hand-set exact implementations
// ---------------------------------------------------------------------------

/// Two-hidden-unit post-processor for the Voronoi rule:
/// sigmoid(ReLU([s, ρ]·W1 + b1)·W2 + b2).
struct MinimalVoronoiNet {
  Tensor w1;  // 2×2, rows indexed by input (s, ρ)
  Tensor b1;  // 1×2
  Tensor w2;  // 2×1
  Tensor b2;  // 1×1

  /// Published solution. The orientation (input-major W1) is the one of the
  /// two transposes that agrees with the rule away from the threshold; see
  /// the orientation test.
  static MinimalVoronoiNet published() {
    return MinimalVoronoiNet{Tensor::matrix({{-1.98, 1.64}, {2.63, -2.8}}), Tensor::row({-0.46, 0.17}),
                             Tensor::matrix({{3.3}, {3.3}}), Tensor::row({-2.1})};
  }

  Var forward(const Var& input) const {
    Tape& t = *input.tape();
    Var h = relu(affine(input, t.constant(w1), t.constant(b1)));
    return sigmoid(affine(h, t.constant(w2), t.constant(b2)));
  }

  double probability(double s, double rho) const {
    Tape t;
    return forward(t.constant(Tensor::row({s, rho}))).value().item();
  }
};

/// GNCA variant with mean aggregation, message weights W = 1, b = 0 (so the
/// aggregated message is ρ_i), no pre-MLP, and MinimalVoronoiNet as the
/// post-processor.
struct MinimalVoronoiGnca {
  MinimalVoronoiNet net = MinimalVoronoiNet::published();

  Var probabilities(const Graph& g, const Var& states) const {
    Tape& t = *states.tape();
    Var messages = relu(affine(states, t.constant(Tensor::matrix({{1.0}})), t.constant(Tensor::row({0.0}))));
    Var rho = aggregate_neighbors(messages, g.senders(), g.receivers(), g.num_nodes(), Reduce::mean);
    return net.forward(concat_rows(states, rho));
  }

  StateMatrix step(const Graph& g, const StateMatrix& s) const {
    Tape t;
    return StateMatrix{round_binary(probabilities(g, t.constant(s.values)).value()), StateKind::binary};
  }
};

inline MinimalVoronoiGnca build_minimal_voronoi_gnca() { return MinimalVoronoiGnca{}; }

/// Thermometer encoding of the live-neighbour count c:
/// ReLU(c·[1,1,1,1] + [−1,−2,−3,−4]), with the affine map applied after sum
/// aggregation.
struct NeighborCounter {
  Tensor weight = Tensor::row({1.0, 1.0, 1.0, 1.0});
  Tensor bias = Tensor::row({-1.0, -2.0, -3.0, -4.0});

  Var apply(const Graph& g, const Var& states) const {
    Tape& t = *states.tape();
    Var count = aggregate_neighbors(states, g.senders(), g.receivers(), g.num_nodes(), Reduce::sum);
    return relu(affine(count, t.constant(weight), t.constant(bias)));
  }

  Tensor encode(double count) const {
    Tape t;
    return relu(affine(t.constant(Tensor::matrix({{count}})), t.constant(weight), t.constant(bias))).value();
  }
};

inline NeighborCounter build_neighbor_counter() { return NeighborCounter{}; }

// ---------------------------------------------------------------------------
// Checkpoints: {"format": "gnca-checkpoint", "version": 1, "config": {...},
//               "layers": [{"name", "shape", "values"}, ...]}
// ---------------------------------------------------------------------------

inline nlohmann::json checkpoint_to_json(const GncaParams& params) {
  const GncaConfig& c = params.config;
  nlohmann::json doc;
  doc["format"] = "gnca-checkpoint";
  doc["version"] = 1;
  doc["config"] = {{"state_dim", c.state_dim},
                   {"out_dim", c.out_dim},
                   {"hidden", c.hidden},
                   {"output", to_string(c.output)},
                   {"aggregation", c.aggregation == Reduce::sum ? "sum" : "mean"},
                   {"edgeconv", c.edgeconv},
                   {"velocity_only_base", c.velocity_only_base},
                   {"position_scale", c.position_scale},
                   {"velocity_scale", c.velocity_scale}};
  nlohmann::json layers = nlohmann::json::array();
  for (auto& [name, t] : const_cast<GncaParams&>(params).named_tensors()) {
    layers.push_back({{"name", name}, {"shape", t->shape()}, {"values", std::vector<double>(t->data().begin(), t->data().end())}});
  }
  doc["layers"] = std::move(layers);
  return doc;
}

inline GncaParams checkpoint_from_json(const nlohmann::json& doc) {
  try {
    if (doc.value("format", "") != "gnca-checkpoint") throw SchemaError("not a gnca checkpoint");
    const auto& c = doc.at("config");
    GncaConfig cfg;
    cfg.state_dim = c.at("state_dim").get<std::size_t>();
    cfg.out_dim = c.at("out_dim").get<std::size_t>();
    cfg.hidden = c.at("hidden").get<std::size_t>();
    cfg.output = activation_from_string(c.at("output").get<std::string>());
    cfg.aggregation = c.at("aggregation").get<std::string>() == "mean" ? Reduce::mean : Reduce::sum;
    cfg.edgeconv = c.at("edgeconv").get<bool>();
    cfg.velocity_only_base = c.at("velocity_only_base").get<bool>();
    cfg.position_scale = c.value("position_scale", 1.0);
    cfg.velocity_scale = c.value("velocity_scale", 1.0);
    GncaParams p = zero_gnca(cfg);
    auto named = p.named_tensors();
    const auto& layers = doc.at("layers");
    if (layers.size() != named.size()) throw SchemaError("checkpoint layer count does not match its config");
    for (std::size_t k = 0; k < named.size(); ++k) {
      const auto& layer = layers[k];
      if (layer.at("name").get<std::string>() != named[k].first) throw SchemaError("unexpected layer " + layer.at("name").dump());
      Tensor t(layer.at("shape").get<Shape>(), layer.at("values").get<std::vector<double>>());
      if (t.shape() != named[k].second->shape()) throw SchemaError("layer " + named[k].first + " has the wrong shape");
      *named[k].second = std::move(t);
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const GncaParams& params, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out << checkpoint_to_json(params).dump() << '\n';
}

inline GncaParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("checkpoint " + path + ": " + e.what());
  }
  return checkpoint_from_json(doc);
}

}  // namespace gnca
