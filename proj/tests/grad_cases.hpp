#pragma once

// Finite-difference gradient cases shared by the unit tests and the
// acceptance binary.

#include <functional>
#include <string>
#include <vector>

#include "gnca/model.hpp"
#include "gnca/trainers.hpp"
#include "oracles.hpp"

namespace gradcase {

using namespace gnca;

struct Case {
  std::string name;
  std::function<Var(Tape&, const std::vector<Var>&)> build;
  std::vector<Tensor> inputs;
  double tolerance;
};

inline Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(r, c);
  for (double& x : t.data()) x = rng.uniform(lo, hi);
  return t;
}

/// One case per differentiable tensor operation.
inline std::vector<Case> op_cases() {
  Rng rng(11);
  auto r = [&](std::size_t a, std::size_t b) { return random_tensor(a, b, rng); };
  constexpr double tol = 1e-4;
  std::vector<Case> cases;
  cases.push_back({"matmul", [](Tape&, const std::vector<Var>& v) { return sum(matmul(v[0], v[1])); }, {r(3, 4), r(4, 2)}, tol});
  cases.push_back({"affine", [](Tape&, const std::vector<Var>& v) { return mse(affine(v[0], v[1], v[2]), v[3]); },
                   {r(5, 3), r(3, 4), r(1, 4), r(5, 4)}, tol});
  cases.push_back({"add_sub_broadcast", [](Tape&, const std::vector<Var>& v) { return sum(mul(sub(add(v[0], v[1]), v[2]), v[0])); },
                   {r(4, 3), r(1, 3), r(4, 3)}, tol});
  cases.push_back({"mul_scale", [](Tape&, const std::vector<Var>& v) { return sum(scale(mul(v[0], v[1]), -1.7)); },
                   {r(3, 3), r(3, 3)}, tol});
  cases.push_back({"relu", [](Tape&, const std::vector<Var>& v) { return sum(mul(relu(v[0]), v[1])); }, {r(4, 5), r(4, 5)}, tol});
  cases.push_back({"tanh", [](Tape&, const std::vector<Var>& v) { return sum(mul(tanh(v[0]), v[1])); }, {r(4, 5), r(4, 5)}, tol});
  cases.push_back({"sigmoid", [](Tape&, const std::vector<Var>& v) { return sum(mul(sigmoid(v[0]), v[1])); }, {r(4, 5), r(4, 5)}, tol});
  cases.push_back({"concat_slice",
                   [](Tape&, const std::vector<Var>& v) {
                     Var c = concat_rows(v[0], v[1]);
                     return sum(mul(slice_cols(c, 1, 3), slice_cols(c, 0, 3)));
                   },
                   {r(4, 2), r(4, 3)}, tol});
  const std::vector<std::size_t> idx{2, 0, 2, 1};
  cases.push_back({"gather_rows", [idx](Tape&, const std::vector<Var>& v) { return sum(mul(gather_rows(v[0], idx), v[1])); },
                   {r(3, 2), r(4, 2)}, tol});
  const std::vector<std::size_t> ids{0, 0, 1, 3, 3, 3};
  for (Reduce mode : {Reduce::sum, Reduce::mean}) {
    cases.push_back({std::string("segment_") + (mode == Reduce::sum ? "sum" : "mean"),
                     [ids, mode](Tape&, const std::vector<Var>& v) { return sum(mul(segment_reduce(v[0], ids, 4, mode), v[1])); },
                     {r(6, 2), r(4, 2)}, tol});
  }
  const std::vector<std::size_t> senders{1, 2, 0, 2, 0, 1}, receivers{0, 0, 1, 1, 2, 2};
  for (Reduce mode : {Reduce::sum, Reduce::mean}) {
    cases.push_back({std::string("aggregate_") + (mode == Reduce::sum ? "sum" : "mean"),
                     [senders, receivers, mode](Tape&, const std::vector<Var>& v) {
                       return sum(mul(aggregate_neighbors(v[0], senders, receivers, 3, mode), v[1]));
                     },
                     {r(3, 2), r(3, 2)}, tol});
  }
  cases.push_back({"row_norm", [](Tape&, const std::vector<Var>& v) { return sum(mul(row_norm(v[0]), v[1])); }, {r(4, 3), r(4, 1)}, tol});
  cases.push_back({"mean_mse", [](Tape&, const std::vector<Var>& v) { return add(mean(v[0]), mse(v[0], v[1])); }, {r(3, 4), r(3, 4)}, tol});
  Tensor targets = r(3, 4);
  for (double& t : targets.data()) t = t > 0 ? 1.0 : 0.0;
  cases.push_back({"bce_with_logits", [targets](Tape& tape, const std::vector<Var>& v) { return bce_with_logits(v[0], tape.constant(targets)); },
                   {r(3, 4)}, tol});
  return cases;
}

/// Parameters with small random biases so every parameter receives a
/// non-trivial gradient.
inline GncaParams perturbed(GncaParams p, std::uint64_t seed) {
  Rng rng(seed);
  for (Tensor* t : p.tensors()) {
    for (double& v : t->data()) v += rng.uniform(-0.1, 0.1);
  }
  return p;
}

/// Full GNCA forward on a 6-node graph with hidden width 8, one case per
/// output activation and for the Boids variant with and without velocity
/// scaling; parameters and states are all inputs.
inline std::vector<Case> model_cases() {
  std::vector<Case> cases;
  const Graph g = random_delaunay(6, 7);
  Rng rng(6);
  for (OutputActivation act : {OutputActivation::sigmoid, OutputActivation::tanh, OutputActivation::identity}) {
    GncaConfig c;
    c.state_dim = 2;
    c.out_dim = 2;
    c.hidden = 8;
    c.output = act;
    const GncaParams p = perturbed(init_gnca(c, 3), 4);
    const Tensor target = random_tensor(6, 2, rng, 0.0, 1.0);
    std::vector<Tensor> inputs = p.tensor_values();
    inputs.push_back(random_tensor(6, 2, rng));
    cases.push_back({"gnca_" + to_string(act),
                     [p, g, target](Tape& tape, const std::vector<Var>& v) {
                       BoundGnca b{p.config, std::vector<Var>(v.begin(), v.end() - 1)};
                       return mse(gnca_forward(b, g, v.back()), tape.constant(target));
                     },
                     inputs, 1e-4});
  }
  for (double k : {1.0, 100.0}) {
    const GncaParams p = perturbed(init_gnca(boids_gnca_config(8, false, k), 5), 6);
    Tensor s = Tensor::zeros(6, 4);
    for (std::size_t i = 0; i < 6; ++i) {
      s(i, 0) = rng.uniform(-0.1, 0.1);
      s(i, 1) = rng.uniform(-0.1, 0.1);
      s(i, 2) = rng.uniform(-0.01, 0.01);
      s(i, 3) = rng.uniform(-0.01, 0.01);
    }
    const BoidsConfig cfg;
    const Graph bg = boids_graph(cfg, BoidsState{s});
    const Tensor target = boids_step(cfg, BoidsState{s}).next.values;
    cases.push_back({k == 1.0 ? "gnca_boids" : "gnca_boids_scaled",
                     [p, bg, s, target](Tape& tape, const std::vector<Var>& v) {
                       BoundGnca b{p.config, v};
                       return mse(boids_gnca_forward(b, bg, tape.constant(s)), tape.constant(target));
                     },
                     p.tensor_values(), 1e-4});
  }
  return cases;
}

/// Loss after a 3-step unroll on a 4-node path, gradient to parameters.
inline Case bptt_case() {
  const std::vector<std::pair<std::size_t, std::size_t>> path{{0, 1}, {1, 2}, {2, 3}};
  const Graph g = Graph::from_undirected(4, path);
  const GncaParams p = perturbed(init_gnca(fixed_target_gnca_config(2, 8), 6), 3);
  Rng rng(3);
  const Tensor start = random_tensor(4, 2, rng), target = random_tensor(4, 2, rng);
  return {"bptt_t3",
          [p, g, start, target](Tape& tape, const std::vector<Var>& v) {
            BoundGnca b{p.config, v};
            return unrolled_target_loss(b, g, tape.constant(start), 3, tape.constant(target));
          },
          p.tensor_values(), 1e-3};
}

inline double check(const Case& c) { return oracle::gradient_check(c.build, c.inputs); }

}  // namespace gradcase
