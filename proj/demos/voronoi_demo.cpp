// Runs the Voronoi rule on a random Delaunay graph, then checks that the
// hand-set two-neuron GNCA reproduces the same trajectory.

#include <cstdio>

#include "gnca/gnca.hpp"

int main() {
  using namespace gnca;
  const Graph g = random_delaunay(300, 1);
  const VoronoiRule rule(0.42);
  const MinimalVoronoiGnca exact = build_minimal_voronoi_gnca();

  Rng rng(2);
  StateMatrix truth = random_binary_state(g.num_nodes(), rng);
  StateMatrix model = truth;
  std::vector<Tensor> traj{truth.values};
  std::size_t agree = 0;
  for (int t = 0; t < 200; ++t) {
    truth = voronoi_step(rule, g, truth);
    model = exact.step(g, model);
    agree += truth == model;
    traj.push_back(truth.values);
  }
  std::printf("graph: %zu nodes, %zu edges\n", g.num_nodes(), g.num_undirected_edges());
  std::printf("steps where the hand-set GNCA matches the rule: %zu/200\n", agree);
  std::printf("H_s = %.4f bits, H_w = %.4f bits\n", shannon_entropy(traj), word_entropy(traj));
}
