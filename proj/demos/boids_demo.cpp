// Simulates a flock and prints how its order parameter (mean heading
// alignment) evolves.

#include <cmath>
#include <cstdio>

#include "gnca/gnca.hpp"

int main() {
  using namespace gnca;
  const BoidsConfig cfg;
  const auto traj = simulate_boids(cfg, 100, 1000, 3);
  for (std::size_t t = 0; t < traj.size(); t += 100) {
    double sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < traj[t].rows(); ++i) {
      const double vx = traj[t](i, 2), vy = traj[t](i, 3);
      const double s = std::hypot(vx, vy);
      if (s > 0.0) {
        sx += vx / s;
        sy += vy / s;
      }
    }
    const double order = std::hypot(sx, sy) / static_cast<double>(traj[t].rows());
    std::printf("step %4zu  alignment %.3f\n", t, order);
  }
  const SeriesComplexity c = boids_complexity(traj);
  std::printf("SampEn %.4f  CD %.4f\n", c.sampen, c.corr_dim);
}
