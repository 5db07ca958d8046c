#include <cmath>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "gnca/trainers.hpp"
#include "grad_cases.hpp"
#include "oracles.hpp"

using namespace gnca;

TEST(VoronoiTraining, ZeroLearningRateLeavesParametersUnchanged) {
  VoronoiTrainConfig cfg;
  cfg.batches = 3;
  cfg.batch_size = 4;
  cfg.hidden = 8;
  cfg.lr = 0.0;
  cfg.seed = 2;
  const auto res = train_voronoi(random_delaunay(30, 1), cfg);
  EXPECT_EQ(res.params, init_gnca(voronoi_gnca_config(8), derive_seed(2, 0)));
  EXPECT_EQ(res.report.epochs.size(), 3u);
}

TEST(VoronoiTraining, LossDecreases) {
  VoronoiTrainConfig cfg;
  cfg.batches = 120;
  cfg.batch_size = 8;
  cfg.hidden = 32;
  const auto res = train_voronoi(random_delaunay(60, 1), cfg);
  const auto& v = res.report.val_loss;
  double head = 0, tail = 0;
  for (std::size_t k = 0; k < 10; ++k) {
    head += v[k];
    tail += v[v.size() - 1 - k];
  }
  EXPECT_LT(tail, 0.5 * head);
  EXPECT_EQ(res.report.val_accuracy.size(), 120u);
}

TEST(VoronoiTraining, Deterministic) {
  VoronoiTrainConfig cfg;
  cfg.batches = 10;
  cfg.batch_size = 4;
  cfg.hidden = 16;
  cfg.seed = 11;
  const Graph g = random_delaunay(40, 3);
  const auto a = train_voronoi(g, cfg), b = train_voronoi(g, cfg);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.report.to_json().dump(), b.report.to_json().dump());
}

TEST(VoronoiTraining, BatchIsRuleConsistent) {
  const Graph g = replicate(random_delaunay(20, 2), 3);
  Rng rng(4);
  auto [x, y] = voronoi_batch(g, VoronoiRule(0.42), rng);
  std::vector<int> xi;
  for (double v : x.data()) xi.push_back(static_cast<int>(v));
  const auto want = oracle::voronoi_step(g.undirected_pairs(), xi, 0.42);
  for (std::size_t k = 0; k < want.size(); ++k) EXPECT_EQ(y[k], want[k]);
}

TEST(VoronoiTraining, AccuracyHelper) {
  EXPECT_DOUBLE_EQ(binary_accuracy(Tensor::matrix({{0.9}, {0.2}, {0.5}, {0.49}}), Tensor::matrix({{1}, {0}, {0}, {0}})), 0.75);
}

// Minimal MLP

TEST(MinimalMlp, ShortRunReducesLoss) {
  MinimalMlpTrainConfig cfg;
  cfg.epochs = 1;
  cfg.max_attempts = 1;
  const double first = train_minimal_voronoi_mlp(cfg).final_loss;
  cfg.epochs = 3000;
  const auto res = train_minimal_voronoi_mlp(cfg);
  EXPECT_LT(res.final_loss, first);
  EXPECT_EQ(res.attempts, 1u);
  EXPECT_EQ(res.evaluation.total, 198u);
}

// Boids

namespace {

BoidsTrainConfig small_boids() {
  BoidsTrainConfig cfg;
  cfg.n_boids = 12;
  cfg.steps = 15;
  cfg.train_trajectories = 3;
  cfg.val_trajectories = 1;
  cfg.test_trajectories = 2;
  cfg.batch_size = 10;
  cfg.hidden = 8;
  cfg.max_epochs = 3;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST(BoidsData, SplitsUseDisjointSeeds) {
  std::set<std::uint64_t> seen;
  for (int split = 0; split < 3; ++split) {
    for (std::size_t k = 0; k < 300; ++k) EXPECT_TRUE(seen.insert(boids_trajectory_seed(9, split, k)).second);
  }
  const BoidsDataset d = make_boids_dataset(small_boids());
  EXPECT_EQ(d.train.size(), 3u * 15);
  EXPECT_EQ(d.val.size(), 15u);
  EXPECT_EQ(d.test.size(), 2u * 15);
  EXPECT_EQ(d.test_initial_states.size(), 2u);
  EXPECT_FALSE(d.train[0].state == d.test[0].state);
  // Consecutive transitions chain within a trajectory.
  EXPECT_EQ(d.train[0].next, d.train[1].state);
  EXPECT_EQ(d.train[1].next, boids_step(BoidsConfig{}, BoidsState{d.train[1].state}).next.values);
}

TEST(BoidsTraining, RestoresBestParametersAndIsDeterministic) {
  const BoidsTrainConfig cfg = small_boids();
  const BoidsDataset d = make_boids_dataset(cfg);
  const auto a = train_boids(cfg, d), b = train_boids(cfg, d);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.report.to_json().dump(), b.report.to_json().dump());
  ASSERT_EQ(a.report.epochs.size(), 3u);
  EXPECT_DOUBLE_EQ(boids_one_step_mse(a.params, d.val), a.report.val_loss[a.report.best_epoch]);
  EXPECT_DOUBLE_EQ(a.test_mse, boids_one_step_mse(a.params, d.test));
}

TEST(BoidsTraining, ChunkedMseMatchesDirectSum) {
  const BoidsTrainConfig cfg = small_boids();
  const BoidsDataset d = make_boids_dataset(cfg);
  const GncaParams p = init_gnca(boids_gnca_config(8), 1);
  double total = 0.0;
  std::size_t count = 0;
  for (const Transition& tr : d.test) {
    const BoidsState pred = boids_gnca_step(p, cfg.boids, BoidsState{tr.state});
    for (std::size_t k = 0; k < tr.next.size(); ++k) total += (pred.values[k] - tr.next[k]) * (pred.values[k] - tr.next[k]);
    count += tr.next.size();
  }
  EXPECT_NEAR(boids_one_step_mse(p, d.test, 7), total / static_cast<double>(count), 1e-15);
}

// Fixed target

TEST(FixedTarget, NormalisedInitialState) {
  const NormalizedTarget n = normalized_initial_state(Tensor::matrix({{3, 4}, {0, 0}, {-2, 0}}));
  EXPECT_DOUBLE_EQ(n.initial(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(n.initial(0, 1), 0.8);
  EXPECT_EQ(n.initial(1, 0), 0.0);
  EXPECT_EQ(n.zero_rows, (std::vector<std::size_t>{1}));
  EXPECT_DOUBLE_EQ(n.initial(2, 0), -1.0);
}

TEST(FixedTarget, TargetRescaledToUnitBox) {
  const Tensor t = fixed_target_from_coords(Tensor::matrix({{0, 10}, {2, 30}, {1, 20}}));
  EXPECT_EQ(t, Tensor::matrix({{-1, -1}, {1, 1}, {0, 0}}));
}

TEST(FixedTarget, UnrollLengthIsUniform) {
  FixedTargetConfig cfg;
  Rng rng(12);
  std::vector<std::size_t> counts(11, 0);
  for (int k = 0; k < 10000; ++k) {
    const std::size_t t = sample_unroll(cfg, rng);
    ASSERT_GE(t, 10u);
    ASSERT_LE(t, 20u);
    ++counts[t - 10];
  }
  // χ² critical value for 10 degrees of freedom at p = 0.01.
  EXPECT_LT(oracle::chi_square_uniform(counts), 23.209);
  cfg.t_min = cfg.t_max = 20;
  EXPECT_EQ(sample_unroll(cfg, rng), 20u);
}

TEST(FixedTarget, ReplayCacheMechanics) {
  const Tensor init = Tensor::matrix({{1, 0}, {0, 1}});
  ReplayCache cache(16, init);
  EXPECT_EQ(cache.count_initial(), 16u);
  Rng rng(1);
  const auto s = cache.sample(8, rng);
  EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), 8u);
  cache.write(3, Tensor::matrix({{0, 0}, {0, 0}}));
  EXPECT_EQ(cache.count_initial(), 15u);
  cache.reset(3);
  EXPECT_EQ(cache.count_initial(), 16u);
  EXPECT_THROW(cache.write(0, Tensor::zeros(3, 2)), ShapeError);
  EXPECT_THROW(cache.sample(17, rng), std::invalid_argument);
}

TEST(FixedTarget, BatchWritesBackAndResetsOneSlot) {
  const Graph g = grid2d(3, 3);
  FixedTargetConfig cfg;
  cfg.hidden = 8;
  cfg.cache_size = 32;
  cfg.t_min = cfg.t_max = 2;
  const Tensor target = fixed_target_from_coords(*g.coords());
  const NormalizedTarget norm = normalized_initial_state(target);
  ReplayCache cache(cfg.cache_size, norm.initial);
  GncaParams p = init_gnca(fixed_target_gnca_config(2, 8), 3);
  AdamState adam;
  Rng rng(4);
  fixed_target_batch(p, adam, cache, replicate(g, cfg.batch_size), detail::tile_rows(target, cfg.batch_size), cfg, rng);
  EXPECT_EQ(cache.count_initial(), cfg.cache_size - cfg.batch_size + 1);
}

TEST(FixedTarget, BpttGradientCheck) {
  const gradcase::Case c = gradcase::bptt_case();
  EXPECT_LT(gradcase::check(c), c.tolerance);
}

TEST(FixedTarget, SmokeRunRestoresBestParameters) {
  const Graph g = grid2d(3, 3);
  FixedTargetConfig cfg;
  cfg.hidden = 8;
  cfg.cache_size = 16;
  cfg.batch_size = 2;
  cfg.t_min = 2;
  cfg.t_max = 4;
  cfg.batches_per_epoch = 2;
  cfg.max_epochs = 4;
  cfg.lr = 0.01;
  const auto a = train_fixed_target(g, cfg), b = train_fixed_target(g, cfg);
  ASSERT_EQ(a.report.epochs.size(), 4u);
  EXPECT_EQ(a.params, b.params);
  EXPECT_DOUBLE_EQ(fixed_target_validation(a.params, g, a.initial, a.target, cfg.t_max), a.report.val_loss[a.report.best_epoch]);
  for (double v : a.report.val_loss) EXPECT_GE(v, a.report.val_loss[a.report.best_epoch]);
}

TEST(FixedTarget, RequiresCoordinatesAndValidConfig) {
  const std::vector<std::pair<std::size_t, std::size_t>> pairs{{0, 1}};
  FixedTargetConfig cfg;
  EXPECT_THROW(train_fixed_target(Graph::from_undirected(2, pairs), cfg), DegenerateInputError);
  cfg.t_min = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
