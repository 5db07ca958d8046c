#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "gnca/config.hpp"

using namespace gnca;

TEST(Config, PresetsCoverEveryKey) {
  const Config desk = Config::preset("desk"), paper = Config::preset("paper");
  EXPECT_EQ(desk.values().size(), config_schema().size());
  EXPECT_EQ(desk.count("voronoi.n"), 200u);
  EXPECT_EQ(paper.count("voronoi.n"), 1000u);
  EXPECT_EQ(paper.count("boids.train"), 300u);
  EXPECT_EQ(paper.count("target.max_epochs"), 100000u);
  EXPECT_THROW(Config::preset("laptop"), ConfigError);
}

TEST(Config, ParseOverridesAndComments) {
  Config c = Config::preset("desk");
  std::istringstream in("# comment\nvoronoi.kappa = 0.3  # trailing\n\n  seed=17\nboids.velocity_only_base = true\n");
  c.parse(in);
  EXPECT_DOUBLE_EQ(c.real("voronoi.kappa"), 0.3);
  EXPECT_EQ(c.count("seed"), 17u);
  EXPECT_TRUE(c.flag("boids.velocity_only_base"));
}

TEST(Config, UnknownKeysAndBadValuesAreRejected) {
  Config c = Config::preset("desk");
  std::istringstream unknown("voronoi.kapa = 0.3\n");
  EXPECT_THROW(c.parse(unknown), ConfigError);
  EXPECT_THROW(c.set("seed", "-1"), ConfigError);
  EXPECT_THROW(c.set("voronoi.lr", "fast"), ConfigError);
  EXPECT_THROW(c.set("boids.velocity_only_base", "yes"), ConfigError);
  std::istringstream missing_eq("seed 3\n");
  EXPECT_THROW(c.parse(missing_eq), ConfigError);
}

TEST(Config, HashIgnoresKeyOrder) {
  Config a = Config::preset("desk"), b = Config::preset("desk");
  std::istringstream ia("seed = 3\nvoronoi.kappa = 0.5\n"), ib("voronoi.kappa = 0.5\nseed = 3\n");
  a.parse(ia);
  b.parse(ib);
  EXPECT_EQ(a.hash(), b.hash());
  b.set("seed", "4");
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_EQ(a.hash_hex().size(), 16u);
}

TEST(Config, LoadFileErrors) {
  Config c = Config::preset("desk");
  EXPECT_THROW(c.load_file("/nonexistent/gnca.cfg"), ConfigError);
}

TEST(Manifest, AtomicWriteLeavesNoTemporary) {
  const auto dir = std::filesystem::temp_directory_path() / "gnca_manifest_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  RunManifest m;
  m.run_id = "r1";
  m.seed = 5;
  m.command = "voronoi train";
  m.metrics["accuracy"] = 1.0;
  write_manifest(dir, m);
  write_manifest(dir, m);
  EXPECT_FALSE(std::filesystem::exists(dir / "manifest.json.tmp"));
  std::ifstream in(dir / "manifest.json");
  const auto doc = nlohmann::json::parse(in);
  EXPECT_EQ(doc["run_id"], "r1");
  EXPECT_EQ(doc["seed"], 5);
  EXPECT_EQ(doc["config_hash"], m.config.hash_hex());
  EXPECT_EQ(doc["version"], kVersion);
  EXPECT_EQ(doc["config"]["voronoi.n"], "200");
  std::filesystem::remove_all(dir);
}
