// Acceptance suite: one PASS/FAIL line per criterion.
//
//   gnca_acceptance [--only 1,2,...] [--out DIR]
//
// Criteria 3, 4, 6 and 8 drive the gnca executable end to end with the desk
// preset; criterion 9 reruns the pipelines of 3, 6 and 8 into a second
// output root and compares the metric files byte for byte.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gnca/gnca.hpp"
#include "grad_cases.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace gnca;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 6) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("missing file " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// metric → value from a metrics.csv written by the CLI.
std::map<std::string, double> read_metrics(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::map<std::string, double> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto a = line.find(','), b = line.find(',', a + 1), c = line.find(',', b + 1);
    out[line.substr(a + 1, b - a - 1)] = std::stod(line.substr(b + 1, c - b - 1));
  }
  return out;
}

std::vector<std::string> csv_row(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string f; std::getline(ss, f, ',');) out.push_back(f);
  return out;
}

/// Runs the CLI with its output root set to `root`; logs go to root/<log>.log.
void cli(const fs::path& root, const std::string& args, const std::string& log) {
  fs::create_directories(root);
  const std::string cmd = "GNCA_OUTPUT_ROOT='" + root.string() + "' " + GNCA_CLI_PATH + " " + args + " > '" +
                          (root / (log + ".log")).string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  if (code != 0) throw std::runtime_error("gnca " + args + " exited with " + std::to_string(code));
}

// ---------------------------------------------------------------------------
// Pipelines shared with the determinism check
// ---------------------------------------------------------------------------

struct Pipeline {
  std::string name;
  std::function<void(const fs::path&)> run;
  std::vector<std::string> artifacts;  // relative to the output root
};

const std::string kSeed = "--seed 0";

Pipeline voronoi_pipeline() {
  return {"voronoi",
          [](const fs::path& root) {
            cli(root, "voronoi train --preset desk " + kSeed + " --run-id c3-train", "c3-train");
            cli(root,
                "voronoi eval --preset desk " + kSeed + " --checkpoint '" + (root / "c3-train" / "checkpoint.json").string() +
                    "' --run-id c3-eval",
                "c3-eval");
          },
          {"c3-train/metrics.csv", "c3-eval/metrics.csv"}};
}

Pipeline boids_pipeline() {
  return {"boids",
          [](const fs::path& root) {
            cli(root, "boids train --preset desk " + kSeed + " --run-id c6-train", "c6-train");
            cli(root,
                "boids eval --preset desk " + kSeed + " --checkpoint '" + (root / "c6-train" / "checkpoint.json").string() +
                    "' --run-id c6-eval",
                "c6-eval");
          },
          {"c6-train/metrics.csv", "c6-eval/metrics.csv", "c6-eval/one_step_mse.csv"}};
}

std::string target_tag(const std::string& t) {
  std::string tag = t;
  for (char& c : tag) c = c == ':' ? '-' : c;
  return tag;
}

Pipeline target_pipeline(const std::string& t) {
  const std::string tag = target_tag(t);
  return {"target t=" + t,
          [t, tag](const fs::path& root) {
            const std::string common = "--preset desk " + kSeed + " --graph grid2d:16x16 --t " + t;
            cli(root, "target train " + common + " --run-id c8-train-" + tag, "c8-train-" + tag);
            cli(root,
                "target rollout " + common + " --checkpoint '" +
                    (root / ("c8-train-" + tag) / "checkpoint.json").string() + "' --run-id c8-rollout-" + tag,
                "c8-rollout-" + tag);
          },
          {"c8-train-" + tag + "/metrics.csv", "c8-rollout-" + tag + "/metrics.csv", "c8-rollout-" + tag + "/verdict.csv",
           "c8-rollout-" + tag + "/mse_curve.csv"}};
}

class Runner {
 public:
  explicit Runner(fs::path out) : out_(std::move(out)) {}

  fs::path root(int copy) const { return out_ / (copy == 0 ? "a" : "b"); }

  /// Runs a pipeline into output copy 0 or 1 once; returns its wall-clock seconds.
  double ensure(const Pipeline& p, int copy) {
    const std::string key = p.name + "#" + std::to_string(copy);
    if (const auto it = done_.find(key); it != done_.end()) return it->second;
    Stopwatch clock;
    p.run(root(copy));
    return done_[key] = clock.seconds();
  }

 private:
  fs::path out_;
  std::map<std::string, double> done_;
};

Outcome timed(Outcome o, double seconds, double limit) {
  o.detail += "; runtime " + fmt(seconds, 4) + " s (limit " + fmt(limit, 4) + " s)";
  if (seconds >= limit) o.pass = false;
  return o;
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

Outcome criterion1() {
  Stopwatch clock;
  Outcome o{true, ""};
  double worst_op = 0.0, worst_model = 0.0;
  for (const auto& c : gradcase::op_cases()) {
    const double e = gradcase::check(c);
    worst_op = std::max(worst_op, e);
    if (!(e < c.tolerance)) {
      o.pass = false;
      o.detail += c.name + " rel err " + fmt(e) + "; ";
    }
  }
  for (const auto& c : gradcase::model_cases()) {
    const double e = gradcase::check(c);
    worst_model = std::max(worst_model, e);
    if (!(e < c.tolerance)) {
      o.pass = false;
      o.detail += c.name + " rel err " + fmt(e) + "; ";
    }
  }
  const auto bptt = gradcase::bptt_case();
  const double eb = gradcase::check(bptt);
  if (!(eb < bptt.tolerance)) o.pass = false;
  o.detail += "worst op " + fmt(worst_op, 3) + ", worst GNCA " + fmt(worst_model, 3) + " (< 1e-4), BPTT t=3 " + fmt(eb, 3) + " (< 1e-3)";
  return timed(o, clock.seconds(), 10.0);
}

Outcome criterion2() {
  Stopwatch clock;
  const Config cfg = Config::preset("desk");
  const double kappa = cfg.real("voronoi.kappa");
  const MinimalDataset data = minimal_voronoi_dataset(kappa);
  const MinimalEvaluation exact = evaluate_minimal_net(MinimalVoronoiNet::published(), data);
  std::size_t outside = 0;
  for (std::size_t r : exact.wrong_rows) outside += std::abs(data.inputs(r, 1) - kappa) > 0.01 + 1e-12;
  const MinimalMlpTrainResult trained = train_minimal_voronoi_mlp(minimal_train_config(cfg));
  Outcome o;
  o.pass = exact.correct >= 195 && outside == 0 && trained.evaluation.correct == 198;
  o.detail = "hand weights " + std::to_string(exact.correct) + "/198 (" + std::to_string(outside) +
             " outside |rho-kappa|<=0.01); trained MLP " + std::to_string(trained.evaluation.correct) + "/198 after " +
             std::to_string(trained.attempts) + " attempt(s)";
  return timed(o, clock.seconds(), 120.0);
}

Outcome criterion3(Runner& runner) {
  const double secs = runner.ensure(voronoi_pipeline(), 0);
  const auto m = read_metrics(runner.root(0) / "c3-eval" / "metrics.csv");
  const double acc = m.at("accuracy");
  const double dhs = std::abs(m.at("h_s_model") - m.at("h_s_truth"));
  const double dhw = std::abs(m.at("h_w_model") - m.at("h_w_truth"));
  Outcome o;
  o.pass = acc >= 0.999 && dhs <= 0.05 && dhw <= 0.1;
  o.detail = "val accuracy " + fmt(acc, 8) + " (>= 0.999); |dH_s| " + fmt(dhs) + " (<= 0.05); |dH_w| " + fmt(dhw) +
             " (<= 0.1); H_s truth " + fmt(m.at("h_s_truth")) + ", H_w truth " + fmt(m.at("h_w_truth"));
  return timed(o, secs, 15 * 60.0);
}

Outcome criterion4(Runner& runner) {
  Stopwatch clock;
  const fs::path root = runner.root(0);
  cli(root, "voronoi sweep --preset desk " + kSeed + " --run-id c4-sweep", "c4-sweep");
  std::istringstream in(slurp(root / "c4-sweep" / "sweep.csv"));
  std::string line;
  std::getline(in, line);
  double low = 0, high = 0, best_hw = -1, best_kappa = 0;
  std::size_t n_low = 0, n_high = 0, rows = 0;
  while (std::getline(in, line)) {
    const auto f = csv_row(line);
    const double kappa = std::stod(f[0]), hs = std::stod(f[1]), hw = std::stod(f[2]);
    ++rows;
    if (kappa <= 0.35 + 1e-9) {
      low += hs;
      ++n_low;
    }
    if (kappa >= 0.5 - 1e-9) {
      high += hs;
      ++n_high;
    }
    if (hw > best_hw) {
      best_hw = hw;
      best_kappa = kappa;
    }
  }
  const double gap = low / static_cast<double>(n_low) - high / static_cast<double>(n_high);
  Outcome o;
  o.pass = rows == 19 && gap >= 0.3 && best_kappa >= 0.3 - 1e-9 && best_kappa <= 0.5 + 1e-9;
  o.detail = std::to_string(rows) + " thresholds; mean H_s(k<=0.35) - mean H_s(k>=0.5) = " + fmt(gap) +
             " (>= 0.3); argmax H_w at kappa " + fmt(best_kappa) + " (in [0.3, 0.5])";
  return timed(o, clock.seconds(), 10 * 60.0);
}

Outcome criterion5() {
  Stopwatch clock;
  const Config cfg = Config::preset("desk");
  const BoidsConfig b = boids_config(cfg);
  const std::size_t n = cfg.count("boids.n");
  const double max_turn = b.max_turn_deg * std::numbers::pi / 180.0;
  double worst_speed = 0.0, worst_turn = 0.0, worst_pos = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    BoidsState s = random_boids(n, b, rng);
    for (int t = 0; t < 10000; ++t) {
      const BoidsState next = boids_step(b, s).next;
      for (std::size_t i = 0; i < n; ++i) {
        const double vx = next.values(i, 2), vy = next.values(i, 3), ux = s.values(i, 2), uy = s.values(i, 3);
        worst_speed = std::max(worst_speed, std::hypot(vx, vy));
        if (std::hypot(ux, uy) > 0 && std::hypot(vx, vy) > 0) {
          worst_turn = std::max(worst_turn, std::atan2(std::abs(ux * vy - uy * vx), ux * vx + uy * vy));
        }
        worst_pos = std::max({worst_pos, std::abs(next.values(i, 0)), std::abs(next.values(i, 1))});
      }
      s = next;
    }
  }
  Outcome o;
  o.pass = worst_speed <= b.speed_limit + 1e-12 && worst_turn <= max_turn + 1e-9 && worst_pos <= 1.2;
  o.detail = "20 seeds x 10000 steps x " + std::to_string(n) + " boids: max speed " + fmt(worst_speed, 15) + ", max turn " +
             fmt(worst_turn * 180.0 / std::numbers::pi, 12) + " deg, max |coord| " + fmt(worst_pos);
  return timed(o, clock.seconds(), 5 * 60.0);
}

Outcome criterion6(Runner& runner) {
  const double secs = runner.ensure(boids_pipeline(), 0);
  const fs::path root = runner.root(0);
  const auto m = read_metrics(root / "c6-eval" / "metrics.csv");
  std::istringstream mse_in(slurp(root / "c6-eval" / "one_step_mse.csv"));
  std::string line;
  std::getline(mse_in, line);
  std::getline(mse_in, line);
  const double mse = std::stod(csv_row(line)[2]);
  const double dse = std::abs(m.at("sampen_model") - m.at("sampen_truth"));
  const double dcd = std::abs(m.at("corr_dim_model") - m.at("corr_dim_truth"));
  Outcome o;
  o.pass = mse <= 1e-5 && dse <= 0.05 && dcd <= 0.3;
  o.detail = "test one-step MSE " + fmt(mse) + " (<= 1e-5); SampEn truth " + fmt(m.at("sampen_truth")) + " model " +
             fmt(m.at("sampen_model")) + " |d| " + fmt(dse) + " (<= 0.05); CD truth " + fmt(m.at("corr_dim_truth")) +
             " model " + fmt(m.at("corr_dim_model")) + " |d| " + fmt(dcd) + " (<= 0.3)";
  return timed(o, secs, 60 * 60.0);
}

Outcome criterion7() {
  Stopwatch clock;
  std::vector<std::pair<std::string, std::vector<double>>> series;
  Rng rng(21);
  for (std::size_t n : {100, 250, 500}) {
    std::vector<double> x(n);
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    series.push_back({"noise" + std::to_string(n), x});
  }
  {
    std::vector<double> x(500);
    for (std::size_t t = 0; t < x.size(); ++t) x[t] = std::sin(0.3 * static_cast<double>(t)) + 0.1 * rng.uniform(-1, 1);
    series.push_back({"sine500", x});
  }
  {
    std::vector<double> x(400);
    for (double& v : x) v = static_cast<double>(rng.below(5));
    series.push_back({"integer400", x});
  }
  {
    std::vector<double> x(500);
    x[0] = 0.3;
    for (std::size_t t = 1; t < x.size(); ++t) x[t] = 3.9 * x[t - 1] * (1.0 - x[t - 1]);
    series.push_back({"logistic500", x});
  }
  {
    const auto traj = simulate_boids(BoidsConfig{}, 20, 499, 3);
    series.push_back({"boid500", channel_series(traj, 0, 0)});
  }
  Outcome o{true, ""};
  std::size_t checks = 0;
  for (const auto& [name, x] : series) {
    const double r = 0.2 * population_std(x);
    const SampEnCounts fast = sample_entropy_counts(x, 2, r);
    const oracle::SampEnCounts slow = oracle::sampen_counts(x, 2, r);
    if (fast.matches_m != slow.b || fast.matches_m1 != slow.a) {
      o.pass = false;
      o.detail += name + " SampEn counts differ; ";
    }
    const CorrelationDimensionResult cd = correlation_dimension_details(x, 10);
    if (cd.counts != oracle::correlation_counts(x, 10, cd.radii)) {
      o.pass = false;
      o.detail += name + " CD counts differ; ";
    }
    checks += 2;
  }
  o.detail += std::to_string(checks) + " count comparisons over " + std::to_string(series.size()) + " series (length <= 500)";
  return timed(o, clock.seconds(), 60.0);
}

Outcome criterion8(Runner& runner) {
  Outcome o{true, ""};
  double worst = 0.0;
  for (const std::string t : {"10:20", "10"}) {
    const double secs = runner.ensure(target_pipeline(t), 0);
    worst = std::max(worst, secs);
    std::istringstream in(slurp(runner.root(0) / ("c8-rollout-" + target_tag(t)) / "verdict.csv"));
    std::string line;
    std::getline(in, line);
    std::getline(in, line);
    const auto f = csv_row(line);
    const std::string kind = f[2];
    const double min_error = std::stod(f[3]);
    bool ok;
    if (t == "10:20") {
      ok = kind == "converge" && min_error <= 1e-3;
    } else {
      ok = (kind == "converge" || kind == "periodic") && min_error <= 5e-3;
    }
    o.pass = o.pass && ok;
    o.detail += "t=" + t + ": " + kind + " min MSE " + fmt(min_error) + " in " + fmt(secs, 4) + " s; ";
    if (secs >= 90 * 60.0) o.pass = false;
  }
  o.detail += "limits: t=10:20 converge with min <= 1e-3, t=10 converge/periodic with min <= 5e-3";
  return timed(o, worst, 90 * 60.0);
}

Outcome criterion9(Runner& runner) {
  Outcome o{true, ""};
  std::size_t compared = 0;
  for (const Pipeline& p : {voronoi_pipeline(), boids_pipeline(), target_pipeline("10:20"), target_pipeline("10")}) {
    runner.ensure(p, 0);
    runner.ensure(p, 1);
    for (const std::string& rel : p.artifacts) {
      ++compared;
      if (slurp(runner.root(0) / rel) != slurp(runner.root(1) / rel)) {
        o.pass = false;
        o.detail += rel + " differs; ";
      }
    }
  }
  o.detail += std::to_string(compared) + " metric files compared byte for byte across two runs";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GNCA acceptance criteria"};
  std::string only;
  std::string out = "acceptance_runs";
  app.add_option("--only", only, "comma-separated criterion numbers, e.g. 1,2");
  app.add_option("--out", out, "directory for pipeline outputs");
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  if (!only.empty()) {
    std::stringstream ss(only);
    for (std::string tok; std::getline(ss, tok, ',');) {
      try {
        selected.insert(std::stoi(tok));
      } catch (const std::exception&) {
        std::cerr << "bad --only entry '" << tok << "'\n";
        return 1;
      }
    }
  }

  fs::remove_all(out);
  Runner runner{fs::absolute(out)};
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, criterion1},
      {2, criterion2},
      {3, [&] { return criterion3(runner); }},
      {4, [&] { return criterion4(runner); }},
      {5, criterion5},
      {6, [&] { return criterion6(runner); }},
      {7, criterion7},
      {8, [&] { return criterion8(runner); }},
      {9, [&] { return criterion9(runner); }},
  };
  int failures = 0;
  for (const auto& [id, fn] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
