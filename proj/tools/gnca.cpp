// gnca: command-line driver for the Voronoi, Boids and fixed-target experiments.
//
//   gnca voronoi train|eval|sweep
//   gnca boids sim|train|eval
//   gnca target train|rollout
//
// Every run writes into $GNCA_OUTPUT_ROOT/<run_id>/ (default root ./runs).
// Exit codes: 0 success, 1 invalid configuration, 2 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "gnca/gnca.hpp"

namespace fs = std::filesystem;
using namespace gnca;

namespace {

struct Options {
  std::string preset = "desk";
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string run_id;
  std::string checkpoint;
  bool exact_weights = false;
  bool validate = false;
  // Flags that map onto config keys, resolved per command.
  std::optional<std::string> n, steps, kappa, kappas, batches, lr, graph, t;
};

Config resolve_config(const Options& o, const std::string& group, const std::string& sub) {
  Config c = Config::preset(o.preset);
  if (!o.config_file.empty()) c.load_file(o.config_file);
  for (const std::string& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) c.set("seed", std::to_string(*o.seed));
  auto put = [&](const std::optional<std::string>& v, const std::string& key) {
    if (v) c.set(key, *v);
  };
  if (group == "voronoi") {
    put(o.n, "voronoi.n");
    put(o.kappa, "voronoi.kappa");
    put(o.kappas, "voronoi.sweep_kappas");
    put(o.batches, "voronoi.batches");
    put(o.lr, "voronoi.lr");
    put(o.steps, sub == "sweep" ? "voronoi.sweep_steps" : "voronoi.eval_steps");
  } else if (group == "boids") {
    put(o.n, "boids.n");
    put(o.lr, "boids.lr");
    put(o.steps, sub == "eval" ? "boids.eval_steps" : "boids.steps");
  } else if (group == "target") {
    put(o.graph, "target.graph");
    put(o.t, "target.t");
    put(o.lr, "target.lr");
    put(o.steps, "target.rollout_steps");
  }
  return c;
}

class Run {
 public:
  Run(const std::string& command, const Config& cfg, const Options& o, const std::string& extras) {
    manifest_.command = command;
    manifest_.config = cfg;
    manifest_.seed = cfg.count("seed");
    manifest_.started_at = utc_timestamp();
    std::string id = o.run_id;
    if (id.empty()) {
      char buf[17];
      std::snprintf(buf, sizeof buf, "%016llx",
                    static_cast<unsigned long long>(fnv1a(command + "\n" + extras + "\n", cfg.hash())));
      id = command + "-" + std::string(buf, 12);
      for (char& ch : id) ch = ch == ' ' ? '-' : ch;
    }
    manifest_.run_id = id;
    const char* root = std::getenv("GNCA_OUTPUT_ROOT");
    dir_ = fs::path(root && *root ? root : "runs") / id;
    fs::create_directories(dir_);
  }

  const fs::path& dir() const { return dir_; }
  const std::string& id() const { return manifest_.run_id; }
  RunManifest& manifest() { return manifest_; }

  void metric(const std::string& name, double value, const std::string& params = "") {
    rows_.push_back({manifest_.run_id, name, value, params});
    manifest_.metrics[name] = value;
  }

  void write_text(const std::string& name, const std::string& contents) const { write_file_atomic(dir_ / name, contents); }

  void finish() {
    if (!rows_.empty()) {
      std::ostringstream csv;
      write_metric_csv(csv, rows_);
      write_text("metrics.csv", csv.str());
    }
    manifest_.finished_at = utc_timestamp();
    manifest_.wall_clock_seconds = clock_.seconds();
    write_manifest(dir_, manifest_);
    std::cout << dir_.string() << '\n';
  }

 private:
  RunManifest manifest_;
  fs::path dir_;
  std::vector<MetricRow> rows_;
  detail::Stopwatch clock_;
};

void write_report(Run& run, TrainReport report, double wall_clock) {
  report.checkpoint_path = "checkpoint.json";
  run.write_text("train_report.json", report.to_json().dump(2) + "\n");
  run.manifest().metrics["train_wall_clock_seconds"] = wall_clock;
}

void save_params(const Run& run, const GncaParams& params) {
  run.write_text("checkpoint.json", checkpoint_to_json(params).dump() + "\n");
}

std::string kv(const std::string& k, const std::string& v) { return k + "=" + v; }

const std::vector<std::string> kEntropyConventions{
    "word entropy: run-length counts per node normalised to a distribution over run lengths",
    "binary inference rounds sigmoid outputs at 0.5 (0.5 rounds to 1)"};

// ---------------------------------------------------------------------------

int voronoi_train(const Options& o) {
  const Config cfg = resolve_config(o, "voronoi", "train");
  Run run("voronoi train", cfg, o, "");
  const Graph g = voronoi_graph(cfg);
  VoronoiTrainConfig tc = voronoi_train_config(cfg);
  tc.log = &std::cerr;
  VoronoiTrainResult res = train_voronoi(g, tc);
  save_geometric_graph(g, (run.dir() / "graph.json").string());
  write_report(run, res.report, res.report.wall_clock_seconds);
  save_params(run, res.params);
  const std::string p = kv("kappa", cfg.get("voronoi.kappa"));
  run.metric("final_train_loss", res.report.train_loss.back(), p);
  run.metric("final_val_loss", res.report.val_loss.back(), p);
  run.metric("final_val_accuracy", res.report.val_accuracy.back(), p);
  run.manifest().conventions = kEntropyConventions;
  run.finish();
  return 0;
}

int voronoi_eval(const Options& o) {
  const Config cfg = resolve_config(o, "voronoi", "eval");
  const double kappa = cfg.real("voronoi.kappa");
  const std::uint64_t seed = cfg.count("seed");
  if (!o.exact_weights && o.checkpoint.empty()) throw ConfigError("voronoi eval needs --checkpoint or --exact-weights");
  Run run("voronoi eval", cfg, o, o.exact_weights ? "exact" : fs::absolute(o.checkpoint).string());
  const std::size_t steps = cfg.count("voronoi.eval_steps");
  const std::string p = kv("kappa", cfg.get("voronoi.kappa")) + ";" + kv("steps", std::to_string(steps));
  Graph g = voronoi_graph(cfg);
  VoronoiEvaluation ev;
  if (o.exact_weights) {
    const MinimalVoronoiGnca model = build_minimal_voronoi_gnca();
    const MinimalDataset data = minimal_voronoi_dataset(kappa);
    const MinimalEvaluation acc = evaluate_minimal_net(model.net, data);
    run.metric("dataset_correct", static_cast<double>(acc.correct), kv("kappa", cfg.get("voronoi.kappa")));
    run.metric("dataset_total", static_cast<double>(acc.total), kv("kappa", cfg.get("voronoi.kappa")));
    std::size_t outside = 0;
    for (std::size_t r : acc.wrong_rows) outside += std::abs(data.inputs(r, 1) - kappa) > 0.01 + 1e-12;
    run.metric("disagreements_outside_band", static_cast<double>(outside), "band=0.01");
    std::cerr << "exact weights: " << acc.correct << "/" << acc.total << " correct\n";
    ev = compare_voronoi_rollouts(
        [&](const Tensor& s) { return model.step(g, StateMatrix{s, StateKind::binary}).values; }, g, kappa, steps,
        derive_seed(seed, 200));
  } else {
    const GncaParams params = load_checkpoint(o.checkpoint);
    const fs::path graph_file = fs::path(o.checkpoint).parent_path() / "graph.json";
    if (fs::exists(graph_file)) g = load_geometric_graph(graph_file.string());
    const double acc = voronoi_accuracy(params, g, kappa, cfg.count("voronoi.eval_batches"), cfg.count("voronoi.batch_size"),
                                        derive_seed(seed, 201));
    run.metric("accuracy", acc, kv("kappa", cfg.get("voronoi.kappa")));
    ev = compare_voronoi_rollouts([&](const Tensor& s) { return round_binary(gnca_forward(params, g, s)); }, g, kappa,
                                  steps, derive_seed(seed, 200));
  }
  run.metric("h_s_truth", ev.truth.h_s, p);
  run.metric("h_s_model", ev.model.h_s, p);
  run.metric("h_w_truth", ev.truth.h_w, p);
  run.metric("h_w_model", ev.model.h_w, p);
  run.metric("identical_steps", static_cast<double>(ev.identical_steps), p);
  run.manifest().conventions = kEntropyConventions;
  run.finish();
  return 0;
}

int voronoi_sweep(const Options& o) {
  const Config cfg = resolve_config(o, "voronoi", "sweep");
  Run run("voronoi sweep", cfg, o, "");
  const std::uint64_t seed = cfg.count("seed");
  const Graph g = voronoi_graph(cfg);
  const auto kappas = parse_range(cfg.get("voronoi.sweep_kappas"));
  const auto points = edge_of_chaos_sweep(g, kappas, cfg.count("voronoi.sweep_steps"), derive_seed(seed, 300));
  std::ostringstream csv;
  csv << "kappa,h_s,h_w\n";
  for (const SweepPoint& pt : points) {
    csv << format_double(pt.kappa) << ',' << format_double(pt.h_s) << ',' << format_double(pt.h_w) << '\n';
  }
  run.write_text("sweep.csv", csv.str());
  run.manifest().metrics["kappas"] = kappas.size();
  run.manifest().conventions = kEntropyConventions;
  run.finish();
  return 0;
}

// ---------------------------------------------------------------------------

int boids_sim(const Options& o) {
  const Config cfg = resolve_config(o, "boids", "sim");
  Run run("boids sim", cfg, o, o.validate ? "validate" : "");
  const BoidsConfig b = boids_config(cfg);
  const auto traj = simulate_boids(b, cfg.count("boids.n"), cfg.count("boids.steps"), cfg.count("seed"));
  std::ostringstream out;
  write_trajectory_jsonl(out, traj, false);
  run.write_text("trajectory.jsonl", out.str());
  double max_speed = 0.0;
  for (std::size_t t = 1; t < traj.size(); ++t) {
    for (std::size_t i = 0; i < traj[t].rows(); ++i) max_speed = std::max(max_speed, std::hypot(traj[t](i, 2), traj[t](i, 3)));
  }
  run.manifest().metrics["max_speed"] = max_speed;
  run.manifest().metrics["records"] = traj.size();
  if (o.validate && max_speed > b.speed_limit + 1e-12) {
    std::cerr << "speed limit violated: " << max_speed << '\n';
    return 2;
  }
  run.finish();
  return 0;
}

int boids_train(const Options& o) {
  const Config cfg = resolve_config(o, "boids", "train");
  Run run("boids train", cfg, o, "");
  BoidsTrainConfig tc = boids_train_config(cfg);
  tc.log = &std::cerr;
  const BoidsDataset data = make_boids_dataset(tc);
  BoidsTrainResult res = train_boids(tc, data);
  write_report(run, res.report, res.report.wall_clock_seconds);
  save_params(run, res.params);
  run.metric("test_one_step_mse", res.test_mse, kv("boids", cfg.get("boids.n")));
  run.metric("best_val_mse", res.report.val_loss[res.report.best_epoch], kv("boids", cfg.get("boids.n")));
  run.manifest().conventions = {"predicted velocities are not speed-limited", "velocity channels are scaled by boids.velocity_scale inside the model",
                                "SampEn and CD are computed per position channel and averaged"};
  run.finish();
  return 0;
}

int boids_eval(const Options& o) {
  const Config cfg = resolve_config(o, "boids", "eval");
  if (o.checkpoint.empty()) throw ConfigError("boids eval needs --checkpoint");
  Run run("boids eval", cfg, o, fs::absolute(o.checkpoint).string());
  const GncaParams params = load_checkpoint(o.checkpoint);
  BoidsTrainConfig tc = boids_train_config(cfg);
  tc.train_trajectories = 0;
  tc.val_trajectories = 0;
  const BoidsDataset data = make_boids_dataset(tc);
  const std::size_t steps = cfg.count("boids.eval_steps");
  const BoidsEvaluation ev = evaluate_boids(params, tc.boids, data, steps, cfg.count("boids.eval_seeds"));
  const std::string p = kv("steps", std::to_string(steps)) + ";" + kv("seeds", std::to_string(ev.rollouts));
  run.metric("sampen_truth", ev.truth.sampen, p + ";m=2;r=0.2sd");
  run.metric("sampen_model", ev.model.sampen, p + ";m=2;r=0.2sd");
  run.metric("corr_dim_truth", ev.truth.corr_dim, p + ";m=10");
  run.metric("corr_dim_model", ev.model.corr_dim, p + ";m=10");
  std::ostringstream mse;
  mse << "run_id,metric,value,params\n"
      << run.id() << ",one_step_mse," << format_double(ev.one_step_mse) << ",split=test\n";
  run.write_text("one_step_mse.csv", mse.str());
  run.manifest().metrics["one_step_mse"] = ev.one_step_mse;
  run.manifest().conventions = {"SampEn and CD are computed per position channel and averaged over boids and starts"};
  run.finish();
  return 0;
}

// ---------------------------------------------------------------------------

const std::vector<std::string> kTargetConventions{
    "loss: mean over batch, nodes and state dimensions",
    "zero-norm target rows stay zero in the initial state",
    "validation: MSE to the target after t_max steps from the initial state"};

int target_train(const Options& o) {
  const Config cfg = resolve_config(o, "target", "train");
  FixedTargetConfig fc = target_config(cfg);
  fc.log = &std::cerr;
  Run run("target train", cfg, o, "");
  const Graph g = target_graph(cfg);
  FixedTargetTrainResult res = train_fixed_target(g, fc);
  write_report(run, res.report, res.report.wall_clock_seconds);
  save_params(run, res.params);
  const std::string p = kv("graph", cfg.get("target.graph")) + ";" + kv("t", fc.t_mode());
  run.metric("best_val_mse", res.report.val_loss[res.report.best_epoch], p);
  run.metric("epochs", static_cast<double>(res.report.epochs.size()), p);
  run.manifest().conventions = kTargetConventions;
  run.finish();
  return 0;
}

int target_rollout(const Options& o) {
  const Config cfg = resolve_config(o, "target", "rollout");
  const FixedTargetConfig fc = target_config(cfg);
  Run run("target rollout", cfg, o, o.checkpoint.empty() ? "untrained" : fs::absolute(o.checkpoint).string());
  const Graph g = target_graph(cfg);
  if (!g.coords()) throw ConfigError("target graph has no coordinates");
  const Tensor target = fixed_target_from_coords(*g.coords());
  const Tensor initial = normalized_initial_state(target).initial;
  const GncaParams params = o.checkpoint.empty() ? init_gnca(fixed_target_gnca_config(target.cols(), fc.hidden), derive_seed(fc.seed, 0), fc.init_gain)
                                                 : load_checkpoint(o.checkpoint);
  const std::size_t steps = cfg.count("target.rollout_steps");
  const auto traj = autonomous_eval(params, g, initial, steps, false);
  const auto curve = mse_curve(traj, target);
  const AttractorVerdict v = classify_attractor(curve, cfg.real("target.tol"));

  std::ostringstream tr, mc, vr;
  write_trajectory_jsonl(tr, traj, false);
  mc << "step,mse\n";
  for (std::size_t t = 0; t < curve.size(); ++t) mc << t << ',' << format_double(curve[t]) << '\n';
  vr << "graph,t_mode,type,min_error\n"
     << csv_field(cfg.get("target.graph")) << ',' << fc.t_mode() << ',' << to_string(v.kind) << ','
     << format_double(v.min_error) << '\n';
  run.write_text("trajectory.jsonl", tr.str());
  run.write_text("mse_curve.csv", mc.str());
  run.write_text("verdict.csv", vr.str());
  const std::string p = kv("graph", cfg.get("target.graph")) + ";" + kv("t", fc.t_mode());
  run.metric("min_error", v.min_error, p);
  if (v.period) run.metric("period", static_cast<double>(*v.period), p);
  run.manifest().metrics["type"] = to_string(v.kind);
  run.manifest().conventions = kTargetConventions;
  std::cerr << "verdict: " << to_string(v.kind) << " min_error " << v.min_error << '\n';
  run.finish();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Keep tape buffers on the heap instead of fresh mmap pages per batch.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
  CLI::App app{"Graph neural cellular automata experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;

  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--preset", o.preset, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
    cmd->add_option("--config", o.config_file, "key = value config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", o.overrides, "override a config key (key=value), repeatable");
    cmd->add_option("--seed", o.seed, "random seed");
    cmd->add_option("--run-id", o.run_id, "output directory name under the output root");
  };

  struct Leaf {
    std::string group, name;
    CLI::App* app;
  };
  std::vector<Leaf> leaves;
  auto leaf = [&](CLI::App* group, const std::string& name, const std::string& help) {
    CLI::App* cmd = group->add_subcommand(name, help);
    common(cmd);
    leaves.push_back({group->get_name(), name, cmd});
    return cmd;
  };

  CLI::App* voronoi = app.add_subcommand("voronoi", "Voronoi density rule");
  voronoi->require_subcommand(1);
  CLI::App* vt = leaf(voronoi, "train", "train a GNCA on one-step transitions");
  CLI::App* ve = leaf(voronoi, "eval", "accuracy and entropy comparison against the rule");
  CLI::App* vs = leaf(voronoi, "sweep", "entropies of the rule across thresholds");
  for (CLI::App* c : {vt, ve, vs}) {
    c->add_option("--n", o.n, "number of graph nodes");
    c->add_option("--kappa", o.kappa, "threshold");
  }
  vt->add_option("--batches", o.batches, "training batches");
  vt->add_option("--lr", o.lr, "learning rate");
  ve->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->check(CLI::ExistingFile);
  ve->add_flag("--exact-weights", o.exact_weights, "use the hand-set two-neuron implementation");
  ve->add_option("--steps", o.steps, "rollout steps");
  vs->add_option("--steps", o.steps, "rollout steps per threshold");
  vs->add_option("--kappas", o.kappas, "threshold range lo:hi:step");

  CLI::App* boids = app.add_subcommand("boids", "Boids flocking");
  boids->require_subcommand(1);
  CLI::App* bs = leaf(boids, "sim", "simulate a ground-truth trajectory");
  CLI::App* bt = leaf(boids, "train", "train the GNCA on simulated transitions");
  CLI::App* be = leaf(boids, "eval", "one-step MSE, SampEn and CD for truth and model");
  for (CLI::App* c : {bs, bt, be}) c->add_option("--n", o.n, "number of boids");
  bs->add_option("--steps", o.steps, "simulation steps");
  bs->add_flag("--validate", o.validate, "fail if any speed exceeds the limit");
  bt->add_option("--steps", o.steps, "steps per trajectory");
  bt->add_option("--lr", o.lr, "learning rate");
  be->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->check(CLI::ExistingFile);
  be->add_option("--steps", o.steps, "rollout steps");

  CLI::App* target = app.add_subcommand("target", "fixed-target self-organisation");
  target->require_subcommand(1);
  CLI::App* tt = leaf(target, "train", "train with BPTT and a replay cache");
  CLI::App* tr = leaf(target, "rollout", "roll out from the normalised target and classify the attractor");
  for (CLI::App* c : {tt, tr}) {
    c->add_option("--graph", o.graph, "grid2d:HxW, delaunay:N, swissroll:N[:r] or a graph file");
    c->add_option("--t", o.t, "unroll length N or range LO:HI");
  }
  tt->add_option("--lr", o.lr, "learning rate");
  tr->add_option("--checkpoint", o.checkpoint, "trained checkpoint (default: untrained parameters)")->check(CLI::ExistingFile);
  tr->add_option("--steps", o.steps, "rollout steps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    for (const Leaf& l : leaves) {
      if (!l.app->parsed()) continue;
      const std::string cmd = l.group + " " + l.name;
      if (cmd == "voronoi train") return voronoi_train(o);
      if (cmd == "voronoi eval") return voronoi_eval(o);
      if (cmd == "voronoi sweep") return voronoi_sweep(o);
      if (cmd == "boids sim") return boids_sim(o);
      if (cmd == "boids train") return boids_train(o);
      if (cmd == "boids eval") return boids_eval(o);
      if (cmd == "target train") return target_train(o);
      if (cmd == "target rollout") return target_rollout(o);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  std::cerr << "error: no command given\n";
  return 1;
}
