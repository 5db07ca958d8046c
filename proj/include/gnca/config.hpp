#pragma once

// Plain-text key = value run configuration with `paper` and `desk` presets,
// and the JSON run manifest.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gnca/errors.hpp"

namespace gnca {

inline constexpr const char* kVersion = "0.1.0";

enum class KeyType { real, count, boolean, text };

struct KeySpec {
  KeyType type;
  std::string desk;
  std::string paper;
};

/// Every tunable constant, with its desk and paper value.
inline const std::map<std::string, KeySpec>& config_schema() {
  static const std::map<std::string, KeySpec> schema{
      {"seed", {KeyType::count, "0", "0"}},
      {"hidden", {KeyType::count, "256", "256"}},
      // Voronoi
      {"voronoi.n", {KeyType::count, "200", "1000"}},
      {"voronoi.kappa", {KeyType::real, "0.42", "0.42"}},
      {"voronoi.batches", {KeyType::count, "300", "1000"}},
      {"voronoi.batch_size", {KeyType::count, "32", "32"}},
      {"voronoi.lr", {KeyType::real, "0.01", "0.01"}},
      {"voronoi.eval_steps", {KeyType::count, "1000", "1000"}},
      {"voronoi.eval_batches", {KeyType::count, "10", "10"}},
      {"voronoi.sweep_steps", {KeyType::count, "1000", "1000"}},
      {"voronoi.sweep_kappas", {KeyType::text, "0.05:0.95:0.05", "0.05:0.95:0.05"}},
      {"minimal.epochs", {KeyType::count, "100000", "100000"}},
      {"minimal.lr", {KeyType::real, "0.001", "0.001"}},
      {"minimal.l2", {KeyType::real, "0.001", "0.001"}},
      {"minimal.plateau_patience", {KeyType::count, "10000", "10000"}},
      {"minimal.min_delta", {KeyType::real, "1e-08", "1e-08"}},
      {"minimal.max_attempts", {KeyType::count, "20", "20"}},
      // Boids
      {"boids.n", {KeyType::count, "50", "100"}},
      {"boids.steps", {KeyType::count, "200", "500"}},
      {"boids.train", {KeyType::count, "30", "300"}},
      {"boids.val", {KeyType::count, "5", "30"}},
      {"boids.test", {KeyType::count, "5", "30"}},
      {"boids.batch_size", {KeyType::count, "5", "30"}},
      {"boids.lr", {KeyType::real, "0.001", "0.001"}},
      {"boids.plateau_patience", {KeyType::count, "3", "10"}},
      {"boids.early_stop_patience", {KeyType::count, "6", "20"}},
      {"boids.max_epochs", {KeyType::count, "12", "1000"}},
      {"boids.eval_steps", {KeyType::count, "1000", "1000"}},
      {"boids.eval_seeds", {KeyType::count, "5", "5"}},
      {"boids.velocity_only_base", {KeyType::boolean, "false", "false"}},
      {"boids.position_scale", {KeyType::real, "1", "1"}},
      {"boids.velocity_scale", {KeyType::real, "100", "1"}},
      {"boids.radius", {KeyType::real, "0.15", "0.15"}},
      {"boids.margin", {KeyType::real, "0.2", "0.2"}},
      {"boids.separation", {KeyType::real, "0.015", "0.015"}},
      {"boids.align", {KeyType::real, "0.125", "0.125"}},
      {"boids.cohesion", {KeyType::real, "0.01", "0.01"}},
      {"boids.speed_limit", {KeyType::real, "0.01", "0.01"}},
      {"boids.max_turn_deg", {KeyType::real, "5", "5"}},
      {"boids.boundary_push", {KeyType::real, "0.005", "0.005"}},
      // Fixed target
      {"target.graph", {KeyType::text, "grid2d:16x16", "grid2d:16x16"}},
      {"target.t", {KeyType::text, "10:20", "10:20"}},
      {"target.batch_size", {KeyType::count, "8", "8"}},
      {"target.cache_size", {KeyType::count, "1024", "1024"}},
      {"target.hidden", {KeyType::count, "64", "256"}},
      {"target.lr", {KeyType::real, "0.0001", "0.001"}},
      {"target.init_gain", {KeyType::real, "1.4", "1"}},
      {"target.clip_norm", {KeyType::real, "1", "1"}},
      {"target.batches_per_epoch", {KeyType::count, "10", "10"}},
      {"target.plateau_patience", {KeyType::count, "150", "750"}},
      {"target.early_stop_patience", {KeyType::count, "200", "1000"}},
      {"target.max_epochs", {KeyType::count, "200", "100000"}},
      {"target.rollout_steps", {KeyType::count, "200", "200"}},
      {"target.tol", {KeyType::real, "0.001", "0.001"}},
  };
  return schema;
}

/// FNV-1a, 64 bit.
inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

class Config {
 public:
  /// "desk" or "paper".
  static Config preset(const std::string& name) {
    if (name != "desk" && name != "paper") throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
    Config c;
    c.preset_ = name;
    for (const auto& [key, spec] : config_schema()) c.values_[key] = name == "paper" ? spec.paper : spec.desk;
    return c;
  }

  void set(const std::string& key, const std::string& value) {
    const auto it = config_schema().find(key);
    if (it == config_schema().end()) throw ConfigError("unknown config key '" + key + "'");
    check_type(key, it->second.type, value);
    values_[key] = value;
  }

  /// Lines of `key = value`; `#` starts a comment.
  void parse(std::istream& in, const std::string& source = "<config>") {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      try {
        set(key, trim(line.substr(eq + 1)));
      } catch (const ConfigError& e) {
        throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    parse(in, path);
  }

  const std::string& get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }
  double real(const std::string& key) const { return std::stod(get(key)); }
  std::size_t count(const std::string& key) const { return static_cast<std::size_t>(std::stoull(get(key))); }
  bool flag(const std::string& key) const { return get(key) == "true"; }

  const std::string& preset_name() const { return preset_; }
  const std::map<std::string, std::string>& values() const { return values_; }

  /// Hash over the sorted key=value lines, so it does not depend on the
  /// order in which keys were given.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [k, v] : values_) h = fnv1a(k + "=" + v + "\n", h);
    return h;
  }

  std::string hash_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
    return buf;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : values_) j[k] = v;
    return j;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static void check_type(const std::string& key, KeyType type, const std::string& value) {
    const auto bad = [&](const char* what) { throw ConfigError("config key '" + key + "' expects " + what + ", got '" + value + "'"); };
    switch (type) {
      case KeyType::real: {
        std::size_t used = 0;
        try {
          std::stod(value, &used);
        } catch (const std::exception&) {
          bad("a number");
        }
        if (used != value.size()) bad("a number");
        break;
      }
      case KeyType::count: {
        if (value.empty() || value.find_first_not_of("0123456789") != std::string::npos) bad("a non-negative integer");
        try {
          (void)std::stoull(value);
        } catch (const std::exception&) {
          bad("a non-negative integer");
        }
        break;
      }
      case KeyType::boolean:
        if (value != "true" && value != "false") bad("true or false");
        break;
      case KeyType::text:
        if (value.empty()) bad("a value");
        break;
    }
  }

  std::string preset_ = "desk";
  std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunManifest {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string command;
  Config config = Config::preset("desk");
  std::string started_at;
  std::string finished_at;
  double wall_clock_seconds = 0.0;
  nlohmann::json metrics = nlohmann::json::object();
  std::vector<std::string> conventions;

  nlohmann::json to_json() const {
    return {{"run_id", run_id},
            {"seed", seed},
            {"command", command},
            {"preset", config.preset_name()},
            {"config", config.to_json()},
            {"config_hash", config.hash_hex()},
            {"version", kVersion},
            {"started_at", started_at},
            {"finished_at", finished_at},
            {"wall_clock_seconds", wall_clock_seconds},
            {"metrics", metrics},
            {"conventions", conventions}};
  }
};

/// Writes to a sibling temporary file, then renames over the destination.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << contents;
    out.flush();
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_manifest(const std::filesystem::path& dir, const RunManifest& m) {
  write_file_atomic(dir / "manifest.json", m.to_json().dump(2) + "\n");
}

}  // namespace gnca
