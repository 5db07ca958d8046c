#pragma once

// Complexity measures over trajectories: per-node Shannon and word entropy,
// sample entropy, correlation dimension, attractor classification.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gnca/errors.hpp"
#include "gnca/graph.hpp"
#include "gnca/rng.hpp"
#include "gnca/rules.hpp"
#include "gnca/tensor.hpp"

namespace gnca {

struct EntropyReport {
  double h_s = 0.0;
  double h_w = 0.0;
  std::vector<double> per_node_h_s;
  std::vector<double> per_node_h_w;
};

namespace detail {

inline void check_trajectory(std::span<const Tensor> traj, const char* op) {
  if (traj.empty()) throw std::invalid_argument(std::string(op) + ": empty trajectory");
  if (traj.size() < 2) throw std::invalid_argument(std::string(op) + ": trajectory needs at least two states");
  for (const Tensor& s : traj) {
    if (s.shape() != traj[0].shape()) throw ShapeError(std::string(op) + ": states change shape along the trajectory");
  }
}

inline std::vector<double> row_of(const Tensor& s, std::size_t i) {
  std::vector<double> r(s.cols());
  for (std::size_t k = 0; k < s.cols(); ++k) r[k] = s(i, k);
  return r;
}

inline double entropy_bits(const std::map<std::vector<double>, std::size_t>& counts, std::size_t total) {
  double h = 0.0;
  for (const auto& [key, c] : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log2(p);
  }
  return h == 0.0 ? 0.0 : h;  // avoid -0
}

}  // namespace detail

/// Per node: entropy of the empirical distribution of its states over time.
inline std::vector<double> shannon_entropy_per_node(std::span<const Tensor> traj) {
  detail::check_trajectory(traj, "shannon_entropy");
  const std::size_t n = traj[0].rows();
  std::vector<double> h(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::map<std::vector<double>, std::size_t> counts;
    for (const Tensor& s : traj) ++counts[detail::row_of(s, i)];
    h[i] = detail::entropy_bits(counts, traj.size());
  }
  return h;
}

/// Per node: entropy of the distribution of maximal constant-run lengths.
inline std::vector<double> word_entropy_per_node(std::span<const Tensor> traj) {
  detail::check_trajectory(traj, "word_entropy");
  const std::size_t n = traj[0].rows();
  std::vector<double> h(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::map<std::vector<double>, std::size_t> runs;  // keyed by {length}
    std::size_t total = 0, len = 1;
    std::vector<double> prev = detail::row_of(traj[0], i);
    for (std::size_t t = 1; t <= traj.size(); ++t) {
      std::vector<double> cur;
      if (t < traj.size()) cur = detail::row_of(traj[t], i);
      if (t < traj.size() && cur == prev) {
        ++len;
        continue;
      }
      ++runs[{static_cast<double>(len)}];
      ++total;
      len = 1;
      prev = std::move(cur);
    }
    h[i] = detail::entropy_bits(runs, total);
  }
  return h;
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double shannon_entropy(std::span<const Tensor> traj) { return mean_of(shannon_entropy_per_node(traj)); }
inline double word_entropy(std::span<const Tensor> traj) { return mean_of(word_entropy_per_node(traj)); }

inline EntropyReport entropy_report(std::span<const Tensor> traj) {
  EntropyReport r;
  r.per_node_h_s = shannon_entropy_per_node(traj);
  r.per_node_h_w = word_entropy_per_node(traj);
  r.h_s = mean_of(r.per_node_h_s);
  r.h_w = mean_of(r.per_node_h_w);
  return r;
}

// ---------------------------------------------------------------------------
// Sample entropy
// ---------------------------------------------------------------------------

/// Population standard deviation.
inline double population_std(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(x.size()));
}

/// Template-pair counts behind a SampEn value. Both lengths use the same
/// N − m templates; pairs i < j with Chebyshev distance strictly below r.
struct SampEnCounts {
  std::size_t templates = 0;
  std::uint64_t matches_m = 0;   // B
  std::uint64_t matches_m1 = 0;  // A
  double r = 0.0;
};

/// Pair counting with templates sorted by their first coordinate, so only
/// candidates within r on that coordinate are visited.
inline SampEnCounts sample_entropy_counts(std::span<const double> x, std::size_t m, double r) {
  if (m == 0) throw std::invalid_argument("sample_entropy: m must be positive");
  if (x.size() <= m + 1) throw std::invalid_argument("sample_entropy: series too short");
  SampEnCounts c;
  c.r = r;
  c.templates = x.size() - m;
  std::vector<std::size_t> order(c.templates);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  for (std::size_t p = 0; p < order.size(); ++p) {
    const std::size_t i = order[p];
    for (std::size_t q = p + 1; q < order.size(); ++q) {
      const std::size_t j = order[q];
      if (!(x[j] - x[i] < r)) break;
      bool match = true;
      for (std::size_t k = 1; k < m && match; ++k) match = std::abs(x[i + k] - x[j + k]) < r;
      if (!match) continue;
      ++c.matches_m;
      if (std::abs(x[i + m] - x[j + m]) < r) ++c.matches_m1;
    }
  }
  return c;
}

/// −ln(A/B). A constant series returns 0; A = 0 returns +inf.
inline double sample_entropy_from_counts(const SampEnCounts& c) {
  if (c.matches_m1 == 0) return std::numeric_limits<double>::infinity();
  const double v = -std::log(static_cast<double>(c.matches_m1) / static_cast<double>(c.matches_m));
  return v == 0.0 ? 0.0 : v;
}

inline double sample_entropy(std::span<const double> x, std::size_t m = 2, double r_factor = 0.2) {
  if (x.size() <= m + 1) throw std::invalid_argument("sample_entropy: series too short");
  const double sigma = population_std(x);
  if (sigma == 0.0) return 0.0;
  return sample_entropy_from_counts(sample_entropy_counts(x, m, r_factor * sigma));
}

// ---------------------------------------------------------------------------
// Correlation dimension (Grassberger–Procaccia)
// ---------------------------------------------------------------------------

struct CorrelationDimensionResult {
  double dimension = 0.0;
  std::size_t embedding = 0;
  std::uint64_t pairs = 0;
  std::vector<double> radii;                // log-spaced grid
  std::vector<std::uint64_t> counts;        // pairs with distance < r
  std::size_t fit_begin = 0, fit_end = 0;   // grid slice used for the fit
};

/// Delay embedding with lag 1: rows x[k..k+m).
inline std::vector<std::vector<double>> delay_embed(std::span<const double> x, std::size_t m) {
  if (m == 0 || x.size() < m) throw std::invalid_argument("delay_embed: series shorter than embedding");
  std::vector<std::vector<double>> out(x.size() - m + 1, std::vector<double>(m));
  for (std::size_t k = 0; k < out.size(); ++k) std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(k), m, out[k].begin());
  return out;
}

inline double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

/// Linear-interpolated quantile of sorted data, q in [0,1].
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Log-spaced radii between the 5th and 95th distance percentiles.
inline std::vector<double> correlation_radii(const std::vector<double>& sorted_distances, std::size_t grid) {
  const double lo = quantile_sorted(sorted_distances, 0.05);
  const double hi = quantile_sorted(sorted_distances, 0.95);
  if (!(lo > 0.0) || !(hi > lo)) throw DegenerateInputError("correlation_dimension: distances do not span a range");
  std::vector<double> r(grid);
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t k = 0; k < grid; ++k) r[k] = std::exp(a + (b - a) * static_cast<double>(k) / static_cast<double>(grid - 1));
  return r;
}

/// Least-squares slope of log C(r) against log r over the middle 60% of the grid.
inline void fit_correlation_dimension(CorrelationDimensionResult& res) {
  const std::size_t g = res.radii.size();
  res.fit_begin = static_cast<std::size_t>(std::floor(0.2 * static_cast<double>(g)));
  res.fit_end = static_cast<std::size_t>(std::ceil(0.8 * static_cast<double>(g)));
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t used = 0;
  for (std::size_t k = res.fit_begin; k < res.fit_end; ++k) {
    if (res.counts[k] == 0) continue;
    const double lx = std::log(res.radii[k]);
    const double ly = std::log(static_cast<double>(res.counts[k]) / static_cast<double>(res.pairs));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++used;
  }
  if (used < 2) throw DegenerateInputError("correlation_dimension: too few populated radii");
  const double u = static_cast<double>(used);
  const double denom = u * sxx - sx * sx;
  if (denom == 0.0) throw DegenerateInputError("correlation_dimension: flat radius grid");
  res.dimension = (u * sxy - sx * sy) / denom;
}

/// Sorts all pairwise distances once and counts by binary search.
inline CorrelationDimensionResult correlation_dimension_details(std::span<const double> x, std::size_t m = 10,
                                                                std::size_t grid = 20) {
  if (x.size() < 10 * m) throw std::invalid_argument("correlation_dimension: series too short for the embedding");
  if (population_std(x) == 0.0) throw DegenerateInputError("correlation_dimension: zero-variance series");
  if (grid < 5) throw std::invalid_argument("correlation_dimension: grid too small");
  const auto pts = delay_embed(x, m);
  std::vector<double> d;
  d.reserve(pts.size() * (pts.size() - 1) / 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) d.push_back(euclidean(pts[i], pts[j]));
  }
  std::sort(d.begin(), d.end());
  CorrelationDimensionResult res;
  res.embedding = m;
  res.pairs = d.size();
  res.radii = correlation_radii(d, grid);
  for (double r : res.radii) res.counts.push_back(static_cast<std::uint64_t>(std::lower_bound(d.begin(), d.end(), r) - d.begin()));
  fit_correlation_dimension(res);
  return res;
}

inline double correlation_dimension(std::span<const double> x, std::size_t m = 10) {
  return correlation_dimension_details(x, m).dimension;
}

// ---------------------------------------------------------------------------
// Boid trajectories: per boid, per position channel, then averaged.
// ---------------------------------------------------------------------------

struct SeriesComplexity {
  double sampen = 0.0;
  double corr_dim = 0.0;
  std::size_t m_sampen = 2;
  double r_factor = 0.2;
  std::size_t m_corr = 10;
};

inline std::vector<double> channel_series(std::span<const Tensor> traj, std::size_t node, std::size_t channel) {
  std::vector<double> x(traj.size());
  for (std::size_t t = 0; t < traj.size(); ++t) x[t] = traj[t](node, channel);
  return x;
}

inline SeriesComplexity boids_complexity(std::span<const Tensor> traj) {
  if (traj.empty()) throw std::invalid_argument("boids_complexity: empty trajectory");
  SeriesComplexity out;
  double se = 0.0, cd = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < traj[0].rows(); ++i) {
    for (std::size_t ch = 0; ch < 2; ++ch) {
      const auto x = channel_series(traj, i, ch);
      se += sample_entropy(x, out.m_sampen, out.r_factor);
      cd += correlation_dimension(x, out.m_corr);
      ++count;
    }
  }
  out.sampen = se / static_cast<double>(count);
  out.corr_dim = cd / static_cast<double>(count);
  return out;
}

// ---------------------------------------------------------------------------
// Fixed-target rollouts
// ---------------------------------------------------------------------------

inline std::vector<double> mse_curve(std::span<const Tensor> traj, const Tensor& target) {
  std::vector<double> out;
  out.reserve(traj.size());
  for (const Tensor& s : traj) {
    if (s.shape() != target.shape()) throw ShapeError("mse_curve: state and target shapes differ");
    double acc = 0.0;
    for (std::size_t k = 0; k < s.size(); ++k) acc += (s[k] - target[k]) * (s[k] - target[k]);
    out.push_back(acc / static_cast<double>(s.size()));
  }
  return out;
}

enum class AttractorKind { converge, periodic, neither };

inline std::string to_string(AttractorKind k) {
  switch (k) {
    case AttractorKind::converge: return "converge";
    case AttractorKind::periodic: return "periodic";
    case AttractorKind::neither: return "neither";
  }
  return "neither";
}

struct AttractorVerdict {
  AttractorKind kind = AttractorKind::neither;
  std::optional<std::size_t> period;
  double min_error = 0.0;
};

inline constexpr std::size_t kMinAttractorSeries = 20;

/// Biased autocorrelation of x (already centred) at lags 0..max_lag.
inline std::vector<double> autocorrelation(std::span<const double> x, std::size_t max_lag) {
  double denom = 0.0;
  for (double v : x) denom += v * v;
  std::vector<double> r(max_lag + 1, 0.0);
  if (denom == 0.0) return r;
  for (std::size_t k = 0; k <= max_lag && k < x.size(); ++k) {
    double s = 0.0;
    for (std::size_t t = 0; t + k < x.size(); ++t) s += x[t] * x[t + k];
    r[k] = s / denom;
  }
  return r;
}

/// Residuals of a least-squares line through (t, x_t).
inline std::vector<double> detrend(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  double st = 0, sx = 0, stt = 0, stx = 0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    const double tt = static_cast<double>(t);
    st += tt;
    sx += x[t];
    stt += tt * tt;
    stx += tt * x[t];
  }
  const double denom = n * stt - st * st;
  const double slope = denom == 0.0 ? 0.0 : (n * stx - st * sx) / denom;
  const double icept = (sx - slope * st) / n;
  std::vector<double> out(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) out[t] = x[t] - (icept + slope * static_cast<double>(t));
  return out;
}

/// converge: the last quarter stays within tol of the series minimum and
/// that minimum is itself at most tol. periodic: the detrended second half
/// has an autocorrelation local peak ≥ 0.5 at some lag ≥ 2.
inline AttractorVerdict classify_attractor(std::span<const double> errors, double tol, double peak_threshold = 0.5) {
  if (errors.size() < kMinAttractorSeries) throw std::invalid_argument("classify_attractor: series too short");
  if (!(tol >= 0.0)) throw std::invalid_argument("classify_attractor: tol must be non-negative");
  AttractorVerdict v;
  v.min_error = *std::min_element(errors.begin(), errors.end());
  const std::size_t quarter = (errors.size() + 3) / 4;
  const double tail_max = *std::max_element(errors.end() - static_cast<std::ptrdiff_t>(quarter), errors.end());
  if (tail_max - v.min_error <= tol && v.min_error <= tol) {
    v.kind = AttractorKind::converge;
    return v;
  }
  const auto tail = detrend(errors.subspan(errors.size() / 2));
  const auto r = autocorrelation(tail, tail.size() / 2);
  for (std::size_t k = 2; k + 1 < r.size(); ++k) {
    if (r[k] >= peak_threshold && r[k] > r[k - 1] && r[k] >= r[k + 1]) {
      v.kind = AttractorKind::periodic;
      v.period = k;
      return v;
    }
  }
  return v;
}

// ---------------------------------------------------------------------------
// Edge-of-chaos sweep
// ---------------------------------------------------------------------------

struct SweepPoint {
  double kappa = 0.0;
  double h_s = 0.0;
  double h_w = 0.0;
};

/// Every κ starts from the same seeded random binary state.
inline std::vector<SweepPoint> edge_of_chaos_sweep(const Graph& g, std::span<const double> kappas, std::size_t steps,
                                                   std::uint64_t seed) {
  if (steps == 0) throw std::invalid_argument("edge_of_chaos_sweep: steps must be positive");
  Rng rng(seed);
  const StateMatrix initial = random_binary_state(g.num_nodes(), rng);
  std::vector<SweepPoint> out;
  for (double kappa : kappas) {
    const VoronoiRule rule(kappa);
    std::vector<Tensor> traj{initial.values};
    StateMatrix s = initial;
    for (std::size_t t = 0; t < steps; ++t) {
      s = voronoi_step(rule, g, s);
      traj.push_back(s.values);
    }
    const EntropyReport e = entropy_report(traj);
    out.push_back({kappa, e.h_s, e.h_w});
  }
  return out;
}

/// lo:hi:step, inclusive of hi up to rounding.
inline std::vector<double> parse_range(const std::string& spec) {
  const auto a = spec.find(':');
  const auto b = spec.find(':', a == std::string::npos ? a : a + 1);
  if (a == std::string::npos || b == std::string::npos) throw ConfigError("range must look like lo:hi:step, got '" + spec + "'");
  double lo, hi, step;
  try {
    lo = std::stod(spec.substr(0, a));
    hi = std::stod(spec.substr(a + 1, b - a - 1));
    step = std::stod(spec.substr(b + 1));
  } catch (const std::exception&) {
    throw ConfigError("range must look like lo:hi:step, got '" + spec + "'");
  }
  if (!(step > 0.0) || hi < lo) throw ConfigError("range needs step > 0 and hi ≥ lo");
  const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  std::vector<double> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    // Round to 12 decimals so 0.05 + k·0.05 prints as the intended value.
    out[k] = std::round((lo + step * static_cast<double>(k)) * 1e12) / 1e12;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metric CSV rows: run_id,metric,value,params
// ---------------------------------------------------------------------------

struct MetricRow {
  std::string run_id;
  std::string metric;
  double value = 0.0;
  std::string params;  // "k=v;k=v"
};

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline void write_metric_csv(std::ostream& out, std::span<const MetricRow> rows) {
  out << "run_id,metric,value,params\n";
  for (const MetricRow& r : rows) {
    out << csv_field(r.run_id) << ',' << csv_field(r.metric) << ',' << format_double(r.value) << ',' << csv_field(r.params)
        << '\n';
  }
}

}  // namespace gnca
