#pragma once

// Graph substrates: Delaunay triangulations, lattices, swiss-roll clouds,
// fixed-radius graphs and a JSON loader for external geometric graphs.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gnca/errors.hpp"
#include "gnca/rng.hpp"
#include "gnca/tensor.hpp"

namespace gnca {

/// Directed edge list sorted by (receiver, sender); edge (j, i) means j sends
/// to i, so the neighbourhood of i is { j | (j, i) ∈ E }.
class Graph {
 public:
  Graph() = default;

  /// Builds an undirected graph from unordered pairs, emitting both
  /// orientations. Duplicates are merged; self-loops and out-of-range
  /// endpoints are rejected.
  static Graph from_undirected(std::size_t n, std::span<const std::pair<std::size_t, std::size_t>> pairs,
                               std::optional<Tensor> coords = std::nullopt) {
    std::vector<std::pair<std::size_t, std::size_t>> directed;
    directed.reserve(2 * pairs.size());
    for (auto [a, b] : pairs) {
      directed.emplace_back(a, b);
      directed.emplace_back(b, a);
    }
    return from_directed(n, directed, std::move(coords));
  }

  /// Builds a graph from (sender, receiver) pairs.
  static Graph from_directed(std::size_t n, std::span<const std::pair<std::size_t, std::size_t>> edges,
                             std::optional<Tensor> coords = std::nullopt) {
    std::vector<std::pair<std::size_t, std::size_t>> by_receiver;
    by_receiver.reserve(edges.size());
    for (auto [s, r] : edges) {
      if (s >= n || r >= n) {
        throw IndexError("edge (" + std::to_string(s) + "," + std::to_string(r) + ") out of range for " +
                         std::to_string(n) + " nodes");
      }
      if (s == r) throw std::invalid_argument("self-loop at node " + std::to_string(s));
      by_receiver.emplace_back(r, s);
    }
    std::sort(by_receiver.begin(), by_receiver.end());
    by_receiver.erase(std::unique(by_receiver.begin(), by_receiver.end()), by_receiver.end());

    if (coords && coords->rows() != n) throw ShapeError("coords must have one row per node");
    Graph g;
    g.n_ = n;
    g.coords_ = std::move(coords);
    g.senders_.reserve(by_receiver.size());
    g.receivers_.reserve(by_receiver.size());
    g.offsets_.assign(n + 1, 0);
    for (auto [r, s] : by_receiver) {
      g.receivers_.push_back(r);
      g.senders_.push_back(s);
      ++g.offsets_[r + 1];
    }
    for (std::size_t i = 0; i < n; ++i) g.offsets_[i + 1] += g.offsets_[i];
    return g;
  }

  std::size_t num_nodes() const { return n_; }
  std::size_t num_edges() const { return senders_.size(); }
  std::size_t num_undirected_edges() const {
    std::size_t count = 0;
    for (std::size_t e = 0; e < senders_.size(); ++e) count += senders_[e] < receivers_[e];
    return count;
  }

  std::span<const std::size_t> senders() const { return senders_; }
  std::span<const std::size_t> receivers() const { return receivers_; }

  /// Senders into node i.
  std::span<const std::size_t> neighbors(std::size_t i) const {
    return std::span<const std::size_t>(senders_).subspan(offsets_[i], offsets_[i + 1] - offsets_[i]);
  }
  std::size_t degree(std::size_t i) const { return offsets_[i + 1] - offsets_[i]; }

  const std::optional<Tensor>& coords() const { return coords_; }
  void set_coords(Tensor c) {
    if (c.rows() != n_) throw ShapeError("coords must have one row per node");
    coords_ = std::move(c);
  }

  bool has_edge(std::size_t sender, std::size_t receiver) const {
    auto nb = neighbors(receiver);
    return std::binary_search(nb.begin(), nb.end(), sender);
  }

  bool is_symmetric() const {
    for (std::size_t e = 0; e < senders_.size(); ++e) {
      if (!has_edge(receivers_[e], senders_[e])) return false;
    }
    return true;
  }

  /// Unordered pairs (i < j) of a symmetric graph, sorted.
  std::vector<std::pair<std::size_t, std::size_t>> undirected_pairs() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t e = 0; e < senders_.size(); ++e) {
      if (senders_[e] < receivers_[e]) out.emplace_back(senders_[e], receivers_[e]);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  friend bool operator==(const Graph&, const Graph&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::size_t> senders_;
  std::vector<std::size_t> receivers_;
  std::vector<std::size_t> offsets_{0};
  std::optional<Tensor> coords_;
};

/// Block-diagonal union; node k of graphs[b] becomes node offset_b + k.
/// Coordinates are dropped.
inline Graph disjoint_union(std::span<const Graph* const> graphs) {
  std::size_t total = 0;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (const Graph* g : graphs) {
    for (std::size_t e = 0; e < g->num_edges(); ++e) {
      edges.emplace_back(total + g->senders()[e], total + g->receivers()[e]);
    }
    total += g->num_nodes();
  }
  return Graph::from_directed(total, edges);
}

/// `copies` disjoint copies of g, for batching several states on one graph.
inline Graph replicate(const Graph& g, std::size_t copies) {
  std::vector<const Graph*> ptrs(copies, &g);
  return disjoint_union(ptrs);
}

struct PointCloud {
  Tensor points;  // n×d

  std::size_t size() const { return points.rows(); }
  std::size_t dim() const { return points.cols(); }

  /// Per-dimension (min, max).
  std::vector<std::pair<double, double>> bounds() const {
    std::vector<std::pair<double, double>> b(dim(), {INFINITY, -INFINITY});
    for (std::size_t i = 0; i < size(); ++i) {
      for (std::size_t k = 0; k < dim(); ++k) {
        b[k].first = std::min(b[k].first, points(i, k));
        b[k].second = std::max(b[k].second, points(i, k));
      }
    }
    return b;
  }
};

/// n points uniform in [0,1]^2.
inline PointCloud uniform_points(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor pts = Tensor::zeros(n, 2);
  for (double& v : pts.data()) v = rng.uniform();
  return PointCloud{std::move(pts)};
}

// ---------------------------------------------------------------------------
// Delaunay triangulation (Bowyer-Watson with ghost triangles)
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr double kGeomTol = 1e-12;

inline double orient2d(const std::array<double, 2>& a, const std::array<double, 2>& b,
                       const std::array<double, 2>& c) {
  return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
}

/// Positive when q lies inside the circumcircle of the ccw triangle abc.
inline double incircle(const std::array<double, 2>& a, const std::array<double, 2>& b,
                       const std::array<double, 2>& c, const std::array<double, 2>& q) {
  const double adx = a[0] - q[0], ady = a[1] - q[1];
  const double bdx = b[0] - q[0], bdy = b[1] - q[1];
  const double cdx = c[0] - q[0], cdy = c[1] - q[1];
  return (adx * adx + ady * ady) * (bdx * cdy - cdx * bdy) + (bdx * bdx + bdy * bdy) * (cdx * ady - adx * cdy) +
         (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady);
}

}  // namespace detail

using Triangle = std::array<std::size_t, 3>;

/// Delaunay triangles (ccw vertex order) of a 2-D point set.
///
/// Hull edges are handled with ghost triangles anchored at a vertex at
/// infinity, so no super-triangle coordinates enter the predicates.
/// Cocircular ties are resolved by the strict incircle test, which yields
/// one valid Delaunay triangulation. Duplicate points and collinear hull
/// configurations throw DegenerateInputError.
inline std::vector<Triangle> delaunay_triangles(const PointCloud& cloud) {
  constexpr std::size_t kGhost = static_cast<std::size_t>(-1);
  const std::size_t n = cloud.size();
  if (cloud.dim() != 2) throw ShapeError("delaunay: points must be 2-D");
  if (n < 3) throw DegenerateInputError("delaunay: need at least 3 points");

  std::vector<std::array<double, 2>> p(n);
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = {cloud.points(i, 0), cloud.points(i, 1)};
    if (!std::isfinite(p[i][0]) || !std::isfinite(p[i][1])) throw DegenerateInputError("delaunay: non-finite point");
  }
  {
    std::vector<std::array<double, 2>> sorted = p;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw DegenerateInputError("delaunay: duplicate points");
    }
  }

  std::size_t third = n;
  for (std::size_t k = 2; k < n; ++k) {
    if (std::abs(detail::orient2d(p[0], p[1], p[k])) > detail::kGeomTol) {
      third = k;
      break;
    }
  }
  if (third == n) throw DegenerateInputError("delaunay: all points are collinear");

  struct Tri {
    std::array<std::size_t, 3> v;  // ccw; a ghost vertex is always v[2]
  };
  std::vector<Tri> tris;
  std::array<std::size_t, 3> first{0, 1, third};
  if (detail::orient2d(p[0], p[1], p[third]) < 0) std::swap(first[0], first[1]);
  tris.push_back({first});
  for (int e = 0; e < 3; ++e) {
    const std::size_t a = first[e], b = first[(e + 1) % 3];
    tris.push_back({{b, a, kGhost}});
  }

  auto in_conflict = [&](const Tri& t, const std::array<double, 2>& q) {
    if (t.v[2] == kGhost) {
      const auto& a = p[t.v[0]];
      const auto& b = p[t.v[1]];
      const double o = detail::orient2d(a, b, q);
      if (o > detail::kGeomTol) return true;
      if (o >= -detail::kGeomTol) throw DegenerateInputError("delaunay: collinear points on the convex hull");
      return false;
    }
    return detail::incircle(p[t.v[0]], p[t.v[1]], p[t.v[2]], q) > detail::kGeomTol;
  };

  std::vector<std::pair<std::size_t, std::size_t>> cavity_edges;
  std::vector<Tri> kept;
  for (std::size_t qi = 0; qi < n; ++qi) {
    if (qi == first[0] || qi == first[1] || qi == first[2]) continue;
    const auto& q = p[qi];
    cavity_edges.clear();
    kept.clear();
    for (const Tri& t : tris) {
      if (in_conflict(t, q)) {
        for (int e = 0; e < 3; ++e) cavity_edges.emplace_back(t.v[e], t.v[(e + 1) % 3]);
      } else {
        kept.push_back(t);
      }
    }
    if (cavity_edges.empty()) throw DegenerateInputError("delaunay: point not inserted (degenerate configuration)");
    std::sort(cavity_edges.begin(), cavity_edges.end());
    for (auto [u, v] : cavity_edges) {
      if (std::binary_search(cavity_edges.begin(), cavity_edges.end(), std::make_pair(v, u))) continue;
      Tri nt;
      if (u == kGhost) {
        nt.v = {v, qi, kGhost};
      } else if (v == kGhost) {
        nt.v = {qi, u, kGhost};
      } else {
        nt.v = {u, v, qi};
        if (detail::orient2d(p[u], p[v], q) <= detail::kGeomTol) {
          throw DegenerateInputError("delaunay: collinear points produce a zero-area triangle");
        }
      }
      kept.push_back(nt);
    }
    tris.swap(kept);
  }

  std::vector<Triangle> out;
  for (const Tri& t : tris) {
    if (t.v[2] != kGhost) out.push_back({t.v[0], t.v[1], t.v[2]});
  }
  return out;
}

/// Undirected edge set of the Delaunay triangulation, with the points as coords.
inline Graph delaunay(const PointCloud& cloud) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (const Triangle& t : delaunay_triangles(cloud)) {
    for (int e = 0; e < 3; ++e) {
      const std::size_t a = t[e], b = t[(e + 1) % 3];
      pairs.emplace_back(std::min(a, b), std::max(a, b));
    }
  }
  return Graph::from_undirected(cloud.size(), pairs, cloud.points);
}

/// Samples points uniformly in [0,1]^2 and triangulates them, resampling on
/// the (measure-zero) degenerate draws.
inline Graph random_delaunay(std::size_t n, std::uint64_t seed) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    try {
      return delaunay(uniform_points(n, derive_seed(seed, attempt)));
    } catch (const DegenerateInputError&) {
      if (attempt > 16) throw;
    }
  }
}

// ---------------------------------------------------------------------------
// Lattices and point clouds
// ---------------------------------------------------------------------------

/// 4-neighbour h×w lattice; node r*w + c has coordinates (c, r).
inline Graph grid2d(std::size_t h, std::size_t w) {
  if (h < 2 || w < 2) throw std::invalid_argument("grid2d: both sides must be at least 2");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  Tensor coords = Tensor::zeros(h * w, 2);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t i = r * w + c;
      coords(i, 0) = static_cast<double>(c);
      coords(i, 1) = static_cast<double>(r);
      if (c + 1 < w) pairs.emplace_back(i, i + 1);
      if (r + 1 < h) pairs.emplace_back(i, i + w);
    }
  }
  return Graph::from_undirected(h * w, pairs, std::move(coords));
}

/// Maps every column affinely onto [-1, 1]; constant columns map to 0.
inline Tensor rescale_to_unit_box(const Tensor& points) {
  Tensor out = points;
  for (std::size_t k = 0; k < points.cols(); ++k) {
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t i = 0; i < points.rows(); ++i) {
      lo = std::min(lo, points(i, k));
      hi = std::max(hi, points(i, k));
    }
    for (std::size_t i = 0; i < points.rows(); ++i) {
      out(i, k) = hi > lo ? 2.0 * (points(i, k) - lo) / (hi - lo) - 1.0 : 0.0;
    }
  }
  return out;
}

struct SwissRollSample {
  PointCloud raw;                 // (t cos t, y, t sin t) before rescaling
  std::vector<double> parameter;  // t per point
};

inline constexpr double kSwissRollTMin = 1.5 * std::numbers::pi;
inline constexpr double kSwissRollTMax = 4.5 * std::numbers::pi;
inline constexpr double kSwissRollHeight = 21.0;

inline SwissRollSample swiss_roll_sample(std::size_t n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("swiss_roll: n must be positive");
  Rng rng(seed);
  SwissRollSample s;
  s.raw.points = Tensor::zeros(n, 3);
  s.parameter.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = rng.uniform(kSwissRollTMin, kSwissRollTMax);
    const double y = rng.uniform(0.0, kSwissRollHeight);
    s.parameter[i] = t;
    s.raw.points(i, 0) = t * std::cos(t);
    s.raw.points(i, 1) = y;
    s.raw.points(i, 2) = t * std::sin(t);
  }
  return s;
}

/// Swiss-roll cloud rescaled to [-1, 1]^3.
inline PointCloud swiss_roll(std::size_t n, std::uint64_t seed) {
  return PointCloud{rescale_to_unit_box(swiss_roll_sample(n, seed).raw.points)};
}

/// Undirected edges between all pairs with squared distance < r², found by
/// uniform binning with cell side r.
inline Graph radius_graph(const PointCloud& cloud, double r) {
  if (!(r > 0.0)) throw std::invalid_argument("radius_graph: r must be positive");
  const std::size_t n = cloud.size();
  const std::size_t d = cloud.dim();
  if (d == 0 || d > 3) throw ShapeError("radius_graph: points must be 1-, 2- or 3-D");
  const double r2 = r * r;
  const auto bounds = cloud.bounds();

  auto cell_of = [&](std::size_t i, std::size_t k) {
    return static_cast<std::int64_t>(std::floor((cloud.points(i, k) - bounds[k].first) / r));
  };
  auto key_of = [](std::array<std::int64_t, 3> c) {
    return (static_cast<std::uint64_t>(c[0] & 0x1FFFFF) << 42) | (static_cast<std::uint64_t>(c[1] & 0x1FFFFF) << 21) |
           static_cast<std::uint64_t>(c[2] & 0x1FFFFF);
  };

  std::unordered_map<std::uint64_t, std::vector<std::size_t>> bins;
  std::vector<std::array<std::int64_t, 3>> cells(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::array<std::int64_t, 3> c{0, 0, 0};
    for (std::size_t k = 0; k < d; ++k) c[k] = cell_of(i, k);
    cells[i] = c;
    bins[key_of(c)].push_back(i);
  }

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  const int span1 = d >= 2 ? 1 : 0;
  const int span2 = d >= 3 ? 1 : 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (int dx = -1; dx <= 1; ++dx) {
      for (int dy = -span1; dy <= span1; ++dy) {
        for (int dz = -span2; dz <= span2; ++dz) {
          const std::array<std::int64_t, 3> c{cells[i][0] + dx, cells[i][1] + dy, cells[i][2] + dz};
          if (c[0] < 0 || c[1] < 0 || c[2] < 0) continue;
          auto it = bins.find(key_of(c));
          if (it == bins.end()) continue;
          for (std::size_t j : it->second) {
            if (j <= i) continue;
            double dist2 = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
              const double diff = cloud.points(i, k) - cloud.points(j, k);
              dist2 += diff * diff;
            }
            if (dist2 < r2) pairs.emplace_back(i, j);
          }
        }
      }
    }
  }
  return Graph::from_undirected(n, pairs, cloud.points);
}

// ---------------------------------------------------------------------------
// Geometric graph files
//   {"n": int, "dim": int, "coords": [[...], ...], "edges": [[i, j], ...]}
// Each undirected pair is listed once with i < j. A pair listed as j > i is
// accepted only when its mirror is also present.
// ---------------------------------------------------------------------------

inline Graph graph_from_json(const nlohmann::json& doc) {
  auto require = [&](bool ok, const std::string& what) {
    if (!ok) throw SchemaError("graph file: " + what);
  };
  require(doc.is_object(), "top level must be an object");
  for (const char* key : {"n", "dim", "coords", "edges"}) require(doc.contains(key), std::string("missing key '") + key + "'");
  require(doc["n"].is_number_unsigned() || (doc["n"].is_number_integer() && doc["n"].get<std::int64_t>() >= 0),
          "'n' must be a non-negative integer");
  require(doc["dim"].is_number_integer() && doc["dim"].get<std::int64_t>() > 0, "'dim' must be a positive integer");
  require(doc["coords"].is_array(), "'coords' must be an array");
  require(doc["edges"].is_array(), "'edges' must be an array");
  const auto n = doc["n"].get<std::size_t>();
  const auto dim = doc["dim"].get<std::size_t>();
  require(doc["coords"].size() == n, "'coords' must have n rows");

  Tensor coords = Tensor::zeros(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& row = doc["coords"][i];
    require(row.is_array() && row.size() == dim, "coordinate row " + std::to_string(i) + " must have dim entries");
    for (std::size_t k = 0; k < dim; ++k) {
      require(row[k].is_number(), "coordinates must be numbers");
      coords(i, k) = row[k].get<double>();
      require(std::isfinite(coords(i, k)), "coordinates must be finite");
    }
  }

  std::vector<std::pair<std::size_t, std::size_t>> listed;
  for (const auto& e : doc["edges"]) {
    require(e.is_array() && e.size() == 2 && e[0].is_number_integer() && e[1].is_number_integer(),
            "edges must be pairs of integers");
    const auto a = e[0].get<std::int64_t>();
    const auto b = e[1].get<std::int64_t>();
    if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= n || static_cast<std::size_t>(b) >= n) {
      throw IndexError("graph file: edge [" + std::to_string(a) + "," + std::to_string(b) + "] out of range for n=" +
                       std::to_string(n));
    }
    require(a != b, "self-loop at node " + std::to_string(a));
    listed.emplace_back(static_cast<std::size_t>(a), static_cast<std::size_t>(b));
  }
  std::vector<std::pair<std::size_t, std::size_t>> sorted = listed;
  std::sort(sorted.begin(), sorted.end());
  for (auto [a, b] : listed) {
    if (a > b && !std::binary_search(sorted.begin(), sorted.end(), std::make_pair(b, a))) {
      throw AsymmetricEdgeError("graph file: edge [" + std::to_string(a) + "," + std::to_string(b) +
                                "] has no mirror; list undirected pairs as [i, j] with i < j");
    }
  }
  return Graph::from_undirected(n, listed, std::move(coords));
}

inline nlohmann::json graph_to_json(const Graph& g) {
  nlohmann::json doc;
  doc["n"] = g.num_nodes();
  const std::size_t dim = g.coords() ? g.coords()->cols() : 0;
  doc["dim"] = dim;
  nlohmann::json coords = nlohmann::json::array();
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t k = 0; k < dim; ++k) row.push_back((*g.coords())(i, k));
    coords.push_back(std::move(row));
  }
  doc["coords"] = std::move(coords);
  nlohmann::json edges = nlohmann::json::array();
  for (auto [a, b] : g.undirected_pairs()) edges.push_back({a, b});
  doc["edges"] = std::move(edges);
  return doc;
}

inline Graph load_geometric_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open graph file " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("graph file " + path + ": " + e.what());
  }
  return graph_from_json(doc);
}

inline void save_geometric_graph(const Graph& g, const std::string& path) {
  if (!g.coords()) throw std::invalid_argument("save_geometric_graph: graph has no coordinates");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write graph file " + path);
  out << graph_to_json(g).dump() << '\n';
}

/// Graph from a short description: `grid2d:HxW`, `delaunay:N`,
/// `swissroll:N[:r]` (radius graph, default r = 0.3), or a graph file path.
inline Graph graph_from_spec(const std::string& spec, std::uint64_t seed) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);
  auto number = [&](const std::string& text) -> std::size_t {
    if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("bad graph spec '" + spec + "'");
    }
    return static_cast<std::size_t>(std::stoull(text));
  };
  try {
    if (kind == "grid2d") {
      const auto x = rest.find('x');
      if (x == std::string::npos) throw ConfigError("grid2d spec must look like grid2d:HxW");
      return grid2d(number(rest.substr(0, x)), number(rest.substr(x + 1)));
    }
    if (kind == "delaunay") return random_delaunay(number(rest), seed);
    if (kind == "swissroll") {
      const auto c2 = rest.find(':');
      const double r = c2 == std::string::npos ? 0.3 : std::stod(rest.substr(c2 + 1));
      return radius_graph(swiss_roll(number(rest.substr(0, c2)), seed), r);
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError("bad graph spec '" + spec + "': " + e.what());
  }
  if (!std::filesystem::exists(spec)) throw ConfigError("unknown graph '" + spec + "' (not a generator spec or an existing file)");
  return load_geometric_graph(spec);
}

}  // namespace gnca
