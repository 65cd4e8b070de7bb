#pragma once

// Hypercube regions of the search graph: children, parent, tilings, cell
// classification for the hypothesis-test criterion, and the sphere-center
// identifiability check for repeated queries.

#include "common.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace sfsearch {

/// Axis-aligned hypercube given by its center and edge length.
struct Cube {
  Point center;
  double edge = 1.0;

  int dim() const { return static_cast<int>(center.size()); }

  /// Closed containment (border inclusive), with a relative slack for
  /// round-off in derived centers.
  bool contains(const Point& x, double slack = 0.0) const {
    const double half = 0.5 * edge + slack;
    return ((x - center).cwiseAbs().array() <= half).all();
  }

  bool contains(const Cube& other, double slack = 0.0) const {
    const double room = 0.5 * (edge - other.edge) + slack;
    return room >= 0.0 && ((other.center - center).cwiseAbs().array() <= room).all();
  }

  /// Positive-volume overlap.
  bool overlaps(const Cube& other) const {
    const double reach = 0.5 * (edge + other.edge);
    return ((other.center - center).cwiseAbs().array() < reach).all();
  }

  double volume() const { return std::pow(edge, dim()); }
};

/// A node of the search graph. depth counts net zoom-ins from the search
/// domain; backtracking above the domain makes it negative.
struct Region : Cube {
  int depth = 0;
};

inline Region make_region(Point center, double edge, int depth = 0) {
  require(edge > 0.0 && std::isfinite(edge), "region edge must be positive");
  require(all_finite(center), "region center must be finite and non-empty");
  Region r;
  r.center = std::move(center);
  r.edge = edge;
  r.depth = depth;
  return r;
}

/// Child center offsets along one axis, in units of the parent edge.
inline constexpr std::array<double, 5> kChildOffsets{-0.5, -0.25, 0.0, 0.25, 0.5};

inline std::size_t child_count(int d) {
  std::size_t n = 1;
  for (int i = 0; i < d; ++i) n *= 5;
  return n;
}

/// Per-axis offset indices of child `index` (axis 0 most significant).
inline std::vector<int> child_offset_indices(std::size_t index, int d) {
  std::vector<int> idx(static_cast<std::size_t>(d));
  for (int a = d - 1; a >= 0; --a) {
    idx[static_cast<std::size_t>(a)] = static_cast<int>(index % 5);
    index /= 5;
  }
  return idx;
}

inline Region child(const Region& x, std::size_t index) {
  const int d = x.dim();
  const auto idx = child_offset_indices(index, d);
  Region c;
  c.center = x.center;
  for (int a = 0; a < d; ++a)
    c.center[a] += x.edge * kChildOffsets[static_cast<std::size_t>(idx[static_cast<std::size_t>(a)])];
  c.edge = 0.5 * x.edge;
  c.depth = x.depth + 1;
  return c;
}

inline std::size_t central_child_index(int d) { return (child_count(d) - 1) / 2; }

/// The 5^d half-size children, built from quarter-edge tiles of the
/// 3/2-edge hypercube around x, in lexicographic offset order.
inline std::vector<Region> children(const Region& x) {
  const std::size_t n = child_count(x.dim());
  std::vector<Region> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) out.push_back(child(x, k));
  return out;
}

/// The 3/2-edge hypercube that contains every child of x.
inline Cube child_envelope(const Region& x) { return Cube{x.center, 1.5 * x.edge}; }

/// Backtracking target: same center, four times the edge, two levels shallower.
inline Region parent(const Region& x) {
  Region p;
  p.center = x.center;
  p.edge = 4.0 * x.edge;
  p.depth = x.depth - 2;
  return p;
}

/// Number of backtracks needed from x until the region contains xt.
inline int backtracks_to_target(const Region& x, const Point& xt) {
  const double reach = 2.0 * (xt - x.center).cwiseAbs().maxCoeff();
  int k = 0;
  double edge = x.edge;
  while (reach > edge) {
    edge *= 4.0;
    ++k;
  }
  return k;
}

// Tilings ---------------------------------------------------------------------

struct Tiling {
  Cube origin;
  double cell_edge = 0.0;
  int cells_per_axis = 0;
  std::vector<Cube> cells;
};

/// Number of cells per axis if cell_edge divides edge, otherwise 0.
inline int divisions(double edge, double cell_edge) {
  const double q = edge / cell_edge;
  const double k = std::round(q);
  if (k < 1.0 || std::abs(q - k) > 1e-9 * k) return 0;
  return static_cast<int>(k);
}

/// Largest cell edge not above max_cell_edge that divides edge exactly.
inline double divisible_cell_edge(double edge, double max_cell_edge) {
  require(edge > 0.0 && max_cell_edge > 0.0, "divisible_cell_edge: edges must be positive");
  return edge / std::ceil(edge / max_cell_edge * (1.0 - 1e-12));
}

/// Cells of edge cell_edge partitioning s, lexicographic in integer grid
/// coordinates (axis 0 most significant).
inline Tiling tile(const Cube& s, double cell_edge) {
  require(cell_edge > 0.0, "tile: cell edge must be positive");
  const int k = divisions(s.edge, cell_edge);
  if (k == 0)
    throw InvalidInput("tile: cell edge " + std::to_string(cell_edge) +
                       " does not divide region edge " + std::to_string(s.edge));
  const int d = s.dim();
  Tiling t;
  t.origin = s;
  t.cell_edge = s.edge / k;
  t.cells_per_axis = k;
  std::size_t total = 1;
  for (int a = 0; a < d; ++a) total *= static_cast<std::size_t>(k);
  t.cells.reserve(total);
  const Point corner = s.center.array() - 0.5 * s.edge;
  std::vector<int> idx(static_cast<std::size_t>(d), 0);
  for (std::size_t n = 0; n < total; ++n) {
    Cube c;
    c.center.resize(d);
    for (int a = 0; a < d; ++a)
      c.center[a] = corner[a] + (idx[static_cast<std::size_t>(a)] + 0.5) * t.cell_edge;
    c.edge = t.cell_edge;
    t.cells.push_back(std::move(c));
    for (int a = d - 1; a >= 0; --a) {
      if (++idx[static_cast<std::size_t>(a)] < k) break;
      idx[static_cast<std::size_t>(a)] = 0;
    }
  }
  return t;
}

// Cell classes ------------------------------------------------------------------

enum class CellClass { A, B, C };

inline char to_char(CellClass c) { return c == CellClass::A ? 'A' : c == CellClass::B ? 'B' : 'C'; }

/// A: target inside the (closed) cell. B: outside but closer than
/// unit_scale/16 to the cell center. C: everything else.
inline CellClass classify_cell(const Cube& cell, const Point& xt, double unit_scale) {
  if (cell.contains(xt)) return CellClass::A;
  if ((xt - cell.center).norm() < unit_scale / 16.0) return CellClass::B;
  return CellClass::C;
}

/// Radius of the uncertainty sphere for the canonical edge-2 region.
inline double uncertainty_radius(int d) {
  require(d > 1, "uncertainty_radius: requires d > 1");
  const double dd = d;
  return 1.0 + (dd + std::sqrt(dd * dd * dd + dd * dd - dd)) / (dd - 1.0);
}

/// Largest (3/2)/k strictly below 1/(8 r_u), for a unit current region.
inline double cell_edge_bound(int d) {
  const double bound = 1.0 / (8.0 * uncertainty_radius(d));
  return 1.5 / (std::floor(1.5 / bound) + 1.0);
}

// Identifiability -------------------------------------------------------------------

enum class SphereCenterFormula {
  /// (a - c^2 b) / (1 - c^2): center of the Apollonius sphere
  /// ||x-a|| / ||x-b|| = c.
  apollonius,
  /// (c b - a) / (1 - c) with the plain distance ratio c, as printed.
  printed,
};

/// Center of the sphere of points that share the target's answer
/// probability for query (a, b); nullopt when that locus is a hyperplane.
inline std::optional<Point> sphere_center(const QueryPair& query, const Point& xt,
                                          SphereCenterFormula formula = SphereCenterFormula::apollonius) {
  const Point& a = query.first;
  const Point& b = query.second;
  require(a.size() == xt.size() && b.size() == xt.size(), "sphere_center: dimension mismatch");
  const double da = (a - xt).norm();
  const double db = (b - xt).norm();
  if (da == 0.0 || db == 0.0) throw InvalidInput("sphere_center: target coincides with a query point");
  const double c = da / db;
  if (std::abs(1.0 - c) <= 1e-12) return std::nullopt;
  if (formula == SphereCenterFormula::printed) return Point((c * b - a) / (1.0 - c));
  const double c2 = c * c;
  return Point((a - c2 * b) / (1.0 - c2));
}

using QuerySet = std::vector<QueryPair>;

/// Numerical rank of the d x (L-1) matrix of sphere-center differences
/// (z_i - z_L); singular values above 1e-8 of the largest count.
inline int identifiability_rank(const QuerySet& qs, const Point& xt,
                                SphereCenterFormula formula = SphereCenterFormula::apollonius) {
  require(qs.size() >= 2, "identifiability_rank: need at least two queries");
  const auto d = xt.size();
  std::vector<Point> centers;
  centers.reserve(qs.size());
  for (std::size_t i = 0; i < qs.size(); ++i) {
    auto z = sphere_center(qs[i], xt, formula);
    if (!z) throw InvalidInput("identifiability_rank: query " + std::to_string(i) + " is degenerate");
    centers.push_back(std::move(*z));
  }
  Eigen::MatrixXd zmat(d, static_cast<Eigen::Index>(qs.size() - 1));
  for (std::size_t i = 0; i + 1 < qs.size(); ++i)
    zmat.col(static_cast<Eigen::Index>(i)) = centers[i] - centers.back();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(zmat);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv[0] == 0.0) return 0;
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > 1e-8 * sv[0]) ++rank;
  return rank;
}

}  // namespace sfsearch
