#pragma once

// Stage-based exponential search over a hypercube domain. Each stage starts
// from scratch at the current region, asks queries until a decision is ready,
// then zooms into one of the 5^d children or backtracks to the parent.
// Two decision criteria are provided: a grid posterior integrated over the
// children (integration) and a bank of one-tailed binomial tests over a fine
// tiling (hypothesis_test).

#include "common.hpp"
#include "geometry.hpp"
#include "oracle.hpp"
#include "stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace sfsearch {

// Answer sources ------------------------------------------------------------------

/// Anything that answers "is the first query point closer to the target?".
class AnswerSource {
 public:
  virtual ~AnswerSource() = default;
  virtual bool answer(const QueryPair& q) = 0;

  /// Number of "first" answers over n independent repetitions of q.
  virtual long answer_repeated(const QueryPair& q, long n) {
    long count = 0;
    for (long i = 0; i < n; ++i) count += answer(q) ? 1 : 0;
    return count;
  }
};

/// Bernoulli answers from the gamma-CKL model with a known target.
class SimulatedOracle : public AnswerSource {
 public:
  SimulatedOracle(OracleModel model, Point target, Rng rng)
      : model_(model), target_(std::move(target)), rng_(std::move(rng)) {}

  bool answer(const QueryPair& q) override {
    return sample_answer(model_, q.first, q.second, target_, rng_);
  }

  /// Repeated answers to one query are iid given the target, so the count is
  /// drawn from the binomial law directly.
  long answer_repeated(const QueryPair& q, long n) override {
    const double p = answer_probability(model_, q.first, q.second, target_);
    std::binomial_distribution<long> bin(n, p);
    return bin(rng_);
  }

  const Point& target() const { return target_; }
  const OracleModel& model() const { return model_; }

 private:
  OracleModel model_;
  Point target_;
  Rng rng_;
};

// Configuration -----------------------------------------------------------------------

enum class Criterion { integration, hypothesis_test };
enum class QueryPolicy { random_pair, canonical };
/// How an inconclusive hypothesis-test bounding box is resolved.
enum class OverlapRule {
  /// Backtrack unless the box overlaps the current region; then proceed to
  /// a child containing it.
  require_region_overlap,
  /// Proceed whenever some child contains the box.
  containment_only,
};

struct SearchConfig {
  int dim = 2;
  double gamma = 2.0;
  Region omega = make_region(Point::Constant(2, 0.5), 1.0);
  long budget = 1000;
  Criterion criterion = Criterion::integration;
  double alpha = 0.95;
  double delta_hat = 0.05;
  int grid_resolution = 0;  // 0: 32 per axis for d <= 3, 12 above
  int max_queries_per_stage = 400;
  /// Prior mass placed on the current region at the start of each stage;
  /// the rest is spread over the remainder of the parent extent.
  double region_prior = 0.5;
  std::uint64_t seed = 0;
  QueryPolicy query_policy = QueryPolicy::random_pair;
  OverlapRule overlap_rule = OverlapRule::require_region_overlap;

  int resolution() const {
    if (grid_resolution > 0) return grid_resolution;
    return dim <= 3 ? 32 : 12;
  }

  void validate() const {
    require(dim >= 1, "config: dim must be >= 1");
    require(std::isfinite(gamma) && gamma > 0.0, "config: gamma must be positive");
    require(omega.dim() == dim, "config: omega center dimension must equal dim");
    require(omega.edge > 0.0, "config: omega edge must be positive");
    require(budget >= 0, "config: budget must be non-negative");
    require(alpha > 0.5 && alpha < 1.0, "config: alpha must lie in (0.5, 1)");
    require(delta_hat > 0.0 && delta_hat < 1.0, "config: delta_hat must lie in (0, 1)");
    require(grid_resolution >= 0, "config: grid_resolution must be non-negative");
    require(max_queries_per_stage >= 1, "config: max_queries_per_stage must be >= 1");
    require(region_prior > 0.0 && region_prior < 1.0, "config: region_prior must lie in (0, 1)");
    if (criterion == Criterion::hypothesis_test) require(dim >= 2, "config: hypothesis test needs dim >= 2");
  }
};

// Grid posterior ---------------------------------------------------------------------------

/// Discretized posterior over a cube, one weight per grid cell, evaluated at
/// cell centers. Weights are kept in log space and renormalized on every
/// update; weights() always sums to one.
class GridBelief {
 public:
  GridBelief(Cube extent, int resolution) : extent_(std::move(extent)), res_(resolution) {
    require(res_ >= 1, "GridBelief: resolution must be >= 1");
    const int d = extent_.dim();
    std::size_t n = 1;
    for (int a = 0; a < d; ++a) n *= static_cast<std::size_t>(res_);
    centers_.resize(d, static_cast<Eigen::Index>(n));
    const double step = extent_.edge / res_;
    std::vector<int> idx(static_cast<std::size_t>(d), 0);
    for (std::size_t k = 0; k < n; ++k) {
      for (int a = 0; a < d; ++a)
        centers_(a, static_cast<Eigen::Index>(k)) =
            extent_.center[a] - 0.5 * extent_.edge + (idx[static_cast<std::size_t>(a)] + 0.5) * step;
      for (int a = d - 1; a >= 0; --a) {
        if (++idx[static_cast<std::size_t>(a)] < res_) break;
        idx[static_cast<std::size_t>(a)] = 0;
      }
    }
    log_w_.assign(n, 0.0);
    w_.assign(n, 1.0 / static_cast<double>(n));
  }

  const Cube& extent() const { return extent_; }
  int resolution() const { return res_; }
  int dim() const { return extent_.dim(); }
  std::size_t size() const { return w_.size(); }
  double cell_edge() const { return extent_.edge / res_; }
  const std::vector<double>& weights() const { return w_; }
  const std::vector<double>& log_weights() const { return log_w_; }
  Point cell_center(std::size_t k) const { return centers_.col(static_cast<Eigen::Index>(k)); }

  /// Multiplies every weight by the likelihood of `first_closer` for query q
  /// at the cell center, then renormalizes.
  void update(const QueryPair& q, bool first_closer, double gamma) {
    require(q.first.size() == dim() && q.second.size() == dim(), "GridBelief::update: dimension mismatch");
    const Eigen::ArrayXd da = (centers_.colwise() - q.first).colwise().norm().array();
    const Eigen::ArrayXd db = (centers_.colwise() - q.second).colwise().norm().array();
    for (std::size_t k = 0; k < w_.size(); ++k)
      log_w_[k] += log_choice_likelihood(da[static_cast<Eigen::Index>(k)], db[static_cast<Eigen::Index>(k)],
                                         gamma, first_closer);
    renormalize();
  }

  /// Update for `n` repetitions of q of which `first_count` preferred q.first.
  void update_counts(const QueryPair& q, long first_count, long n, double gamma) {
    require(q.first.size() == dim() && q.second.size() == dim(), "GridBelief::update_counts: dimension mismatch");
    require(n >= 0 && first_count >= 0 && first_count <= n, "GridBelief::update_counts: invalid counts");
    const Eigen::ArrayXd da = (centers_.colwise() - q.first).colwise().norm().array();
    const Eigen::ArrayXd db = (centers_.colwise() - q.second).colwise().norm().array();
    const auto k1 = static_cast<double>(first_count), k2 = static_cast<double>(n - first_count);
    for (std::size_t k = 0; k < w_.size(); ++k) {
      const auto e = static_cast<Eigen::Index>(k);
      if (k1 > 0) log_w_[k] += k1 * log_choice_likelihood(da[e], db[e], gamma, true);
      if (k2 > 0) log_w_[k] += k2 * log_choice_likelihood(da[e], db[e], gamma, false);
    }
    renormalize();
  }

  /// Replaces the log weights (used when restoring a snapshot).
  void set_log_weights(std::vector<double> lw) {
    require(lw.size() == w_.size(), "GridBelief: log weight count mismatch");
    log_w_ = std::move(lw);
    renormalize();
  }

  /// Total weight of cells whose centers lie in `box` (closed).
  double mass_in(const Cube& box) const {
    const double slack = 1e-9 * cell_edge();
    double m = 0.0;
    for (std::size_t k = 0; k < w_.size(); ++k)
      if (box.contains(Point(centers_.col(static_cast<Eigen::Index>(k))), slack)) m += w_[k];
    return m;
  }

  /// Index of the heaviest cell (lowest index on ties).
  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(w_.begin(), w_.end()) - w_.begin());
  }

  /// log P(answer | target at distances da, db) under gamma-CKL.
  static double log_choice_likelihood(double da, double db, double gamma, bool first_closer) {
    if (da == db) return std::log(0.5);
    // s = gamma * log(da/db); log P(first) = -softplus(s).
    const double s = gamma * (std::log(da) - std::log(db));
    const double t = first_closer ? s : -s;
    if (t == std::numeric_limits<double>::infinity()) return -std::numeric_limits<double>::infinity();
    if (t == -std::numeric_limits<double>::infinity()) return 0.0;
    return t > 0.0 ? -(t + std::log1p(std::exp(-t))) : -std::log1p(std::exp(t));
  }

 private:
  void renormalize() {
    const double mx = *std::max_element(log_w_.begin(), log_w_.end());
    if (!std::isfinite(mx)) throw DegenerateBelief("grid posterior has no remaining mass");
    double total = 0.0;
    for (std::size_t k = 0; k < w_.size(); ++k) {
      w_[k] = std::exp(log_w_[k] - mx);
      total += w_[k];
    }
    for (std::size_t k = 0; k < w_.size(); ++k) {
      w_[k] /= total;
      log_w_[k] -= mx;
    }
  }

  Cube extent_;
  int res_;
  Eigen::MatrixXd centers_;
  std::vector<double> log_w_;
  std::vector<double> w_;
};

/// Fresh stage belief over the parent extent of `region`: `region_prior` of
/// the mass spread evenly over cells centered in the region, the rest evenly
/// over the other cells.
inline GridBelief stage_belief(const Region& region, int resolution, double region_prior) {
  GridBelief g(parent(region), resolution);
  const double slack = 1e-9 * g.cell_edge();
  std::vector<bool> inside(g.size());
  std::size_t n_in = 0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    inside[k] = region.contains(g.cell_center(k), slack);
    n_in += inside[k] ? 1 : 0;
  }
  const std::size_t n_out = g.size() - n_in;
  if (n_in == 0 || n_out == 0) return g;
  const double lin = std::log(region_prior / static_cast<double>(n_in));
  const double lout = std::log((1.0 - region_prior) / static_cast<double>(n_out));
  std::vector<double> lw(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) lw[k] = inside[k] ? lin : lout;
  g.set_log_weights(std::move(lw));
  return g;
}

/// Pure form of GridBelief::update.
inline GridBelief update_belief(GridBelief belief, const QueryPair& q, bool first_closer,
                                const OracleModel& model) {
  belief.update(q, first_closer, model.gamma());
  return belief;
}

// Integration criterion --------------------------------------------------------------------------

enum class DecisionKind { proceed, backtrack, undecided };

struct Decision {
  DecisionKind kind = DecisionKind::undecided;
  std::size_t child = 0;  // meaningful for proceed
  double mass = 0.0;      // mass of the chosen child, or of the region
};

namespace detail {

/// Summed-volume table over the belief grid for O(2^d) box sums.
class GridPrefix {
 public:
  explicit GridPrefix(const GridBelief& b) : d_(b.dim()), res_(b.resolution()) {
    stride_.assign(static_cast<std::size_t>(d_), 1);
    std::size_t n = 1;
    for (int a = d_ - 1; a >= 0; --a) {
      stride_[static_cast<std::size_t>(a)] = n;
      n *= static_cast<std::size_t>(res_ + 1);
    }
    table_.assign(n, 0.0);
    // Scatter cell weights at (i+1) offsets, then cumulate along each axis.
    const auto& w = b.weights();
    std::vector<int> idx(static_cast<std::size_t>(d_), 0);
    for (std::size_t k = 0; k < w.size(); ++k) {
      std::size_t off = 0;
      for (int a = 0; a < d_; ++a) off += static_cast<std::size_t>(idx[static_cast<std::size_t>(a)] + 1) * stride_[static_cast<std::size_t>(a)];
      table_[off] = w[k];
      for (int a = d_ - 1; a >= 0; --a) {
        if (++idx[static_cast<std::size_t>(a)] < res_) break;
        idx[static_cast<std::size_t>(a)] = 0;
      }
    }
    for (int a = 0; a < d_; ++a) {
      const std::size_t s = stride_[static_cast<std::size_t>(a)];
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t coord = (k / s) % static_cast<std::size_t>(res_ + 1);
        if (coord > 0) table_[k] += table_[k - s];
      }
    }
  }

  /// Sum over cells with index lo[a] <= i_a < hi[a] on every axis.
  double box_sum(const std::vector<int>& lo, const std::vector<int>& hi) const {
    for (int a = 0; a < d_; ++a)
      if (hi[static_cast<std::size_t>(a)] <= lo[static_cast<std::size_t>(a)]) return 0.0;
    double total = 0.0;
    const std::size_t corners = std::size_t{1} << d_;
    for (std::size_t mask = 0; mask < corners; ++mask) {
      std::size_t off = 0;
      int sign = 1;
      for (int a = 0; a < d_; ++a) {
        const bool low = (mask >> a) & 1U;
        const int i = low ? lo[static_cast<std::size_t>(a)] : hi[static_cast<std::size_t>(a)];
        if (low) sign = -sign;
        off += static_cast<std::size_t>(i) * stride_[static_cast<std::size_t>(a)];
      }
      total += sign * table_[off];
    }
    return total;
  }

 private:
  int d_;
  int res_;
  std::vector<std::size_t> stride_;
  std::vector<double> table_;
};

/// Index range [lo, hi) of grid cells whose centers lie in [a, b] on one axis.
inline std::pair<int, int> center_range(const GridBelief& g, int axis, double a, double b) {
  const double origin = g.extent().center[axis] - 0.5 * g.extent().edge;
  const double step = g.cell_edge();
  const double eps = 1e-9;
  // center_i = origin + (i + 0.5) step
  const int lo = static_cast<int>(std::ceil((a - origin) / step - 0.5 - eps));
  const int hi = static_cast<int>(std::floor((b - origin) / step - 0.5 + eps)) + 1;
  return {std::clamp(lo, 0, g.resolution()), std::clamp(hi, 0, g.resolution())};
}

inline double cube_mass(const GridPrefix& prefix, const GridBelief& g, const Cube& c) {
  const int d = g.dim();
  std::vector<int> lo(static_cast<std::size_t>(d)), hi(static_cast<std::size_t>(d));
  for (int a = 0; a < d; ++a) {
    const auto [l, h] = center_range(g, a, c.center[a] - 0.5 * c.edge, c.center[a] + 0.5 * c.edge);
    lo[static_cast<std::size_t>(a)] = l;
    hi[static_cast<std::size_t>(a)] = h;
  }
  return prefix.box_sum(lo, hi);
}

}  // namespace detail

/// Proceed to the heaviest child whose posterior mass exceeds alpha (lowest
/// index on ties); backtrack if the region holds less than 1 - alpha;
/// otherwise undecided.
inline Decision integration_decision(const GridBelief& belief, const Region& region, double alpha) {
  require(region.dim() == belief.dim(), "integration_decision: dimension mismatch");
  const detail::GridPrefix prefix(belief);
  Decision best;
  const std::size_t n = child_count(region.dim());
  for (std::size_t k = 0; k < n; ++k) {
    const double m = detail::cube_mass(prefix, belief, child(region, k));
    if (m > alpha && (best.kind != DecisionKind::proceed || m > best.mass)) {
      best.kind = DecisionKind::proceed;
      best.child = k;
      best.mass = m;
    }
  }
  if (best.kind == DecisionKind::proceed) return best;
  const double region_mass = detail::cube_mass(prefix, belief, region);
  if (region_mass < 1.0 - alpha) return {DecisionKind::backtrack, 0, region_mass};
  return {DecisionKind::undecided, 0, region_mass};
}

// Query selection -----------------------------------------------------------------------------

/// Canonical query scaled to the region: (c, c + (1+d)(L/2) s e_axis), the
/// axis cycling with the query index and the sign flipping every d queries.
inline QueryPair canonical_query(const Region& region, long query_index) {
  const int d = region.dim();
  const int axis = static_cast<int>(query_index % d);
  const double sign = ((query_index / d) % 2 == 0) ? 1.0 : -1.0;
  QueryPair q{region.center, region.center};
  q.second[axis] += sign * (1.0 + d) * 0.5 * region.edge;
  return q;
}

/// Two independent uniform points in the 3/2-edge cube around the region.
inline QueryPair random_pair_query(const Region& region, Rng& rng) {
  const int d = region.dim();
  const double half = 0.75 * region.edge;
  QueryPair q{region.center, region.center};
  for (int a = 0; a < d; ++a) q.first[a] += (2.0 * uniform01(rng) - 1.0) * half;
  for (int a = 0; a < d; ++a) q.second[a] += (2.0 * uniform01(rng) - 1.0) * half;
  return q;
}

inline QueryPair select_stage_query(const Region& region, long query_index, QueryPolicy policy, Rng& rng) {
  return policy == QueryPolicy::canonical ? canonical_query(region, query_index)
                                          : random_pair_query(region, rng);
}

// Hypothesis-test criterion ----------------------------------------------------------------------

/// Repetition count and acceptance threshold for the binomial test on the
/// query (0, (1+d) e): accept "target in the edge-2 region" iff at least
/// accept_threshold of n_repeats answers prefer 0.
struct HypTestPlan {
  int dim = 2;
  double p_region = 0.0;   // P[0 preferred | target at the corner 1]
  double p_far = 0.0;      // P[0 preferred | target at -(r_hat + 1) e]
  double r_hat = 0.0;
  double delta = 0.0;
  long n_repeats = 0;
  long accept_threshold = 0;
  double false_reject = 0.0;  // P[Bin(n, p_region) < threshold]
  double false_accept = 0.0;  // P[Bin(n, p_far) >= threshold]
};

inline double hyptest_r_hat(int d) {
  require(d > 1, "hypothesis test requires d > 1");
  const double dd = d;
  return (dd + std::sqrt(dd * dd * dd + dd * dd - dd)) / (dd - 1.0);
}

inline HypTestPlan hyptest_plan(int d, const OracleModel& model, double delta) {
  require(d >= 2, "hyptest_plan: requires d >= 2");
  require(model.dim() == d, "hyptest_plan: model dimension mismatch");
  require(delta > 0.0 && delta < 1.0, "hyptest_plan: delta must lie in (0,1)");
  HypTestPlan plan;
  plan.dim = d;
  plan.delta = delta;
  plan.r_hat = hyptest_r_hat(d);
  const Point origin = Point::Zero(d);
  Point xq = Point::Zero(d);
  xq[0] = 1.0 + d;
  const Point corner = Point::Ones(d);
  Point far = Point::Zero(d);
  far[0] = -(plan.r_hat + 1.0);
  plan.p_region = answer_probability(model, origin, xq, corner);
  plan.p_far = answer_probability(model, origin, xq, far);
  if (!(plan.p_region > plan.p_far))
    throw InternalInvariant("hyptest_plan: p_X <= p_F, the test cannot separate the hypotheses");

  // Smallest threshold with false-accept <= delta, then check false-reject.
  const auto threshold_for = [&](long n) {
    long lo = 0, hi = n + 1;
    while (lo < hi) {
      const long mid = (lo + hi) / 2;
      if (stats::binomial_upper_tail(static_cast<int>(n), plan.p_far, static_cast<int>(mid)) <= delta) hi = mid;
      else lo = mid + 1;
    }
    return lo;
  };
  const auto feasible = [&](long n, long& t) {
    t = threshold_for(n);
    return stats::binomial_lower_tail(static_cast<int>(n), plan.p_region, static_cast<int>(t)) <= delta;
  };
  long t = 0;
  long hi = 1;
  while (!feasible(hi, t)) {
    hi *= 2;
    if (hi > (1L << 30)) throw InternalInvariant("hyptest_plan: repetition count overflow");
  }
  long lo = hi / 2 + 1;
  while (lo < hi) {
    const long mid = (lo + hi) / 2;
    long tm = 0;
    if (feasible(mid, tm)) hi = mid;
    else lo = mid + 1;
  }
  feasible(hi, t);
  plan.n_repeats = hi;
  plan.accept_threshold = t;
  plan.false_reject = stats::binomial_lower_tail(static_cast<int>(hi), plan.p_region, static_cast<int>(t));
  plan.false_accept = stats::binomial_upper_tail(static_cast<int>(hi), plan.p_far, static_cast<int>(t));
  return plan;
}

/// The canonical test query moved onto a cell of edge `cell_edge`.
inline QueryPair cell_test_query(const Cube& cell) {
  const int d = cell.dim();
  QueryPair q{cell.center, cell.center};
  q.second[0] += (1.0 + d) * 0.5 * cell.edge;
  return q;
}

/// Per-test error so that K independent tests are all correct w.p. 1 - delta_hat.
inline double per_test_delta(double delta_hat, std::size_t k) {
  return -std::expm1(std::log1p(-delta_hat) / static_cast<double>(k));
}

struct HypTestOutcome {
  Decision decision;
  long queries = 0;
  std::size_t cells = 0;
  std::size_t kept_cells = 0;
  Point box_lo, box_hi;  // bounding box of non-rejected cells (if any)
};

/// Tiling of the 3/2-edge envelope around `region` used by the test bank.
inline Tiling hyptest_tiling(const Region& region) {
  const int d = region.dim();
  const Cube s = child_envelope(region);
  return tile(s, cell_edge_bound(d) * region.edge);
}

inline long hyptest_stage_cost(const Region& region, const HypTestPlan& plan) {
  const int k = divisions(1.5 * region.edge, cell_edge_bound(region.dim()) * region.edge);
  long cells = 1;
  for (int a = 0; a < region.dim(); ++a) cells *= k;
  return cells * plan.n_repeats;
}

/// Runs the test bank for `region` with the given plan and decides.
inline HypTestOutcome hyptest_decision(const Region& region, const HypTestPlan& plan, AnswerSource& oracle,
                                       OverlapRule rule = OverlapRule::require_region_overlap) {
  const int d = region.dim();
  require(d >= 2 && plan.dim == d, "hyptest_decision: plan dimension mismatch");
  const Tiling tiling = hyptest_tiling(region);
  HypTestOutcome out;
  out.cells = tiling.cells.size();
  out.box_lo = Point::Constant(d, std::numeric_limits<double>::infinity());
  out.box_hi = Point::Constant(d, -std::numeric_limits<double>::infinity());
  for (const Cube& cell : tiling.cells) {
    const long k = oracle.answer_repeated(cell_test_query(cell), plan.n_repeats);
    out.queries += plan.n_repeats;
    if (k >= plan.accept_threshold) {
      ++out.kept_cells;
      out.box_lo = out.box_lo.cwiseMin(Point(cell.center.array() - 0.5 * cell.edge));
      out.box_hi = out.box_hi.cwiseMax(Point(cell.center.array() + 0.5 * cell.edge));
    }
  }
  out.decision.kind = DecisionKind::backtrack;
  if (out.kept_cells == 0) return out;

  const Point reg_lo = region.center.array() - 0.5 * region.edge;
  const Point reg_hi = region.center.array() + 0.5 * region.edge;
  const bool overlaps = ((out.box_lo.array() < reg_hi.array()) && (out.box_hi.array() > reg_lo.array())).all();
  if (rule == OverlapRule::require_region_overlap && !overlaps) return out;

  const double slack = 1e-9 * region.edge;
  const std::size_t n = child_count(d);
  for (std::size_t k = 0; k < n; ++k) {
    const Region c = child(region, k);
    const Point lo = c.center.array() - 0.5 * c.edge - slack;
    const Point hi = c.center.array() + 0.5 * c.edge + slack;
    if ((lo.array() <= out.box_lo.array()).all() && (out.box_hi.array() <= hi.array()).all()) {
      out.decision = {DecisionKind::proceed, k, 0.0};
      return out;
    }
  }
  return out;
}

inline HypTestOutcome hyptest_decision(const Region& region, const OracleModel& model, AnswerSource& oracle,
                                       double delta_hat,
                                       OverlapRule rule = OverlapRule::require_region_overlap) {
  const int d = region.dim();
  require(d >= 2, "hyptest_decision: requires d >= 2");
  const Tiling probe = hyptest_tiling(region);
  const HypTestPlan plan = hyptest_plan(d, model, per_test_delta(delta_hat, probe.cells.size()));
  return hyptest_decision(region, plan, oracle, rule);
}

// Stage loop ------------------------------------------------------------------------------------

struct StageRecord {
  int stage = 0;  // 1-based
  Region before;
  Region after;
  DecisionKind decision = DecisionKind::backtrack;
  long child_index = -1;  // -1 for backtrack
  long queries_in_stage = 0;
  long cumulative_queries = 0;
  bool forced = false;  // backtrack forced by the per-stage query cap
};

struct SearchResult {
  Region final_region;
  std::vector<StageRecord> log;
  long queries = 0;
};

inline Region apply_decision(const Region& region, const Decision& dec) {
  return dec.kind == DecisionKind::proceed ? child(region, dec.child) : parent(region);
}

/// Integration-criterion search as an explicit state machine: read
/// pending(), obtain an answer, call submit(). Used both by run_search and
/// by interactive sessions.
class IntegrationSearch {
 public:
  explicit IntegrationSearch(SearchConfig config)
      : config_(std::move(config)),
        model_(config_.gamma, config_.dim),
        region_(config_.omega),
        belief_(stage_belief(config_.omega, config_.resolution(), config_.region_prior)),
        rng_(substream(config_.seed, 0)) {
    config_.validate();
    require(config_.criterion == Criterion::integration, "IntegrationSearch requires the integration criterion");
    if (!finished()) pending_ = select_stage_query(region_, stage_queries_, config_.query_policy, rng_);
  }

  const SearchConfig& config() const { return config_; }
  const Region& region() const { return region_; }
  const GridBelief& belief() const { return belief_; }
  const std::vector<StageRecord>& log() const { return log_; }
  long queries() const { return queries_; }
  long stage_queries() const { return stage_queries_; }
  bool finished() const { return queries_ >= config_.budget; }

  const QueryPair& pending() const {
    if (finished()) throw Exhausted("query budget exhausted");
    return pending_;
  }

  /// Applies the answer to the pending query; returns the stage record when
  /// the answer completed a stage.
  std::optional<StageRecord> submit(bool first_closer) {
    if (finished()) throw Exhausted("query budget exhausted");
    belief_.update(pending_, first_closer, model_.gamma());
    ++queries_;
    ++stage_queries_;
    std::optional<StageRecord> rec;
    Decision dec = integration_decision(belief_, region_, config_.alpha);
    bool forced = false;
    if (dec.kind == DecisionKind::undecided && stage_queries_ >= config_.max_queries_per_stage) {
      dec = {DecisionKind::backtrack, 0, dec.mass};
      forced = true;
    }
    if (dec.kind != DecisionKind::undecided) {
      StageRecord r;
      r.stage = static_cast<int>(log_.size()) + 1;
      r.before = region_;
      r.after = apply_decision(region_, dec);
      r.decision = dec.kind;
      r.child_index = dec.kind == DecisionKind::proceed ? static_cast<long>(dec.child) : -1;
      r.queries_in_stage = stage_queries_;
      r.cumulative_queries = queries_;
      r.forced = forced;
      log_.push_back(r);
      rec = r;
      region_ = r.after;
      belief_ = stage_belief(region_, config_.resolution(), config_.region_prior);
      stage_queries_ = 0;
    }
    if (!finished()) pending_ = select_stage_query(region_, stage_queries_, config_.query_policy, rng_);
    return rec;
  }

  // Snapshot support: everything needed to continue identically.
  std::string rng_state() const {
    std::ostringstream os;
    os << rng_;
    return os.str();
  }

  static IntegrationSearch restore(SearchConfig config, Region region, std::vector<double> log_weights,
                                   long queries, long stage_queries, std::vector<StageRecord> log,
                                   const std::string& rng_state, QueryPair pending) {
    IntegrationSearch s(std::move(config));
    s.region_ = std::move(region);
    s.belief_ = GridBelief(parent(s.region_), s.config_.resolution());
    s.belief_.set_log_weights(std::move(log_weights));
    s.queries_ = queries;
    s.stage_queries_ = stage_queries;
    s.log_ = std::move(log);
    std::istringstream is(rng_state);
    is >> s.rng_;
    s.pending_ = std::move(pending);
    return s;
  }

 private:
  SearchConfig config_;
  OracleModel model_;
  Region region_;
  GridBelief belief_;
  Rng rng_;
  QueryPair pending_;
  long queries_ = 0;
  long stage_queries_ = 0;
  std::vector<StageRecord> log_;
};

/// Runs the stage loop until the query budget is spent. Stages that cannot
/// complete within the budget are not recorded, so the last record never
/// exceeds the budget.
inline SearchResult run_search(const SearchConfig& config, AnswerSource& oracle) {
  config.validate();
  SearchResult res;
  if (config.criterion == Criterion::integration) {
    IntegrationSearch search(config);
    while (!search.finished()) search.submit(oracle.answer(search.pending()));
    res.final_region = search.region();
    res.log = search.log();
    res.queries = search.queries();
    return res;
  }

  const OracleModel model(config.gamma, config.dim);
  const Region probe = config.omega;
  const Tiling tiling = hyptest_tiling(probe);
  const HypTestPlan plan = hyptest_plan(config.dim, model, per_test_delta(config.delta_hat, tiling.cells.size()));
  Region region = config.omega;
  long m = 0;
  while (true) {
    const long cost = hyptest_stage_cost(region, plan);
    if (m + cost > config.budget) break;
    const HypTestOutcome out = hyptest_decision(region, plan, oracle, config.overlap_rule);
    m += out.queries;
    StageRecord r;
    r.stage = static_cast<int>(res.log.size()) + 1;
    r.before = region;
    r.after = apply_decision(region, out.decision);
    r.decision = out.decision.kind;
    r.child_index = out.decision.kind == DecisionKind::proceed ? static_cast<long>(out.decision.child) : -1;
    r.queries_in_stage = out.queries;
    r.cumulative_queries = m;
    res.log.push_back(r);
    region = r.after;
  }
  res.final_region = region;
  res.queries = m;
  return res;
}

/// Simulated search against a known target; answers come from substream 1
/// of the config seed, query randomness from substream 0.
inline SearchResult simulate_search(const SearchConfig& config, const Point& target) {
  SimulatedOracle oracle(OracleModel(config.gamma, config.dim), target, substream(config.seed, 1));
  return run_search(config, oracle);
}

/// Region in force after `m` queries: the result of the last stage that
/// completed at or before m.
inline const Region& region_at(const SearchConfig& config, const std::vector<StageRecord>& log, long m) {
  const Region* r = &config.omega;
  for (const auto& rec : log) {
    if (rec.cumulative_queries > m) break;
    r = &rec.after;
  }
  return *r;
}

}  // namespace sfsearch
