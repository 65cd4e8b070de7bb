#pragma once

// Simulation of the birth-death chain Z_s that bounds the number of pending
// backtracks, and of the abstract region walk it dominates.

#include "common.hpp"
#include "geometry.hpp"
#include "stats.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace sfsearch {

/// Decision-bias margin b in (0,1).
class BiasParams {
 public:
  explicit BiasParams(double b) : b_(b) {
    require(std::isfinite(b) && b > 0.0 && b < 1.0, "bias margin b must lie in (0,1)");
  }
  double b() const noexcept { return b_; }
  double down() const noexcept { return 0.5 * (1.0 + b_); }
  double up() const noexcept { return 0.5 * (1.0 - b_); }
  /// (1-b)/(1+b), the geometric ratio of the stationary law.
  double ratio() const noexcept { return (1.0 - b_) / (1.0 + b_); }

 private:
  double b_;
};

/// One step of Z driven by an explicit uniform u in [0,1).
inline int step_z_with(int state, const BiasParams& b, double u) {
  if (u < b.down()) return state > 0 ? state - 1 : 0;
  return state + 1;
}

inline int step_z(int state, const BiasParams& b, Rng& rng) {
  return step_z_with(state, b, uniform01(rng));
}

struct WalkTrace {
  std::vector<int> states;
  long steps() const { return states.empty() ? 0 : static_cast<long>(states.size()) - 1; }
};

inline WalkTrace simulate_z(int start, const BiasParams& b, long n_steps, Rng& rng) {
  require(start >= 0, "simulate_z: start state must be non-negative");
  WalkTrace t;
  t.states.reserve(static_cast<std::size_t>(n_steps) + 1);
  t.states.push_back(start);
  int z = start;
  for (long s = 0; s < n_steps; ++s) {
    z = step_z(z, b, rng);
    t.states.push_back(z);
  }
  return t;
}

/// Long-run occupancy frequencies of Z started at 0, after a burn-in of
/// n_steps/10.
inline std::map<int, double> estimate_stationary(const BiasParams& b, long n_steps, Rng& rng) {
  require(n_steps >= 10000, "estimate_stationary: need at least 1e4 steps");
  const long burn_in = n_steps / 10;
  int z = 0;
  for (long s = 0; s < burn_in; ++s) z = step_z(z, b, rng);
  std::map<int, long> counts;
  const long kept = n_steps - burn_in;
  for (long s = 0; s < kept; ++s) {
    z = step_z(z, b, rng);
    ++counts[z];
  }
  std::map<int, double> freq;
  for (const auto& [state, c] : counts) freq[state] = static_cast<double>(c) / static_cast<double>(kept);
  return freq;
}

/// Mean number of steps for Z to first hit 0 from 1, with a 95% interval.
inline stats::MeanCI estimate_stray_time(const BiasParams& b, long n_episodes, Rng& rng) {
  require(n_episodes >= 100, "estimate_stray_time: need at least 100 episodes");
  std::vector<double> times(static_cast<std::size_t>(n_episodes));
  for (auto& t : times) {
    int z = 1;
    long steps = 0;
    while (z != 0) {
      z = step_z(z, b, rng);
      ++steps;
    }
    t = static_cast<double>(steps);
  }
  return stats::mean_ci(times);
}

struct TailEstimate {
  double frequency = 0.0;
  double std_err = 0.0;
  double bound = 1.0;  // ((1-b)/(1+b))^k
  long n_runs = 0;
};

/// Empirical P[Z_s > k] over n_runs independent walks started at 0.
inline TailEstimate error_tail(const BiasParams& b, int s, int k, long n_runs, Rng& rng) {
  require(s >= 0 && k >= 0 && n_runs >= 1, "error_tail: invalid arguments");
  long hits = 0;
  for (long r = 0; r < n_runs; ++r) {
    int z = 0;
    for (int t = 0; t < s; ++t) z = step_z(z, b, rng);
    if (z > k) ++hits;
  }
  TailEstimate e;
  e.n_runs = n_runs;
  e.frequency = static_cast<double>(hits) / static_cast<double>(n_runs);
  e.std_err = std::sqrt(e.frequency * (1.0 - e.frequency) / static_cast<double>(n_runs));
  e.bound = std::pow(b.ratio(), k);
  return e;
}

// Region walk ---------------------------------------------------------------------

/// Decision probabilities from a green region (p_d, q_u, q_s) and from a red
/// region (p_u, p_r, q_d).
struct TransitionProbs {
  double p_d = 1.0, q_u = 0.0, q_s = 0.0;
  double p_u = 1.0, p_r = 0.0, q_d = 0.0;

  /// Throws InvalidInput unless rows sum to one and Assumptions 1-2 hold for b.
  void validate(const BiasParams& b) const {
    const auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
    require(in01(p_d) && in01(q_u) && in01(q_s) && in01(p_u) && in01(p_r) && in01(q_d),
            "transition probabilities must lie in [0,1]");
    require(std::abs(p_d + q_u + q_s - 1.0) < 1e-12, "green row must sum to 1");
    require(std::abs(p_u + p_r + q_d - 1.0) < 1e-12, "red row must sum to 1");
    require(p_d - (q_u + q_s) > b.b(), "green row violates the bias margin");
    require((p_u + p_r) - q_d > b.b(), "red row violates the bias margin");
    require(depth_drift(b) > 0.0, "green row violates the depth-drift condition");
  }

  /// p_d - 2 q_u - q_s (b+1)/(2b).
  double depth_drift(const BiasParams& b) const {
    return p_d - 2.0 * q_u - q_s * (b.b() + 1.0) / (2.0 * b.b());
  }

  /// Lower bound on the expected depth gain per stage.
  double depth_rate_bound(const BiasParams& b) const {
    return depth_drift(b) / (q_u + p_d + q_s * (b.b() + 1.0) / b.b());
  }
};

enum class WalkMove { proceed_green, backtrack, stray, recover, proceed_red };

inline const char* to_string(WalkMove m) {
  switch (m) {
    case WalkMove::proceed_green: return "proceed_green";
    case WalkMove::backtrack: return "backtrack";
    case WalkMove::stray: return "stray";
    case WalkMove::recover: return "recover";
    case WalkMove::proceed_red: return "proceed_red";
  }
  return "?";
}

struct RegionWalkStep {
  int stage = 0;
  WalkMove move = WalkMove::proceed_green;
  Region region;       // region after the move
  bool green = true;   // region contains the target
  int z = 0;           // backtracks needed to reach a green region
  int z_bound = 0;     // coupled upper-bound walk Z
};

/// Transition table as a function of the region center relative to the
/// target, in units of the region edge (the walk is scale free).
using TransitionTable = std::function<TransitionProbs(const Point& relative_center)>;

/// Simulates the region walk from `start`, coupling it with Z through one
/// shared uniform per stage. Child choices among the green (or red) children
/// are uniform. When a recovery is drawn but no child contains the target,
/// the walk backtracks instead.
inline std::vector<RegionWalkStep> simulate_region_walk(const TransitionTable& table,
                                                        const BiasParams& b, const Point& xt,
                                                        const Region& start, int n_stages, Rng& rng) {
  require(xt.size() == start.center.size(), "simulate_region_walk: dimension mismatch");
  require(n_stages >= 0, "simulate_region_walk: n_stages must be non-negative");
  const int d = static_cast<int>(xt.size());
  const std::size_t n_children = child_count(d);

  // Position relative to the target in units of the current edge keeps the
  // numbers O(1) however deep the walk goes.
  Point w = (start.center - xt) / start.edge;
  double edge = start.edge;
  int depth = start.depth;
  const auto is_green = [](const Point& rel) { return rel.cwiseAbs().maxCoeff() <= 0.5; };
  const auto z_of = [](const Point& rel) {
    double reach = 2.0 * rel.cwiseAbs().maxCoeff();
    int k = 0;
    while (reach > 1.0) {
      reach /= 4.0;
      ++k;
    }
    return k;
  };
  const auto child_rel = [&](const Point& rel, std::size_t k) {
    const auto idx = child_offset_indices(k, d);
    Point c = rel;
    for (int a = 0; a < d; ++a) c[a] += kChildOffsets[static_cast<std::size_t>(idx[static_cast<std::size_t>(a)])];
    return Point(2.0 * c);
  };

  int z_bound = z_of(w);
  std::vector<RegionWalkStep> out;
  out.reserve(static_cast<std::size_t>(n_stages));
  for (int s = 0; s < n_stages; ++s) {
    const TransitionProbs probs = table(w);
    probs.validate(b);
    const double u = uniform01(rng);
    const bool green = is_green(w);

    std::vector<std::size_t> green_kids, red_kids;
    for (std::size_t k = 0; k < n_children; ++k)
      (is_green(child_rel(w, k)) ? green_kids : red_kids).push_back(k);
    const auto pick = [&](const std::vector<std::size_t>& v) {
      return v[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(v.size()))];
    };
    const auto go_child = [&](std::size_t k) {
      w = child_rel(w, k);
      edge *= 0.5;
      depth += 1;
    };
    const auto go_parent = [&] {
      w /= 4.0;
      edge *= 4.0;
      depth -= 2;
    };

    WalkMove move;
    if (green) {
      if (u < probs.p_d) {
        move = WalkMove::proceed_green;
        go_child(pick(green_kids));
      } else if (u < probs.p_d + probs.q_u) {
        move = WalkMove::backtrack;
        go_parent();
      } else {
        move = WalkMove::stray;
        go_child(pick(red_kids));
      }
    } else {
      if (u < probs.p_u) {
        move = WalkMove::backtrack;
        go_parent();
      } else if (u < probs.p_u + probs.p_r) {
        if (!green_kids.empty()) {
          move = WalkMove::recover;
          go_child(pick(green_kids));
        } else {
          move = WalkMove::backtrack;
          go_parent();
        }
      } else {
        move = WalkMove::proceed_red;
        go_child(pick(red_kids));
      }
    }
    z_bound = step_z_with(z_bound, b, u);

    RegionWalkStep step;
    step.stage = s + 1;
    step.move = move;
    step.region.center = xt + w * edge;
    step.region.edge = edge;
    step.region.depth = depth;
    step.green = is_green(w);
    step.z = z_of(w);
    step.z_bound = z_bound;
    out.push_back(std::move(step));
  }
  return out;
}

inline std::vector<RegionWalkStep> simulate_region_walk(const TransitionProbs& probs,
                                                        const BiasParams& b, const Point& xt,
                                                        const Region& start, int n_stages, Rng& rng) {
  probs.validate(b);
  return simulate_region_walk([probs](const Point&) { return probs; }, b, xt, start, n_stages, rng);
}

/// Number of ancestors k such that P[target in k-th ancestor] > 1 - delta
/// under the Z bound: ceil(log delta / log((1-b)/(1+b))).
inline int confidence_ancestor(const BiasParams& b, double delta) {
  require(delta > 0.0 && delta < 1.0, "confidence_ancestor: delta must lie in (0,1)");
  return static_cast<int>(std::ceil(std::log(delta) / std::log(b.ratio())));
}

}  // namespace sfsearch
