#pragma once

// The gamma-CKL triplet oracle: answer probabilities, answer sampling, and
// Monte Carlo estimates of the mean accuracy of random queries.

#include "common.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace sfsearch {

/// Power exponent gamma and embedding dimension of a gamma-CKL oracle.
class OracleModel {
 public:
  OracleModel(double gamma, int dim) : gamma_(gamma), dim_(dim) {
    require(std::isfinite(gamma) && gamma > 0.0, "oracle gamma must be positive");
    require(dim >= 1, "oracle dimension must be >= 1");
  }
  double gamma() const noexcept { return gamma_; }
  int dim() const noexcept { return dim_; }

 private:
  double gamma_;
  int dim_;
};

/// Probability of answering "first is closer" given the two distances to the
/// target. Evaluated through the ratio of the smaller to the larger distance
/// so that p(a,b) + p(b,a) == 1 and large gamma cannot overflow.
inline double choice_probability(double dist_first, double dist_second, double gamma) {
  if (dist_first == dist_second) return 0.5;  // includes the 0/0 case
  if (dist_first < dist_second) {
    const double r = dist_first / dist_second;
    return 1.0 / (1.0 + std::pow(r, gamma));
  }
  const double r = dist_second / dist_first;
  return 1.0 - 1.0 / (1.0 + std::pow(r, gamma));
}

inline double answer_probability(const OracleModel& model, const Point& xi, const Point& xj,
                                 const Point& xt) {
  const auto d = static_cast<Eigen::Index>(model.dim());
  if (xi.size() != d || xj.size() != d || xt.size() != d)
    throw InvalidInput("answer_probability: point dimension does not match model dimension " +
                       std::to_string(model.dim()));
  return choice_probability((xi - xt).norm(), (xj - xt).norm(), model.gamma());
}

/// Draws the oracle's answer; true means "xi is closer". Uses exactly one draw.
inline bool sample_answer(const OracleModel& model, const Point& xi, const Point& xj,
                          const Point& xt, Rng& rng) {
  const double p = answer_probability(model, xi, xj, xt);
  return uniform01(rng) < p;
}

/// Uniform sample from the unit ball in R^d: a normalized Gaussian direction
/// scaled by U^(1/d).
inline Point sample_unit_ball(int d, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Point x(d);
  double n2 = 0.0;
  do {
    for (int i = 0; i < d; ++i) x[i] = normal(rng);
    n2 = x.squaredNorm();
  } while (n2 == 0.0);
  const double radius = std::pow(uniform01(rng), 1.0 / d);
  return x * (radius / std::sqrt(n2));
}

struct QueryOutcomeEstimate {
  double p_hat = 0.5;
  long n_samples = 0;
  double std_err = 0.0;
};

namespace detail {

/// For each sampled query, the ratio (nearer distance)/(farther distance) to
/// the ball center. The correct-answer probability at gamma is 1/(1+r^gamma).
inline std::vector<double> sample_distance_ratios(int dim, long n_samples, Rng& rng) {
  std::vector<double> ratios(static_cast<std::size_t>(n_samples));
  for (auto& r : ratios) {
    const double ra = sample_unit_ball(dim, rng).norm();
    const double rb = sample_unit_ball(dim, rng).norm();
    const double lo = std::min(ra, rb), hi = std::max(ra, rb);
    r = hi > 0.0 ? lo / hi : 1.0;
  }
  return ratios;
}

inline QueryOutcomeEstimate accuracy_from_ratios(std::span<const double> ratios, double gamma) {
  double sum = 0.0, sum_sq = 0.0;
  for (double r : ratios) {
    const double p = 1.0 / (1.0 + std::pow(r, gamma));
    sum += p;
    sum_sq += p * p;
  }
  const double n = static_cast<double>(ratios.size());
  QueryOutcomeEstimate est;
  est.n_samples = static_cast<long>(ratios.size());
  est.p_hat = std::clamp(sum / n, 0.0, 1.0);
  if (ratios.size() > 1) {
    const double var = std::max(0.0, (sum_sq - sum * sum / n) / (n - 1.0));
    est.std_err = std::sqrt(var / n);
  }
  return est;
}

}  // namespace detail

/// Monte Carlo mean probability that the oracle picks the nearer of two points
/// drawn uniformly from the unit ball centered at the target.
inline QueryOutcomeEstimate estimate_mean_accuracy(const OracleModel& model, long n_samples,
                                                   Rng& rng) {
  require(n_samples >= 1, "estimate_mean_accuracy: n_samples must be >= 1");
  const auto ratios = detail::sample_distance_ratios(model.dim(), n_samples, rng);
  return detail::accuracy_from_ratios(ratios, model.gamma());
}

/// Mean accuracy at every gamma of `grid`, all evaluated on one shared set of
/// sampled queries (common random numbers).
inline std::vector<QueryOutcomeEstimate> accuracy_curve(int dim, std::span<const double> grid,
                                                        long n_samples, Rng& rng) {
  require(dim >= 1, "accuracy_curve: dimension must be >= 1");
  require(n_samples >= 1, "accuracy_curve: n_samples must be >= 1");
  const auto ratios = detail::sample_distance_ratios(dim, n_samples, rng);
  std::vector<QueryOutcomeEstimate> out;
  out.reserve(grid.size());
  for (double g : grid) {
    require(g > 0.0, "accuracy_curve: grid values must be positive");
    out.push_back(detail::accuracy_from_ratios(ratios, g));
  }
  return out;
}

/// Grid value of gamma whose mean accuracy in dimension `dim` is closest to
/// `target_accuracy`; ties go to the smaller gamma.
inline double calibrate_gamma(int dim, double target_accuracy, std::span<const double> grid,
                              long n_samples, Rng& rng) {
  require(!grid.empty(), "calibrate_gamma: empty grid");
  require(std::is_sorted(grid.begin(), grid.end()), "calibrate_gamma: grid must be ascending");
  const auto curve = accuracy_curve(dim, grid, n_samples, rng);
  std::size_t best = 0;
  double best_gap = std::abs(curve[0].p_hat - target_accuracy);
  for (std::size_t k = 1; k < curve.size(); ++k) {
    const double gap = std::abs(curve[k].p_hat - target_accuracy);
    if (gap < best_gap) {
      best_gap = gap;
      best = k;
    }
  }
  return grid[best];
}

/// First-order expansion of the mean accuracy for large d:
/// 1/2 + (gamma/2) d / ((d+1)(2d+1)).
inline double mean_accuracy_expansion(int dim, double gamma) {
  const double d = dim;
  return 0.5 + 0.5 * gamma * d / ((d + 1.0) * (2.0 * d + 1.0));
}

}  // namespace sfsearch
