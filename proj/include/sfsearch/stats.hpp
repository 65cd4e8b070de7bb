#pragma once

#include "common.hpp"

#include <boost/math/distributions/binomial.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

namespace sfsearch::stats {

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// Ordinary least squares of y on x. Requires at least two distinct x values.
inline LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, "linear_fit: need >= 2 paired samples");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  require(sxx > 0.0, "linear_fit: x values are all equal");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return fit;
}

/// Linear-interpolated quantile (type 7), q in [0,1].
inline double quantile(std::vector<double> v, double q) {
  require(!v.empty(), "quantile of empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

inline double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

struct MeanCI {
  double mean = 0.0;
  double std_err = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

/// Sample mean with a normal-approximation 95% interval.
inline MeanCI mean_ci(std::span<const double> v) {
  require(v.size() >= 2, "mean_ci: need >= 2 samples");
  const double n = static_cast<double>(v.size());
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  const double se = std::sqrt(ss / (n - 1.0) / n);
  return {m, se, m - 1.959963984540054 * se, m + 1.959963984540054 * se};
}

/// P[Bin(n,p) >= k].
inline double binomial_upper_tail(int n, double p, int k) {
  if (k <= 0) return 1.0;
  if (k > n) return 0.0;
  boost::math::binomial_distribution<double> dist(n, p);
  return boost::math::cdf(boost::math::complement(dist, static_cast<double>(k - 1)));
}

/// P[Bin(n,p) < k].
inline double binomial_lower_tail(int n, double p, int k) {
  if (k <= 0) return 0.0;
  if (k > n) return 1.0;
  boost::math::binomial_distribution<double> dist(n, p);
  return boost::math::cdf(dist, static_cast<double>(k - 1));
}

}  // namespace sfsearch::stats
