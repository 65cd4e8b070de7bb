#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>

namespace sfsearch {

/// A location in the embedding space. Coordinates are dimensionless.
using Point = Eigen::VectorXd;

/// A pair of query points; the oracle is asked which one is closer to the target.
struct QueryPair {
  Point first;
  Point second;
};

// Error hierarchy ------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class DegenerateBelief : public Error {
 public:
  using Error::Error;
};

class Exhausted : public Error {
 public:
  using Error::Error;
};

class InternalInvariant : public Error {
 public:
  using Error::Error;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(int epoch, const std::string& what)
      : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidInput(msg);
}

inline bool all_finite(const Point& x) {
  return x.size() > 0 && x.allFinite();
}

// Random numbers -------------------------------------------------------------

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent, deterministically derived generator for (seed, stream).
inline Rng substream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(splitmix64(seed)),
                    static_cast<std::uint32_t>(splitmix64(seed) >> 32),
                    static_cast<std::uint32_t>(splitmix64(stream ^ 0x5bd1e995ULL)),
                    static_cast<std::uint32_t>(splitmix64(stream ^ 0x5bd1e995ULL) >> 32)};
  return Rng(seq);
}

/// Uniform on [0,1) from exactly one generator draw.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return n(rng);
}

}  // namespace sfsearch
