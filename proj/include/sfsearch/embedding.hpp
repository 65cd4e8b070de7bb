#pragma once

// Learning item embeddings from triplet answers by maximizing the gamma-CKL
// likelihood with mini-batch SGD.

#include "common.hpp"
#include "oracle.hpp"
#include "search_discrete.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace sfsearch {

/// "i was chosen as closer to t than j".
struct Triplet {
  std::string i, j, t;
};

struct IndexedTriplet {
  std::size_t i = 0, j = 0, t = 0;
};

struct TrainConfig {
  int dim = 2;
  double gamma = 2.0;
  double learning_rate = 0.01;
  int batch_size = 32;
  double l2_lambda = 0.0;
  int epochs = 50;
  int folds = 10;
  std::uint64_t seed = 0;

  void validate() const {
    require(dim >= 1, "train config: dim must be >= 1");
    require(std::isfinite(gamma) && gamma > 0.0, "train config: gamma must be positive");
    require(std::isfinite(learning_rate) && learning_rate > 0.0, "train config: learning_rate must be positive");
    require(batch_size >= 1, "train config: batch_size must be >= 1");
    require(std::isfinite(l2_lambda) && l2_lambda >= 0.0, "train config: l2_lambda must be non-negative");
    require(epochs >= 0, "train config: epochs must be non-negative");
    require(folds >= 2, "train config: folds must be >= 2");
  }
};

/// One row per item, in vocabulary order.
class Embedding {
 public:
  Embedding() = default;
  Embedding(std::vector<std::string> ids, Eigen::MatrixXd vectors) : ids_(std::move(ids)), x_(std::move(vectors)) {
    require(static_cast<Eigen::Index>(ids_.size()) == x_.rows(), "Embedding: id count does not match rows");
    for (std::size_t k = 0; k < ids_.size(); ++k)
      if (!index_.emplace(ids_[k], k).second) throw InvalidInput("Embedding: duplicate id '" + ids_[k] + "'");
  }

  std::size_t size() const { return ids_.size(); }
  int dim() const { return static_cast<int>(x_.cols()); }
  const std::vector<std::string>& ids() const { return ids_; }
  const Eigen::MatrixXd& vectors() const { return x_; }
  Eigen::MatrixXd& vectors() { return x_; }
  Point vector(std::size_t k) const { return x_.row(static_cast<Eigen::Index>(k)).transpose(); }

  std::size_t index_of(const std::string& id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) throw InvalidInput("unknown item id '" + id + "'");
    return it->second;
  }

  IndexedTriplet resolve(const Triplet& tr) const {
    if (tr.i == tr.j) throw InvalidInput("triplet has identical winner and loser '" + tr.i + "'");
    return {index_of(tr.i), index_of(tr.j), index_of(tr.t)};
  }

  std::vector<IndexedTriplet> resolve(const std::vector<Triplet>& ts) const {
    std::vector<IndexedTriplet> out;
    out.reserve(ts.size());
    for (const auto& tr : ts) out.push_back(resolve(tr));
    return out;
  }

  ItemSet to_item_set() const {
    std::vector<Item> items;
    items.reserve(ids_.size());
    for (std::size_t k = 0; k < ids_.size(); ++k) items.push_back({ids_[k], vector(k), std::nullopt});
    return ItemSet(std::move(items));
  }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> index_;
  Eigen::MatrixXd x_;
};

/// Sorted unique ids over all triplet roles.
inline std::vector<std::string> vocabulary(const std::vector<Triplet>& ts) {
  std::set<std::string> s;
  for (const auto& t : ts) {
    s.insert(t.i);
    s.insert(t.j);
    s.insert(t.t);
  }
  return {s.begin(), s.end()};
}

inline constexpr double kDistanceFloor = 1e-12;

struct LossAndGradient {
  double loss = 0.0;
  Eigen::MatrixXd gradient;
};

namespace detail {

inline double softplus(double s) { return s > 0.0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s)); }
inline double sigmoid(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

}  // namespace detail

/// Mean negative log-likelihood of the batch plus l2_lambda * ||X||_F^2, and
/// its gradient with respect to every embedding row.
inline LossAndGradient nll_and_gradient(const Eigen::MatrixXd& x, const std::vector<IndexedTriplet>& batch,
                                        double gamma, double l2_lambda) {
  require(!batch.empty(), "nll_and_gradient: empty batch");
  LossAndGradient out;
  out.gradient = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& tr : batch) {
    const auto ri = static_cast<Eigen::Index>(tr.i), rj = static_cast<Eigen::Index>(tr.j),
               rt = static_cast<Eigen::Index>(tr.t);
    const Eigen::RowVectorXd ui = x.row(ri) - x.row(rt);
    const Eigen::RowVectorXd uj = x.row(rj) - x.row(rt);
    const double ni = ui.norm(), nj = uj.norm();
    const double di = std::max(ni, kDistanceFloor), dj = std::max(nj, kDistanceFloor);
    const double s = gamma * (std::log(di) - std::log(dj));
    out.loss += detail::softplus(s) * inv_n;
    const double g = detail::sigmoid(s) * gamma * inv_n;
    // The clamp is flat below the floor, so a clamped distance passes no gradient.
    Eigen::RowVectorXd gi = Eigen::RowVectorXd::Zero(x.cols());
    Eigen::RowVectorXd gj = Eigen::RowVectorXd::Zero(x.cols());
    if (ni > kDistanceFloor) gi = g * ui / (di * di);
    if (nj > kDistanceFloor) gj = -g * uj / (dj * dj);
    out.gradient.row(ri) += gi;
    out.gradient.row(rj) += gj;
    out.gradient.row(rt) -= gi + gj;
  }
  if (l2_lambda > 0.0) {
    out.loss += l2_lambda * x.squaredNorm();
    out.gradient += 2.0 * l2_lambda * x;
  }
  return out;
}

inline LossAndGradient nll_and_gradient(const Embedding& emb, const std::vector<IndexedTriplet>& batch, double gamma,
                                        double l2_lambda) {
  return nll_and_gradient(emb.vectors(), batch, gamma, l2_lambda);
}

/// Fits an embedding of `ids` (the triplet vocabulary when empty).
inline Embedding fit(const std::vector<Triplet>& triplets, const TrainConfig& config,
                     std::vector<std::string> ids = {}) {
  config.validate();
  require(!triplets.empty(), "fit: no triplets");
  if (ids.empty()) ids = vocabulary(triplets);
  Rng init_rng = substream(config.seed, 0);
  Rng order_rng = substream(config.seed, 1);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(ids.size()), config.dim);
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index c = 0; c < x.cols(); ++c) x(r, c) = 0.1 * standard_normal(init_rng);
  Embedding emb(std::move(ids), std::move(x));
  const std::vector<IndexedTriplet> data = emb.resolve(triplets);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto bs = static_cast<std::size_t>(config.batch_size);
  std::vector<IndexedTriplet> batch;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    // Fisher-Yates with our own uniform draws keeps the order library-independent.
    for (std::size_t k = order.size(); k > 1; --k) {
      const auto u = static_cast<std::size_t>(uniform01(order_rng) * static_cast<double>(k));
      std::swap(order[k - 1], order[u]);
    }
    for (std::size_t start = 0; start < order.size(); start += bs) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + bs); ++k) batch.push_back(data[order[k]]);
      const LossAndGradient lg = nll_and_gradient(emb.vectors(), batch, config.gamma, config.l2_lambda);
      if (!std::isfinite(lg.loss) || !lg.gradient.allFinite())
        throw TrainingDiverged(epoch, "fit: non-finite loss in epoch " + std::to_string(epoch));
      emb.vectors() -= config.learning_rate * lg.gradient;
    }
    if (!emb.vectors().allFinite())
      throw TrainingDiverged(epoch, "fit: non-finite embedding after epoch " + std::to_string(epoch));
  }
  return emb;
}

/// Fraction of triplets whose winner the embedding predicts; an exact tie
/// counts one half.
inline double evaluate_accuracy(const Embedding& emb, const std::vector<IndexedTriplet>& holdout, double gamma) {
  require(!holdout.empty(), "evaluate_accuracy: empty holdout");
  double hits = 0.0;
  for (const auto& tr : holdout) {
    const double p = choice_probability((emb.vector(tr.i) - emb.vector(tr.t)).norm(),
                                        (emb.vector(tr.j) - emb.vector(tr.t)).norm(), gamma);
    hits += p > 0.5 ? 1.0 : (p == 0.5 ? 0.5 : 0.0);
  }
  return hits / static_cast<double>(holdout.size());
}

inline double evaluate_accuracy(const Embedding& emb, const std::vector<Triplet>& holdout, double gamma) {
  return evaluate_accuracy(emb, emb.resolve(holdout), gamma);
}

struct CrossValidation {
  std::vector<double> fold_accuracies;
  double mean = 0.0;
  /// Triplet indices (into the input list) held out in each fold.
  std::vector<std::vector<std::size_t>> holdout_indices;
};

/// k-fold cross-validation: one seeded shuffle, k contiguous folds, each fold
/// trained on the rest with a per-fold seed.
inline CrossValidation cross_validate(const std::vector<Triplet>& triplets, const TrainConfig& config) {
  config.validate();
  const auto k = static_cast<std::size_t>(config.folds);
  require(k <= triplets.size(), "cross_validate: more folds than triplets");
  const std::vector<std::string> ids = vocabulary(triplets);
  std::vector<std::size_t> order(triplets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = substream(config.seed, 2);
  for (std::size_t m = order.size(); m > 1; --m) {
    const auto u = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(m));
    std::swap(order[m - 1], order[u]);
  }
  CrossValidation cv;
  const std::size_t n = triplets.size();
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t lo = f * n / k, hi = (f + 1) * n / k;
    std::vector<Triplet> train, test;
    std::vector<std::size_t> held;
    for (std::size_t m = 0; m < n; ++m) {
      if (m >= lo && m < hi) {
        test.push_back(triplets[order[m]]);
        held.push_back(order[m]);
      } else {
        train.push_back(triplets[order[m]]);
      }
    }
    TrainConfig fc = config;
    fc.seed = substream(config.seed, 100 + f)();
    const Embedding emb = fit(train, fc, ids);
    cv.fold_accuracies.push_back(evaluate_accuracy(emb, test, config.gamma));
    cv.holdout_indices.push_back(std::move(held));
  }
  cv.mean = std::accumulate(cv.fold_accuracies.begin(), cv.fold_accuracies.end(), 0.0) /
            static_cast<double>(cv.fold_accuracies.size());
  return cv;
}

/// Triplets sampled from the gamma-CKL model over a ground-truth embedding:
/// distinct (i, j, t) uniformly, winner drawn by the oracle.
inline std::vector<IndexedTriplet> sample_triplets(const Eigen::MatrixXd& truth, double gamma, std::size_t count,
                                                   Rng& rng) {
  const auto n = static_cast<std::size_t>(truth.rows());
  require(n >= 3, "sample_triplets: need at least 3 items");
  const OracleModel model(gamma, static_cast<int>(truth.cols()));
  const auto pick = [&] { return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)); };
  std::vector<IndexedTriplet> out;
  out.reserve(count);
  while (out.size() < count) {
    const std::size_t t = pick(), a = pick(), b = pick();
    if (a == b || a == t || b == t) continue;
    const Point xt = truth.row(static_cast<Eigen::Index>(t)).transpose();
    const Point xa = truth.row(static_cast<Eigen::Index>(a)).transpose();
    const Point xb = truth.row(static_cast<Eigen::Index>(b)).transpose();
    const bool first = sample_answer(model, xa, xb, xt, rng);
    out.push_back(first ? IndexedTriplet{a, b, t} : IndexedTriplet{b, a, t});
  }
  return out;
}

}  // namespace sfsearch
