#include "sfsearch/embedding.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <set>

using namespace sfsearch;

namespace {

Eigen::MatrixXd gaussian_matrix(Eigen::Index n, Eigen::Index d, Rng& rng) {
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < d; ++c) x(r, c) = standard_normal(rng);
  return x;
}

std::vector<std::string> make_ids(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t k = 0; k < n; ++k) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "obj%03zu", k);
    ids.emplace_back(buf);
  }
  return ids;
}

std::vector<IndexedTriplet> random_triplets(std::size_t n, std::size_t count, Rng& rng) {
  std::vector<IndexedTriplet> out;
  while (out.size() < count) {
    const auto a = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
    const auto b = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
    const auto t = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
    if (a != b && a != t && b != t) out.push_back({a, b, t});
  }
  return out;
}

std::vector<Triplet> named(const std::vector<IndexedTriplet>& ts, const std::vector<std::string>& ids) {
  std::vector<Triplet> out;
  for (const auto& t : ts) out.push_back({ids[t.i], ids[t.j], ids[t.t]});
  return out;
}

/// Loss straight from the likelihood: -log P(i chosen) averaged.
double direct_nll(const Eigen::MatrixXd& x, const std::vector<IndexedTriplet>& ts, double gamma) {
  double s = 0.0;
  for (const auto& t : ts) {
    const double di = (x.row(static_cast<Eigen::Index>(t.i)) - x.row(static_cast<Eigen::Index>(t.t))).norm();
    const double dj = (x.row(static_cast<Eigen::Index>(t.j)) - x.row(static_cast<Eigen::Index>(t.t))).norm();
    s -= std::log(std::pow(dj, gamma) / (std::pow(di, gamma) + std::pow(dj, gamma)));
  }
  return s / static_cast<double>(ts.size());
}

}  // namespace

TEST(Loss, EquidistantIsLogTwo) {
  Eigen::MatrixXd x(3, 2);
  x << 1, 0, 0, 1, 0, 0;
  for (double g : {0.5, 2.0, 9.0}) {
    const auto lg = nll_and_gradient(x, {{0, 1, 2}}, g, 0.0);
    EXPECT_NEAR(lg.loss, std::log(2.0), 1e-15);
  }
}

TEST(Loss, MatchesDirectLikelihood) {
  Rng rng = substream(1, 0);
  const Eigen::MatrixXd x = gaussian_matrix(8, 3, rng);
  const auto ts = random_triplets(8, 30, rng);
  for (double g : {1.0, 2.0, 4.5})
    EXPECT_NEAR(nll_and_gradient(x, ts, g, 0.0).loss, direct_nll(x, ts, g), 1e-12);
}

TEST(Loss, DoublingGammaMovesAwayFromLogTwo) {
  Rng rng = substream(2, 0);
  const Eigen::MatrixXd x = gaussian_matrix(6, 3, rng);
  for (const auto& t : random_triplets(6, 50, rng)) {
    const double a = nll_and_gradient(x, {t}, 2.0, 0.0).loss;
    const double b = nll_and_gradient(x, {t}, 4.0, 0.0).loss;
    EXPECT_GT(std::abs(b - std::log(2.0)), std::abs(a - std::log(2.0)));
  }
}

TEST(Loss, EmptyBatchRejected) {
  EXPECT_THROW(nll_and_gradient(Eigen::MatrixXd::Zero(3, 2), {}, 2.0, 0.0), InvalidInput);
}

TEST(Gradient, MatchesCentralDifferences) {
  for (int inst = 0; inst < 100; ++inst) {
    Rng rng = substream(3, static_cast<std::uint64_t>(inst));
    const Eigen::MatrixXd x = gaussian_matrix(6, 3, rng);
    const auto ts = random_triplets(6, 10, rng);
    const double gamma = 0.5 + 5.0 * uniform01(rng);
    const double lambda = inst % 2 == 0 ? 0.0 : 0.1;
    const Eigen::MatrixXd g = nll_and_gradient(x, ts, gamma, lambda).gradient;
    Eigen::MatrixXd fd(x.rows(), x.cols());
    const double h = 1e-6;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        Eigen::MatrixXd xp = x, xm = x;
        xp(r, c) += h;
        xm(r, c) -= h;
        fd(r, c) = (nll_and_gradient(xp, ts, gamma, lambda).loss - nll_and_gradient(xm, ts, gamma, lambda).loss) / (2 * h);
      }
    }
    EXPECT_LT((g - fd).norm() / g.norm(), 1e-5) << "instance " << inst;
  }
}

TEST(Gradient, ClampedDistancePassesNoGradient) {
  Eigen::MatrixXd x(3, 2);
  x << 0, 0, 1, 0, 0, 0;  // winner coincides with the reference
  const auto lg = nll_and_gradient(x, {{0, 1, 2}}, 2.0, 0.0);
  EXPECT_TRUE(std::isfinite(lg.loss));
  EXPECT_TRUE(lg.gradient.allFinite());
  EXPECT_NEAR(lg.loss, 0.0, 1e-12);
}

TEST(Invariance, TranslationAndScale) {
  Rng rng = substream(4, 0);
  const Eigen::MatrixXd x = gaussian_matrix(10, 4, rng);
  const auto ts = random_triplets(10, 40, rng);
  const double base = nll_and_gradient(x, ts, 3.0, 0.0).loss;
  Eigen::RowVectorXd shift(4);
  shift << 3.0, -1.5, 0.25, 10.0;
  EXPECT_NEAR(nll_and_gradient(x.rowwise() + shift, ts, 3.0, 0.0).loss, base, 1e-9);
  for (double c : {0.01, 0.5, 7.0, 1e3}) EXPECT_NEAR(nll_and_gradient(c * x, ts, 3.0, 0.0).loss, base, 1e-9);
}

TEST(Invariance, RadialDirectionalDerivativeVanishes) {
  for (int inst = 0; inst < 20; ++inst) {
    Rng rng = substream(5, static_cast<std::uint64_t>(inst));
    const Eigen::MatrixXd x = gaussian_matrix(7, 3, rng);
    const auto g = nll_and_gradient(x, random_triplets(7, 20, rng), 2.5, 0.0).gradient;
    EXPECT_NEAR((g.array() * x.array()).sum(), 0.0, 1e-6);
    // The gradient also sums to zero over rows (translation invariance).
    EXPECT_LE(g.colwise().sum().norm(), 1e-9);
  }
}

TEST(Fit, ZeroEpochsReturnsInitialization) {
  const std::vector<Triplet> ts{{"a", "b", "c"}, {"b", "c", "a"}};
  TrainConfig c;
  c.epochs = 0;
  c.seed = 9;
  const Embedding e = fit(ts, c);
  Rng rng = substream(9, 0);
  ASSERT_EQ(e.ids(), (std::vector<std::string>{"a", "b", "c"}));
  for (Eigen::Index r = 0; r < 3; ++r)
    for (Eigen::Index k = 0; k < 2; ++k) EXPECT_EQ(e.vectors()(r, k), 0.1 * standard_normal(rng));
}

TEST(Fit, DeterministicGivenSeed) {
  Rng rng = substream(6, 0);
  const auto ids = make_ids(20);
  const auto ts = named(sample_triplets(gaussian_matrix(20, 2, rng), 2.0, 300, rng), ids);
  TrainConfig c;
  c.epochs = 5;
  c.seed = 3;
  EXPECT_EQ(fit(ts, c).vectors(), fit(ts, c).vectors());
  c.seed = 4;
  EXPECT_NE(fit(ts, c).vectors(), (fit(ts, TrainConfig{}).vectors()));
}

TEST(Fit, StrongRegularizationShrinks) {
  Rng rng = substream(7, 0);
  const auto ids = make_ids(20);
  const auto ts = named(sample_triplets(gaussian_matrix(20, 2, rng), 2.0, 400, rng), ids);
  TrainConfig c;
  c.epochs = 20;
  c.learning_rate = 1e-4;
  const double free_norm = fit(ts, c).vectors().norm();
  c.l2_lambda = 1e3;
  EXPECT_LT(fit(ts, c).vectors().norm(), free_norm);
}

TEST(Fit, UnknownIdsAndValidation) {
  TrainConfig c;
  EXPECT_THROW(fit({}, c), InvalidInput);
  EXPECT_THROW(fit({{"a", "a", "b"}}, c), InvalidInput);
  EXPECT_THROW(fit({{"a", "b", "z"}}, c, {"a", "b", "c"}), InvalidInput);
  c.learning_rate = 0.0;
  EXPECT_THROW(fit({{"a", "b", "c"}}, c), InvalidInput);
  c = TrainConfig{};
  c.folds = 1;
  EXPECT_THROW(c.validate(), InvalidInput);
}

TEST(Fit, DivergenceNamesEpoch) {
  Rng rng = substream(8, 0);
  const auto ids = make_ids(10);
  const auto ts = named(random_triplets(10, 200, rng), ids);
  TrainConfig c;
  c.learning_rate = 1e306;
  c.batch_size = 4;
  c.epochs = 3;
  try {
    fit(ts, c);
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.epoch(), 1);
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
}

TEST(Fit, SyntheticRecoveryNearCeiling) {
  Rng rng = substream(42, 0);
  const Eigen::MatrixXd truth = gaussian_matrix(50, 2, rng);
  const auto ids = make_ids(50);
  const auto all = sample_triplets(truth, 4.0, 5000, rng);
  const std::vector<IndexedTriplet> train_i(all.begin(), all.begin() + 4000), test_i(all.begin() + 4000, all.end());
  double ceiling = 0.0;
  for (const auto& t : test_i) {
    const double p = choice_probability((truth.row(static_cast<Eigen::Index>(t.i)) - truth.row(static_cast<Eigen::Index>(t.t))).norm(),
                                        (truth.row(static_cast<Eigen::Index>(t.j)) - truth.row(static_cast<Eigen::Index>(t.t))).norm(), 4.0);
    ceiling += std::max(p, 1.0 - p);
  }
  ceiling /= static_cast<double>(test_i.size());
  TrainConfig c;
  c.gamma = 4.0;
  c.learning_rate = 0.2;
  c.epochs = 100;
  c.seed = 1;
  const Embedding e = fit(named(train_i, ids), c, ids);
  const double acc = evaluate_accuracy(e, named(test_i, ids), 4.0);
  EXPECT_GE(acc, ceiling - 0.03);
  // The generating embedding bounds any fitted one up to sampling noise.
  const double truth_acc = evaluate_accuracy(Embedding(ids, truth), named(test_i, ids), 4.0);
  EXPECT_LE(acc, truth_acc + 2.0 * std::sqrt(truth_acc * (1 - truth_acc) / static_cast<double>(test_i.size())));
}

TEST(Accuracy, NoiselessHoldoutIsPerfectAndReversedIsComplement) {
  Rng rng = substream(10, 0);
  const Eigen::MatrixXd x = gaussian_matrix(15, 3, rng);
  const auto ids = make_ids(15);
  const Embedding e(ids, x);
  const auto ts = sample_triplets(x, 1e6, 400, rng);
  EXPECT_EQ(evaluate_accuracy(e, ts, 2.0), 1.0);
  const auto noisy = sample_triplets(x, 1.0, 400, rng);
  std::vector<IndexedTriplet> reversed;
  for (const auto& t : noisy) reversed.push_back({t.j, t.i, t.t});
  EXPECT_NEAR(evaluate_accuracy(e, reversed, 1.0), 1.0 - evaluate_accuracy(e, noisy, 1.0), 1e-15);
}

TEST(Accuracy, ExactTieCountsHalf) {
  Eigen::MatrixXd x(3, 1);
  x << -1, 1, 0;
  const Embedding e({"a", "b", "c"}, x);
  EXPECT_EQ(evaluate_accuracy(e, std::vector<IndexedTriplet>{{0, 1, 2}}, 2.0), 0.5);
  EXPECT_THROW(evaluate_accuracy(e, std::vector<IndexedTriplet>{}, 2.0), InvalidInput);
}

TEST(CrossValidate, PartitionAndMean) {
  Rng rng = substream(11, 0);
  const auto ids = make_ids(12);
  const auto ts = named(sample_triplets(gaussian_matrix(12, 2, rng), 2.0, 103, rng), ids);
  TrainConfig c;
  c.folds = 5;
  c.epochs = 3;
  const auto cv = cross_validate(ts, c);
  ASSERT_EQ(cv.fold_accuracies.size(), 5u);
  std::multiset<std::size_t> seen;
  for (const auto& fold : cv.holdout_indices) {
    EXPECT_GE(fold.size(), 20u);
    EXPECT_LE(fold.size(), 21u);
    seen.insert(fold.begin(), fold.end());
  }
  EXPECT_EQ(seen.size(), ts.size());
  for (std::size_t k = 0; k < ts.size(); ++k) EXPECT_EQ(seen.count(k), 1u);
  double mean = 0.0;
  for (double a : cv.fold_accuracies) mean += a / 5.0;
  EXPECT_NEAR(cv.mean, mean, 1e-15);
  c.folds = 200;
  EXPECT_THROW(cross_validate(ts, c), InvalidInput);
}

TEST(CrossValidate, DuplicatedListFoldsAgree) {
  Rng rng = substream(12, 0);
  const auto ids = make_ids(30);
  auto ts = named(sample_triplets(gaussian_matrix(30, 2, rng), 4.0, 2000, rng), ids);
  const auto copy = ts;
  ts.insert(ts.end(), copy.begin(), copy.end());
  TrainConfig c;
  c.folds = 2;
  c.gamma = 4.0;
  c.learning_rate = 0.2;
  c.epochs = 30;
  const auto cv = cross_validate(ts, c);
  EXPECT_NEAR(cv.fold_accuracies[0], cv.fold_accuracies[1], 0.05);
}

TEST(Embedding, ItemSetExportAndLookup) {
  Eigen::MatrixXd x(2, 2);
  x << 1, 2, 3, 4;
  const Embedding e({"p", "q"}, x);
  const ItemSet s = e.to_item_set();
  EXPECT_EQ(s.size(), 2u);
  EXPECT_EQ(s[s.index_of("q")].vector, (Point(2) << 3, 4).finished());
  EXPECT_THROW(Embedding({"p", "p"}, x), InvalidInput);
  EXPECT_THROW(Embedding({"p"}, x), InvalidInput);
  EXPECT_THROW(e.index_of("zz"), InvalidInput);
}
