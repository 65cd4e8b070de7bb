#pragma once

// Bayesian comparison search over a finite set of embedded items. The belief
// over which item is the target is updated by Bayes' rule after every answer;
// queries are picked by snapping two proto-points, placed along the top
// principal axis of the belief, to nearby unused items.

#include "common.hpp"
#include "oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace sfsearch {

struct Item {
  std::string id;
  Point vector;
  std::optional<std::string> display_url;
};

/// Items with unique ids and a common embedding dimension.
class ItemSet {
 public:
  ItemSet() = default;
  explicit ItemSet(std::vector<Item> items) : items_(std::move(items)) {
    require(!items_.empty(), "ItemSet: no items");
    dim_ = static_cast<int>(items_.front().vector.size());
    require(dim_ >= 1, "ItemSet: empty item vector");
    for (std::size_t k = 0; k < items_.size(); ++k) {
      const Item& it = items_[k];
      require(!it.id.empty(), "ItemSet: empty id");
      if (it.vector.size() != dim_)
        throw InvalidInput("ItemSet: item '" + it.id + "' has dimension " + std::to_string(it.vector.size()) +
                           ", expected " + std::to_string(dim_));
      require(all_finite(it.vector), "ItemSet: item '" + it.id + "' has a non-finite coordinate");
      if (!index_.emplace(it.id, k).second) throw InvalidInput("ItemSet: duplicate id '" + it.id + "'");
    }
  }

  std::size_t size() const { return items_.size(); }
  int dim() const { return dim_; }
  const Item& operator[](std::size_t k) const { return items_[k]; }
  const std::vector<Item>& items() const { return items_; }

  std::size_t index_of(const std::string& id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) throw InvalidInput("unknown item id '" + id + "'");
    return it->second;
  }
  bool contains(const std::string& id) const { return index_.count(id) != 0; }

 private:
  std::vector<Item> items_;
  std::unordered_map<std::string, std::size_t> index_;
  int dim_ = 0;
};

struct DiscreteBelief {
  std::vector<double> probs;

  static DiscreteBelief uniform(std::size_t n) {
    require(n >= 1, "DiscreteBelief: need at least one item");
    return {std::vector<double>(n, 1.0 / static_cast<double>(n))};
  }

  /// Shannon entropy in nats.
  double entropy() const {
    double h = 0.0;
    for (double p : probs)
      if (p > 0.0) h -= p * std::log(p);
    return h;
  }

  std::size_t top1() const {
    return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  }
};

/// How proto-points are snapped to items: `ratio` minimizes distance / p,
/// `product` minimizes p * distance.
enum class ProtoWeighting { ratio, product };

struct DiscreteQuery {
  std::size_t i = 0;
  std::size_t j = 0;
};

struct HistoryEntry {
  DiscreteQuery query;
  std::size_t answer = 0;  // item index, either query.i or query.j
};

struct DiscreteSearchState {
  DiscreteBelief belief;
  std::vector<bool> used;
  std::size_t used_count = 0;
  long step = 0;
  double r = 2.0;
  double gamma = 3.0;
  ProtoWeighting weighting = ProtoWeighting::ratio;
  std::vector<HistoryEntry> history;

  std::size_t unused_count() const { return used.size() - used_count; }
};

inline DiscreteSearchState make_discrete_state(const ItemSet& items, double r, double gamma,
                                               ProtoWeighting weighting = ProtoWeighting::ratio) {
  require(std::isfinite(r) && r > 0.0, "discrete search: r must be positive");
  require(std::isfinite(gamma) && gamma > 0.0, "discrete search: gamma must be positive");
  DiscreteSearchState s;
  s.belief = DiscreteBelief::uniform(items.size());
  s.used.assign(items.size(), false);
  s.r = r;
  s.gamma = gamma;
  s.weighting = weighting;
  return s;
}

struct EigenPair {
  double value = 0.0;
  Point vector;
  int iterations = 0;
};

/// Dominant eigenpair of a symmetric positive semi-definite matrix by power
/// iteration from the all-ones vector nudged by 1e-3 on axis 0. Stops after
/// 100 iterations, or once the eigenvalue moves by less than 1e-9 relatively
/// and the residual is below 1e-7 of the eigenvalue. The sign is fixed so the
/// first nonzero coordinate is positive.
inline EigenPair power_iteration(const Eigen::MatrixXd& m) {
  require(m.rows() == m.cols() && m.rows() >= 1, "power_iteration: matrix must be square");
  const Eigen::Index d = m.rows();
  Point v = Point::Ones(d);
  v[0] += 1e-3;
  v.normalize();
  EigenPair out;
  double lambda = v.dot(m * v);
  for (int it = 1; it <= 100; ++it) {
    Point w = m * v;
    const double nw = w.norm();
    out.iterations = it;
    if (nw == 0.0) {
      lambda = 0.0;
      break;
    }
    v = w / nw;
    const double next = v.dot(m * v);
    const double change = std::abs(next - lambda);
    lambda = next;
    const double resid = (m * v - lambda * v).norm();
    if (change <= 1e-9 * std::abs(lambda) && resid <= 1e-7 * std::abs(lambda)) break;
  }
  for (Eigen::Index a = 0; a < d; ++a) {
    if (std::abs(v[a]) > 1e-12) {
      if (v[a] < 0.0) v = -v;
      break;
    }
  }
  out.value = lambda;
  out.vector = v;
  return out;
}

/// Belief-weighted mean and covariance of the item vectors.
inline std::pair<Point, Eigen::MatrixXd> belief_moments(const DiscreteBelief& belief, const ItemSet& items) {
  const int d = items.dim();
  Point mu = Point::Zero(d);
  for (std::size_t k = 0; k < items.size(); ++k) mu += belief.probs[k] * items[k].vector;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t k = 0; k < items.size(); ++k) {
    const Point c = items[k].vector - mu;
    cov.noalias() += belief.probs[k] * (c * c.transpose());
  }
  return {mu, cov};
}

/// The two proto-points mu +/- r sqrt(lambda) v, or nullopt for a
/// zero-variance belief.
inline std::optional<std::pair<Point, Point>> proto_points(const DiscreteSearchState& state, const ItemSet& items) {
  const auto [mu, cov] = belief_moments(state.belief, items);
  const EigenPair ep = power_iteration(cov);
  if (!(ep.value > 0.0)) return std::nullopt;
  const Point step = state.r * std::sqrt(ep.value) * ep.vector;
  return std::make_pair(Point(mu + step), Point(mu - step));
}

namespace detail {

/// Strict "a ranks before b": lower score, ties broken by smaller id.
inline bool ranks_before(double sa, const std::string& ida, double sb, const std::string& idb) {
  if (sa != sb) return sa < sb;
  return ida < idb;
}

inline double proto_score(double dist, double p, ProtoWeighting w) {
  if (w == ProtoWeighting::product) return p * dist;
  if (p <= 0.0) return std::numeric_limits<double>::infinity();
  return dist / p;
}

}  // namespace detail

/// Next query pair (item indices, i != j, both unused).
inline DiscreteQuery next_query(const DiscreteSearchState& state, const ItemSet& items) {
  require(state.used.size() == items.size(), "next_query: state does not match item set");
  if (state.unused_count() < 2) throw Exhausted("fewer than two unused items remain");
  const std::size_t n = items.size();
  const std::size_t none = n;

  // Best and second-best unused items under a scoring function.
  const auto best_two = [&](const auto& score) {
    std::size_t b1 = none, b2 = none;
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (state.used[k]) continue;
      const double s = score(k);
      if (b1 == none || detail::ranks_before(s, items[k].id, s1, items[b1].id)) {
        b2 = b1;
        s2 = s1;
        b1 = k;
        s1 = s;
      } else if (b2 == none || detail::ranks_before(s, items[k].id, s2, items[b2].id)) {
        b2 = k;
        s2 = s;
      }
    }
    return std::make_pair(b1, b2);
  };

  const auto protos = proto_points(state, items);
  if (!protos) {
    const auto [a, b] = best_two([&](std::size_t k) { return -state.belief.probs[k]; });
    return {a, b};
  }
  const auto score_for = [&](const Point& z) {
    return [&state, &items, &z](std::size_t k) {
      return detail::proto_score((items[k].vector - z).norm(), state.belief.probs[k], state.weighting);
    };
  };
  const auto [i, i2] = best_two(score_for(protos->first));
  (void)i2;
  const auto [j1, j2] = best_two(score_for(protos->second));
  return {i, j1 != i ? j1 : j2};
}

/// Bayes update with the answer (an item index in the query). Pure.
inline DiscreteSearchState update_posterior(DiscreteSearchState state, const ItemSet& items,
                                            const DiscreteQuery& q, std::size_t answer,
                                            const OracleModel& model) {
  require(state.used.size() == items.size(), "update_posterior: state does not match item set");
  require(q.i < items.size() && q.j < items.size() && q.i != q.j, "update_posterior: invalid query");
  if (answer != q.i && answer != q.j) throw InvalidInput("update_posterior: answer is not part of the query");
  const Point& winner = items[answer].vector;
  const Point& loser = items[answer == q.i ? q.j : q.i].vector;
  double c = 0.0;
  auto& p = state.belief.probs;
  for (std::size_t k = 0; k < items.size(); ++k) {
    p[k] *= answer_probability(model, winner, loser, items[k].vector);
    c += p[k];
  }
  if (!(c > 0.0)) throw DegenerateBelief("update_posterior: answer has zero probability under the belief");
  for (double& v : p) v /= c;
  for (std::size_t k : {q.i, q.j}) {
    if (!state.used[k]) {
      state.used[k] = true;
      ++state.used_count;
    }
  }
  state.history.push_back({q, answer});
  ++state.step;
  return state;
}

/// Expected reduction in belief entropy from asking (i, j). Reference scorer
/// for tests; O(n) per pair.
inline double expected_information_gain(const DiscreteBelief& belief, const ItemSet& items, std::size_t i,
                                        std::size_t j, const OracleModel& model) {
  const auto h2 = [](double p) {
    double h = 0.0;
    if (p > 0.0) h -= p * std::log(p);
    if (p < 1.0) h -= (1.0 - p) * std::log1p(-p);
    return h;
  };
  double marginal = 0.0, conditional = 0.0;
  for (std::size_t k = 0; k < items.size(); ++k) {
    const double q = answer_probability(model, items[i].vector, items[j].vector, items[k].vector);
    marginal += belief.probs[k] * q;
    conditional += belief.probs[k] * h2(q);
  }
  return h2(marginal) - conditional;
}

struct DiscreteTraceRow {
  long step = 0;
  std::string i, j, answer;
  double entropy = 0.0;
  double top1_prob = 0.0;
};

struct DiscreteRunResult {
  long steps = 0;
  std::vector<DiscreteTraceRow> trace;
};

class StepBudgetExceeded : public Exhausted {
 public:
  StepBudgetExceeded(const std::string& msg, std::vector<DiscreteTraceRow> trace)
      : Exhausted(msg), trace_(std::move(trace)) {}
  const std::vector<DiscreteTraceRow>& trace() const { return trace_; }

 private:
  std::vector<DiscreteTraceRow> trace_;
};

/// Simulated search until the target appears in a query pair.
inline DiscreteRunResult run_discrete_search(const ItemSet& items, std::size_t target, const OracleModel& model,
                                             double r, long max_steps, Rng& rng,
                                             ProtoWeighting weighting = ProtoWeighting::ratio) {
  require(target < items.size(), "run_discrete_search: target not in item set");
  require(model.dim() == items.dim(), "run_discrete_search: model dimension mismatch");
  DiscreteSearchState state = make_discrete_state(items, r, model.gamma(), weighting);
  DiscreteRunResult res;
  while (true) {
    if (state.step >= max_steps)
      throw StepBudgetExceeded("run_discrete_search: exceeded " + std::to_string(max_steps) + " steps",
                               std::move(res.trace));
    const DiscreteQuery q = next_query(state, items);
    const bool first = sample_answer(model, items[q.i].vector, items[q.j].vector, items[target].vector, rng);
    const std::size_t ans = first ? q.i : q.j;
    state = update_posterior(std::move(state), items, q, ans, model);
    res.trace.push_back({state.step, items[q.i].id, items[q.j].id, items[ans].id, state.belief.entropy(),
                         state.belief.probs[state.belief.top1()]});
    if (q.i == target || q.j == target) break;
  }
  res.steps = state.step;
  return res;
}

/// Baseline: uniformly random pairs of unused items until the target shows up.
inline long random_pair_steps(std::size_t n, std::size_t target, Rng& rng) {
  require(n >= 2 && target < n, "random_pair_steps: invalid arguments");
  std::vector<std::size_t> pool(n);
  for (std::size_t k = 0; k < n; ++k) pool[k] = k;
  long steps = 0;
  std::size_t left = n;
  while (left >= 2) {
    ++steps;
    bool hit = false;
    for (int pick = 0; pick < 2; ++pick) {
      const auto u = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(left));
      hit = hit || pool[u] == target;
      std::swap(pool[u], pool[left - 1]);
      --left;
    }
    if (hit) return steps;
  }
  throw Exhausted("random_pair_steps: target left unpaired");
}

}  // namespace sfsearch
