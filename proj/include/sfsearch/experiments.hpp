#pragma once

// Experiment runners behind the command-line tool. Each takes a JSON payload
// and a seed and returns its artifacts as named text files; outputs depend
// only on the payload and the seed.

#include "embedding.hpp"
#include "geometry.hpp"
#include "io.hpp"
#include "oracle.hpp"
#include "search_continuous.hpp"
#include "search_discrete.hpp"
#include "stats.hpp"
#include "walk.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace sfsearch::experiments {

using nlohmann::json;

/// File name -> contents, written in name order.
using Artifacts = std::map<std::string, std::string>;

namespace detail {

/// Reads `key` or returns `fallback`, turning type errors into InvalidInput.
template <class T>
T value_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("field '") + key + "': " + e.what());
  }
}

inline void require_object(const json& j, const std::string& what) {
  if (!j.is_object()) throw InvalidInput(what + ": expected a JSON object");
}

inline json fit_json(const stats::LinearFit& f) {
  return {{"slope", f.slope}, {"intercept", f.intercept}, {"r_squared", f.r_squared}};
}

inline std::filesystem::path resolve(const std::string& base_dir, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base_dir.empty() ? path : std::filesystem::path(base_dir) / path;
}

}  // namespace detail

// simulate-continuous ------------------------------------------------------------

/// Payload: {"search": SearchConfig, "runs": N, "target"?: [..], "grid_step"?: q}.
/// Run r searches with seed substream(seed, r)() for a target drawn
/// uniformly in omega from substream(seed, 10000 + r) unless fixed.
inline Artifacts simulate_continuous(const json& payload, std::uint64_t seed) {
  detail::require_object(payload, "simulate-continuous");
  io::detail::reject_unknown_keys(payload, {"search", "runs", "target", "grid_step", "seed"}, "simulate-continuous");
  SearchConfig base = io::config_from_json(payload.value("search", json::object()));
  const long runs = detail::value_or<long>(payload, "runs", 1);
  require(runs >= 1, "simulate-continuous: runs must be >= 1");
  const long step = detail::value_or<long>(payload, "grid_step", std::max<long>(1, base.budget / 40));
  require(step >= 1, "simulate-continuous: grid_step must be >= 1");
  std::optional<Point> fixed;
  if (payload.contains("target")) {
    fixed = io::point_from_json(payload.at("target"), "target");
    require(fixed->size() == base.dim, "simulate-continuous: target dimension must equal dim");
  }

  std::vector<long> grid;
  for (long m = 0; m <= base.budget; m += step) grid.push_back(m);
  if (grid.back() != base.budget) grid.push_back(base.budget);

  const double d = base.dim;
  std::vector<std::vector<double>> dist(grid.size());
  std::string log_csv = io::stage_log_header(base.dim, true);
  std::string runs_csv = "run,stages,final_depth,final_edge,final_dist,final_dist_pow_d\n";
  for (long r = 0; r < runs; ++r) {
    SearchConfig c = base;
    c.seed = substream(seed, static_cast<std::uint64_t>(r))();
    Point xt;
    if (fixed) {
      xt = *fixed;
    } else {
      Rng trng = substream(seed, 10000 + static_cast<std::uint64_t>(r));
      xt = Point(base.dim);
      for (int a = 0; a < base.dim; ++a) xt[a] = base.omega.center[a] + (uniform01(trng) - 0.5) * base.omega.edge;
    }
    const SearchResult res = simulate_search(c, xt);
    log_csv += io::stage_log_rows(res.log, xt, r);
    for (std::size_t g = 0; g < grid.size(); ++g) dist[g].push_back((region_at(c, res.log, grid[g]).center - xt).norm());
    const double fd = (res.final_region.center - xt).norm();
    runs_csv += std::to_string(r) + "," + std::to_string(res.log.size()) + "," + std::to_string(res.final_region.depth) +
                "," + io::fmt(res.final_region.edge) + "," + io::fmt(fd) + "," + io::fmt(std::pow(fd, d)) + "\n";
  }

  std::string quant_csv = "queries,dist_q10,dist_median,dist_q90,dist_pow_d_median\n";
  json checkpoints = json::array();
  std::vector<double> xs, ys;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double q10 = stats::quantile(dist[g], 0.1), med = stats::median(dist[g]), q90 = stats::quantile(dist[g], 0.9);
    quant_csv += std::to_string(grid[g]) + "," + io::fmt(q10) + "," + io::fmt(med) + "," + io::fmt(q90) + "," +
                 io::fmt(std::pow(med, d)) + "\n";
    if (med > 0.0) {
      xs.push_back(static_cast<double>(grid[g]));
      ys.push_back(std::log(med));
    }
  }
  json summary = {{"runs", runs},
                  {"budget", base.budget},
                  {"dim", base.dim},
                  {"gamma", base.gamma},
                  {"criterion", io::to_string(base.criterion)},
                  {"initial_median_dist", stats::median(dist.front())},
                  {"final_median_dist", stats::median(dist.back())},
                  {"final_median_dist_over_edge", stats::median(dist.back()) / base.omega.edge}};
  bool distinct = false;
  for (double x : xs) distinct = distinct || x != xs.front();
  summary["log_median_fit"] = distinct ? detail::fit_json(stats::linear_fit(xs, ys)) : json(nullptr);
  return {{"stage_log.csv", log_csv}, {"runs.csv", runs_csv}, {"quantiles.csv", quant_csv},
          {"summary.json", io::dump(summary)}};
}

// simulate-discrete ---------------------------------------------------------------

/// Payload: {"n", "dim", "gamma", "r", "runs", "max_steps", "weighting"?,
/// "items"?: manifest path}. Items default to standard Gaussian vectors.
inline Artifacts simulate_discrete(const json& payload, std::uint64_t seed, const std::string& base_dir = {}) {
  detail::require_object(payload, "simulate-discrete");
  io::detail::reject_unknown_keys(payload, {"n", "dim", "gamma", "r", "runs", "max_steps", "weighting", "items", "seed"},
                                  "simulate-discrete");
  const double gamma = detail::value_or<double>(payload, "gamma", 3.0);
  const double r = detail::value_or<double>(payload, "r", 2.0);
  const long runs = detail::value_or<long>(payload, "runs", 1);
  const long max_steps = detail::value_or<long>(payload, "max_steps", 100000);
  const std::string w = detail::value_or<std::string>(payload, "weighting", "ratio");
  require(w == "ratio" || w == "product", "simulate-discrete: weighting must be ratio or product");
  require(runs >= 1 && max_steps >= 1, "simulate-discrete: runs and max_steps must be >= 1");
  const ProtoWeighting weighting = w == "ratio" ? ProtoWeighting::ratio : ProtoWeighting::product;

  ItemSet items;
  if (payload.contains("items")) {
    const auto path = detail::resolve(base_dir, detail::value_or<std::string>(payload, "items", ""));
    items = io::manifest_from_json(io::parse_json(io::read_file(path.string()), path.string()));
  } else {
    const long n = detail::value_or<long>(payload, "n", 500);
    const int dim = detail::value_or<int>(payload, "dim", 5);
    require(n >= 2 && dim >= 1, "simulate-discrete: need n >= 2 and dim >= 1");
    Rng irng = substream(seed, 0);
    std::vector<Item> v;
    v.reserve(static_cast<std::size_t>(n));
    const int width = static_cast<int>(std::to_string(n - 1).size());
    for (long k = 0; k < n; ++k) {
      Point x(dim);
      for (int a = 0; a < dim; ++a) x[a] = standard_normal(irng);
      std::string id = std::to_string(k);
      id.insert(0, static_cast<std::size_t>(width) - id.size(), '0');
      v.push_back({"item" + id, x, std::nullopt});
    }
    items = ItemSet(std::move(v));
  }
  const OracleModel model(gamma, items.dim());

  std::string trace_csv = "run,step,i,j,answer,entropy_of_belief,top1_prob\n";
  std::string runs_csv = "run,target,steps,random_pair_steps\n";
  std::vector<double> steps, baseline;
  for (long run = 0; run < runs; ++run) {
    const auto ur = static_cast<std::uint64_t>(run);
    Rng trng = substream(seed, 1000 + ur);
    const auto target = static_cast<std::size_t>(uniform01(trng) * static_cast<double>(items.size()));
    Rng orng = substream(seed, 2000 + ur);
    const DiscreteRunResult res = run_discrete_search(items, target, model, r, max_steps, orng, weighting);
    Rng brng = substream(seed, 3000 + ur);
    const long base = random_pair_steps(items.size(), target, brng);
    const std::string body = io::discrete_trace_csv(res.trace);
    std::istringstream is(body);
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) trace_csv += std::to_string(run) + "," + line + "\n";
    runs_csv += std::to_string(run) + "," + items[target].id + "," + std::to_string(res.steps) + "," +
                std::to_string(base) + "\n";
    steps.push_back(static_cast<double>(res.steps));
    baseline.push_back(static_cast<double>(base));
  }
  const double med = stats::median(steps), bmed = stats::median(baseline);
  const json summary = {{"runs", runs},
                        {"n", items.size()},
                        {"dim", items.dim()},
                        {"gamma", gamma},
                        {"r", r},
                        {"weighting", w},
                        {"median_steps", med},
                        {"random_pair_median_steps", bmed},
                        {"relative_reduction", 1.0 - med / bmed}};
  return {{"trace.csv", trace_csv}, {"runs.csv", runs_csv}, {"summary.json", io::dump(summary)}};
}

// calibrate-gamma ----------------------------------------------------------------

inline std::vector<double> gamma_grid(const json& j) {
  std::vector<double> grid;
  if (j.is_array()) {
    for (const auto& v : j) {
      if (!v.is_number()) throw InvalidInput("calibrate-gamma: grid values must be numbers");
      grid.push_back(v.get<double>());
    }
  } else if (j.is_object()) {
    const double start = detail::value_or<double>(j, "start", 0.25), stop = detail::value_or<double>(j, "stop", 40.0),
                 step = detail::value_or<double>(j, "step", 0.25);
    require(start > 0.0 && step > 0.0 && stop >= start, "calibrate-gamma: invalid grid range");
    const auto count = static_cast<long>(std::floor((stop - start) / step + 1e-9));
    for (long k = 0; k <= count; ++k) grid.push_back(start + static_cast<double>(k) * step);
  } else {
    throw InvalidInput("calibrate-gamma: grid must be a list or {start, stop, step}");
  }
  return grid;
}

/// Payload: {"reference": {"dim", "gamma"}, "dims": [...], "grid": [...] or
/// {start, stop, step}, "samples"}.
inline Artifacts calibrate(const json& payload, std::uint64_t seed) {
  detail::require_object(payload, "calibrate-gamma");
  io::detail::reject_unknown_keys(payload, {"reference", "dims", "grid", "samples", "seed"}, "calibrate-gamma");
  const json ref = payload.value("reference", json::object());
  const int ref_dim = detail::value_or<int>(ref, "dim", 10);
  const double ref_gamma = detail::value_or<double>(ref, "gamma", 5.0);
  const auto dims = detail::value_or<std::vector<int>>(payload, "dims", {});
  require(!dims.empty(), "calibrate-gamma: dims must be a non-empty list");
  const auto grid = gamma_grid(payload.value("grid", json::object()));
  const long samples = detail::value_or<long>(payload, "samples", 100000);
  require(samples >= 1, "calibrate-gamma: samples must be >= 1");

  Rng rref = substream(seed, 0);
  const double target = estimate_mean_accuracy(OracleModel(ref_gamma, ref_dim), samples, rref).p_hat;
  std::string csv = "d,gamma,p_hat\n";
  std::vector<double> xs, ys;
  for (int d : dims) {
    require(d >= 1, "calibrate-gamma: dims must be >= 1");
    double g;
    if (d == ref_dim && std::find(grid.begin(), grid.end(), ref_gamma) != grid.end()) {
      g = ref_gamma;  // identical dimension: the reference itself
    } else {
      Rng rd = substream(seed, static_cast<std::uint64_t>(d));
      g = calibrate_gamma(d, target, grid, samples, rd);
    }
    Rng rp = substream(seed, 100000 + static_cast<std::uint64_t>(d));
    const double p = estimate_mean_accuracy(OracleModel(g, d), samples, rp).p_hat;
    csv += std::to_string(d) + "," + io::fmt(g) + "," + io::fmt(p) + "\n";
    xs.push_back(d);
    ys.push_back(g);
  }
  bool distinct = false;
  for (double x : xs) distinct = distinct || x != xs.front();
  const json summary = {{"reference", {{"dim", ref_dim}, {"gamma", ref_gamma}, {"accuracy", target}}},
                        {"samples", samples},
                        {"fit", distinct ? detail::fit_json(stats::linear_fit(xs, ys)) : json(nullptr)}};
  return {{"calibration.csv", csv}, {"summary.json", io::dump(summary)}};
}

// verify-walk ------------------------------------------------------------------------

/// Default transition table meeting both assumptions for margin b.
inline TransitionProbs default_transition_probs(const BiasParams& b) {
  TransitionProbs p;
  const double e = 0.1 * b.b() * (1.0 - b.b()) / (1.0 + b.b());
  p.q_u = e;
  p.q_s = e;
  p.p_d = 1.0 - 2.0 * e;
  p.q_d = 0.25 * (1.0 - b.b());
  p.p_r = 0.1 * (1.0 - p.q_d);
  p.p_u = 1.0 - p.q_d - p.p_r;
  return p;
}

/// Payload: {"b", "stationary_steps", "stray_episodes", "tail_runs",
/// "tail_stages", "tail_ks", "region_walk"?: {"dim", "stages", "runs", "probs"?}}.
inline Artifacts verify_walk(const json& payload, std::uint64_t seed) {
  detail::require_object(payload, "verify-walk");
  io::detail::reject_unknown_keys(payload,
                                  {"b", "stationary_steps", "stray_episodes", "tail_runs", "tail_stages", "tail_ks",
                                   "region_walk", "seed"},
                                  "verify-walk");
  const BiasParams b(detail::value_or<double>(payload, "b", 0.5));
  const long st_steps = detail::value_or<long>(payload, "stationary_steps", 1000000);
  const long episodes = detail::value_or<long>(payload, "stray_episodes", 10000);
  const long tail_runs = detail::value_or<long>(payload, "tail_runs", 20000);
  const auto tail_stages = detail::value_or<std::vector<int>>(payload, "tail_stages", {10, 100});
  const auto tail_ks = detail::value_or<std::vector<int>>(payload, "tail_ks", {1, 2, 3});
  require(st_steps >= 10000, "verify-walk: stationary_steps must be >= 10000");
  require(episodes >= 100, "verify-walk: stray_episodes must be >= 100");
  require(tail_runs >= 1, "verify-walk: tail_runs must be >= 1");
  json report;
  bool all_pass = true;

  {
    // Occupancy of state 0 after a 10% burn-in, with a batch-means error.
    Rng rng = substream(seed, 0);
    const WalkTrace t = simulate_z(0, b, st_steps, rng);
    const long burn = st_steps / 10;
    const long kept = st_steps - burn;
    const int batches = 20;
    std::vector<double> means;
    long zeros = 0;
    for (int k = 0; k < batches; ++k) {
      const long lo = burn + 1 + kept * k / batches, hi = burn + 1 + kept * (k + 1) / batches;
      long c = 0;
      for (long s = lo; s < hi; ++s) c += t.states[static_cast<std::size_t>(s)] == 0;
      zeros += c;
      means.push_back(static_cast<double>(c) / static_cast<double>(hi - lo));
    }
    const double pi0 = static_cast<double>(zeros) / static_cast<double>(kept);
    const double se = stats::mean_ci(means).std_err;
    const double expected = 2.0 * b.b() / (b.b() + 1.0);
    const double tol = 0.01;
    std::string status;
    if (2.0 * se > tol) status = "insufficient_precision";
    else status = std::abs(pi0 - expected) <= tol ? "pass" : "fail";
    all_pass = all_pass && status != "fail";
    report["stationary"] = {{"pi0", pi0}, {"expected", expected}, {"std_err", se}, {"tolerance", tol},
                            {"steps", st_steps}, {"status", status}};
  }
  {
    Rng rng = substream(seed, 1);
    const auto ci = estimate_stray_time(b, episodes, rng);
    const double expected = 1.0 / b.b();
    const bool ok = ci.lo <= expected && expected <= ci.hi;
    all_pass = all_pass && ok;
    report["stray_time"] = {{"mean", ci.mean}, {"ci_lo", ci.lo}, {"ci_hi", ci.hi}, {"expected", expected},
                            {"episodes", episodes}, {"status", ok ? "pass" : "fail"}};
  }
  {
    json rows = json::array();
    Rng rng = substream(seed, 2);
    for (int s : tail_stages) {
      for (int k : tail_ks) {
        const TailEstimate e = error_tail(b, s, k, tail_runs, rng);
        const double sigma = std::sqrt(e.bound * (1.0 - e.bound) / static_cast<double>(tail_runs));
        const bool ok = e.frequency <= e.bound + 3.0 * sigma;
        all_pass = all_pass && ok;
        rows.push_back({{"s", s}, {"k", k}, {"frequency", e.frequency}, {"bound", e.bound}, {"sigma", sigma},
                        {"status", ok ? "pass" : "fail"}});
      }
    }
    report["tail_bound"] = rows;
  }
  {
    const json rw = payload.value("region_walk", json::object());
    const int dim = detail::value_or<int>(rw, "dim", 2);
    const int stages = detail::value_or<int>(rw, "stages", 400);
    const int runs = detail::value_or<int>(rw, "runs", 200);
    require(dim >= 1 && stages >= 1 && runs >= 2, "verify-walk: invalid region_walk settings");
    TransitionProbs p = default_transition_probs(b);
    if (rw.contains("probs")) {
      const json& pj = rw.at("probs");
      p.p_d = detail::value_or<double>(pj, "p_d", p.p_d);
      p.q_u = detail::value_or<double>(pj, "q_u", p.q_u);
      p.q_s = detail::value_or<double>(pj, "q_s", p.q_s);
      p.p_u = detail::value_or<double>(pj, "p_u", p.p_u);
      p.p_r = detail::value_or<double>(pj, "p_r", p.p_r);
      p.q_d = detail::value_or<double>(pj, "q_d", p.q_d);
    }
    p.validate(b);
    std::vector<double> rates;
    bool dominated = true;
    for (int r = 0; r < runs; ++r) {
      Rng rng = substream(seed, 100 + static_cast<std::uint64_t>(r));
      Point xt(dim);
      for (int a = 0; a < dim; ++a) xt[a] = uniform01(rng) - 0.5;
      const auto steps = simulate_region_walk(p, b, xt, make_region(Point::Zero(dim), 1.0), stages, rng);
      for (const auto& st : steps) dominated = dominated && st.z <= st.z_bound;
      rates.push_back(static_cast<double>(steps.back().region.depth) / stages);
    }
    const auto ci = stats::mean_ci(rates);
    const double bound = p.depth_rate_bound(b);
    const bool ok = dominated && ci.hi >= bound;
    all_pass = all_pass && ok;
    report["region_walk"] = {{"depth_rate", ci.mean}, {"depth_rate_ci_lo", ci.lo}, {"depth_rate_ci_hi", ci.hi},
                             {"rate_bound", bound}, {"z_dominated", dominated}, {"runs", runs},
                             {"stages", stages}, {"status", ok ? "pass" : "fail"}};
  }
  report["b"] = b.b();
  report["all_passed"] = all_pass;
  return {{"report.json", io::dump(report)}};
}

// fit-embedding ------------------------------------------------------------------------

inline TrainConfig train_config_from_json(const json& j) {
  detail::require_object(j, "train");
  io::detail::reject_unknown_keys(
      j, {"dim", "gamma", "learning_rate", "batch_size", "l2_lambda", "epochs", "folds"}, "train");
  TrainConfig c;
  c.dim = detail::value_or(j, "dim", c.dim);
  c.gamma = detail::value_or(j, "gamma", c.gamma);
  c.learning_rate = detail::value_or(j, "learning_rate", c.learning_rate);
  c.batch_size = detail::value_or(j, "batch_size", c.batch_size);
  c.l2_lambda = detail::value_or(j, "l2_lambda", c.l2_lambda);
  c.epochs = detail::value_or(j, "epochs", c.epochs);
  c.folds = detail::value_or(j, "folds", c.folds);
  c.validate();
  return c;
}

/// Payload: {"triplets": csv path} or {"synthetic": {"n", "dim", "gamma",
/// "count"}}, plus "train": TrainConfig, "holdout_fraction", "cross_validate".
/// The last holdout_fraction of the (seed-shuffled) triplets is held out.
inline Artifacts fit_embedding(const json& payload, std::uint64_t seed, const std::string& base_dir = {}) {
  detail::require_object(payload, "fit-embedding");
  io::detail::reject_unknown_keys(
      payload, {"triplets", "synthetic", "train", "holdout_fraction", "cross_validate", "seed"}, "fit-embedding");
  TrainConfig tc = train_config_from_json(payload.value("train", json::object()));
  tc.seed = seed;
  const double holdout_fraction = detail::value_or<double>(payload, "holdout_fraction", 0.1);
  require(holdout_fraction > 0.0 && holdout_fraction < 1.0, "fit-embedding: holdout_fraction must lie in (0,1)");

  Artifacts out;
  std::vector<Triplet> triplets;
  std::optional<Embedding> truth;
  if (payload.contains("triplets") == payload.contains("synthetic"))
    throw InvalidInput("fit-embedding: give exactly one of 'triplets' or 'synthetic'");
  if (payload.contains("triplets")) {
    const auto path = detail::resolve(base_dir, detail::value_or<std::string>(payload, "triplets", ""));
    triplets = io::triplets_from_csv(io::read_file(path.string()));
  } else {
    const json& s = payload.at("synthetic");
    const long n = detail::value_or<long>(s, "n", 50);
    const int dim = detail::value_or<int>(s, "dim", 2);
    const double gamma = detail::value_or<double>(s, "gamma", 4.0);
    const long count = detail::value_or<long>(s, "count", 5000);
    require(n >= 3 && dim >= 1 && count >= 2 && gamma > 0.0, "fit-embedding: invalid synthetic settings");
    Rng rng = substream(seed, 50);
    Eigen::MatrixXd x(n, dim);
    for (Eigen::Index r = 0; r < x.rows(); ++r)
      for (Eigen::Index c = 0; c < x.cols(); ++c) x(r, c) = standard_normal(rng);
    std::vector<std::string> ids;
    const int width = static_cast<int>(std::to_string(n - 1).size());
    for (long k = 0; k < n; ++k) {
      std::string id = std::to_string(k);
      id.insert(0, static_cast<std::size_t>(width) - id.size(), '0');
      ids.push_back("obj" + id);
    }
    truth.emplace(ids, x);
    for (const auto& t : sample_triplets(x, gamma, static_cast<std::size_t>(count), rng))
      triplets.push_back({ids[t.i], ids[t.j], ids[t.t]});
    out["triplets.csv"] = io::triplets_to_csv(triplets);
    out["truth.json"] = io::dump(io::manifest_json(truth->to_item_set()));
  }
  require(triplets.size() >= 2, "fit-embedding: need at least two triplets");

  std::vector<std::size_t> order(triplets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng srng = substream(seed, 51);
  for (std::size_t m = order.size(); m > 1; --m) {
    const auto u = static_cast<std::size_t>(uniform01(srng) * static_cast<double>(m));
    std::swap(order[m - 1], order[u]);
  }
  const auto n_hold = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(holdout_fraction * static_cast<double>(triplets.size()))));
  std::vector<Triplet> train, hold;
  for (std::size_t k = 0; k < order.size(); ++k)
    (k + n_hold < order.size() ? train : hold).push_back(triplets[order[k]]);
  const auto ids = vocabulary(triplets);
  const Embedding emb = fit(train, tc, ids);
  json report = {{"triplets", triplets.size()},
                 {"train_size", train.size()},
                 {"holdout_size", hold.size()},
                 {"holdout_accuracy", evaluate_accuracy(emb, hold, tc.gamma)}};
  if (truth) {
    double ceiling = 0.0;
    for (const auto& t : truth->resolve(hold)) {
      const double p = choice_probability((truth->vector(t.i) - truth->vector(t.t)).norm(),
                                          (truth->vector(t.j) - truth->vector(t.t)).norm(), tc.gamma);
      ceiling += std::max(p, 1.0 - p);
    }
    report["oracle_ceiling"] = ceiling / static_cast<double>(hold.size());
  }
  if (detail::value_or<bool>(payload, "cross_validate", false)) {
    const CrossValidation cv = cross_validate(triplets, tc);
    report["cross_validation"] = {{"folds", tc.folds}, {"fold_accuracies", cv.fold_accuracies}, {"mean", cv.mean}};
  }
  out["holdout.csv"] = io::triplets_to_csv(hold);
  out["embedding.json"] = io::dump(io::manifest_json(emb.to_item_set()));
  out["report.json"] = io::dump(report);
  return out;
}

// identifiability ------------------------------------------------------------------------

/// Payload: {"target": [..], "queries": [[a, b], ...], "formula"?}. Degenerate
/// queries are listed and left out of the rank.
inline Artifacts identifiability(const json& payload) {
  detail::require_object(payload, "identifiability");
  io::detail::reject_unknown_keys(payload, {"target", "queries", "formula", "seed"}, "identifiability");
  if (!payload.contains("target")) throw InvalidInput("identifiability: missing 'target'");
  const Point xt = io::point_from_json(payload.at("target"), "target");
  const std::string f = detail::value_or<std::string>(payload, "formula", "apollonius");
  require(f == "apollonius" || f == "printed", "identifiability: formula must be apollonius or printed");
  const auto formula = f == "printed" ? SphereCenterFormula::printed : SphereCenterFormula::apollonius;
  const json qs = payload.value("queries", json::array());
  if (!qs.is_array()) throw InvalidInput("identifiability: queries must be a list of [a, b] pairs");

  QuerySet usable;
  json degenerate = json::array(), centers = json::array();
  for (std::size_t k = 0; k < qs.size(); ++k) {
    if (!qs[k].is_array() || qs[k].size() != 2) throw InvalidInput("identifiability: query " + std::to_string(k) + " must be [a, b]");
    QueryPair q{io::point_from_json(qs[k][0], "query"), io::point_from_json(qs[k][1], "query")};
    if (q.first.size() != xt.size() || q.second.size() != xt.size())
      throw InvalidInput("identifiability: query " + std::to_string(k) + " dimension mismatch");
    std::string reason;
    std::optional<Point> z;
    try {
      z = sphere_center(q, xt, formula);
      if (!z) reason = "equidistant: tie locus is a hyperplane";
    } catch (const InvalidInput& e) {
      reason = e.what();
    }
    if (!reason.empty()) {
      degenerate.push_back({{"index", k}, {"reason", reason}});
      continue;
    }
    centers.push_back(io::point_json(*z));
    usable.push_back(std::move(q));
  }
  const int rank = usable.size() >= 2 ? identifiability_rank(usable, xt, formula) : 0;
  const json report = {{"dim", xt.size()},   {"rank", rank},         {"identifiable", rank == xt.size()},
                       {"formula", f},       {"centers", centers},   {"degenerate", degenerate}};
  return {{"report.json", io::dump(report)}};
}

}  // namespace sfsearch::experiments
