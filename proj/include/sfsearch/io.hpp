#pragma once

// File formats: JSON search configs and item manifests, triplet CSV, and the
// stage-log and discrete-trace CSV artifacts.

#include "embedding.hpp"
#include "search_continuous.hpp"
#include "search_discrete.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace sfsearch::io {

using nlohmann::json;

/// Shortest text that round-trips the double exactly.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidInput(what + ": malformed JSON: " + e.what());
  }
}

inline json point_json(const Point& p) {
  json a = json::array();
  for (Eigen::Index k = 0; k < p.size(); ++k) a.push_back(p[k]);
  return a;
}

inline Point point_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw InvalidInput(what + ": expected a non-empty array of numbers");
  Point p(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) {
    if (!j[k].is_number()) throw InvalidInput(what + ": element " + std::to_string(k) + " is not a number");
    p[static_cast<Eigen::Index>(k)] = j[k].get<double>();
  }
  if (!all_finite(p)) throw InvalidInput(what + ": non-finite coordinate");
  return p;
}

namespace detail {

inline void reject_unknown_keys(const json& j, const std::set<std::string>& known, const std::string& what) {
  if (!j.is_object()) throw InvalidInput(what + ": expected a JSON object");
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw InvalidInput(what + ": unknown field '" + key + "'");
}

template <class T>
T get_field(const json& j, const char* key, const std::string& what) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InvalidInput(what + ": field '" + key + "': " + e.what());
  }
}

template <class T>
void maybe(const json& j, const char* key, T& out, const std::string& what) {
  if (j.contains(key)) out = get_field<T>(j, key, what);
}

}  // namespace detail

// Region and SearchConfig ---------------------------------------------------------

inline json region_json(const Region& r) {
  return {{"center", point_json(r.center)}, {"edge", r.edge}, {"depth", r.depth}};
}

inline Region region_from_json(const json& j, const std::string& what = "region") {
  detail::reject_unknown_keys(j, {"center", "edge", "depth"}, what);
  if (!j.contains("center")) throw InvalidInput(what + ": missing 'center'");
  const double edge = detail::get_field<double>(j, "edge", what);
  int depth = 0;
  detail::maybe(j, "depth", depth, what);
  return make_region(point_from_json(j.at("center"), what + ".center"), edge, depth);
}

inline std::string to_string(Criterion c) { return c == Criterion::integration ? "integration" : "hypothesis_test"; }
inline std::string to_string(QueryPolicy p) { return p == QueryPolicy::random_pair ? "random_pair" : "canonical"; }
inline std::string to_string(OverlapRule r) {
  return r == OverlapRule::require_region_overlap ? "require_region_overlap" : "containment_only";
}
inline std::string to_string(DecisionKind k) {
  switch (k) {
    case DecisionKind::proceed: return "proceed";
    case DecisionKind::backtrack: return "backtrack";
    default: return "undecided";
  }
}

inline json config_json(const SearchConfig& c) {
  return {{"dim", c.dim},
          {"gamma", c.gamma},
          {"omega", {{"center", point_json(c.omega.center)}, {"edge", c.omega.edge}}},
          {"budget", c.budget},
          {"criterion", to_string(c.criterion)},
          {"alpha", c.alpha},
          {"delta_hat", c.delta_hat},
          {"grid_resolution", c.grid_resolution},
          {"max_queries_per_stage", c.max_queries_per_stage},
          {"region_prior", c.region_prior},
          {"seed", c.seed},
          {"query_policy", to_string(c.query_policy)},
          {"overlap_rule", to_string(c.overlap_rule)}};
}

/// Missing fields take their defaults; an omitted omega is the unit cube
/// centered at (0.5, ..., 0.5) in `dim` dimensions.
inline SearchConfig config_from_json(const json& j) {
  const std::string what = "search config";
  detail::reject_unknown_keys(j,
                              {"dim", "gamma", "omega", "budget", "criterion", "alpha", "delta_hat", "grid_resolution",
                               "max_queries_per_stage", "region_prior", "seed", "query_policy", "overlap_rule"},
                              what);
  SearchConfig c;
  detail::maybe(j, "dim", c.dim, what);
  detail::maybe(j, "gamma", c.gamma, what);
  if (c.dim < 1) throw InvalidInput(what + ": dim must be >= 1");
  c.omega = j.contains("omega") ? region_from_json(j.at("omega"), "omega")
                                : make_region(Point::Constant(c.dim, 0.5), 1.0);
  detail::maybe(j, "budget", c.budget, what);
  if (j.contains("criterion")) {
    const auto s = detail::get_field<std::string>(j, "criterion", what);
    if (s == "integration") c.criterion = Criterion::integration;
    else if (s == "hypothesis_test") c.criterion = Criterion::hypothesis_test;
    else throw InvalidInput(what + ": unknown criterion '" + s + "'");
  }
  detail::maybe(j, "alpha", c.alpha, what);
  detail::maybe(j, "delta_hat", c.delta_hat, what);
  detail::maybe(j, "grid_resolution", c.grid_resolution, what);
  detail::maybe(j, "max_queries_per_stage", c.max_queries_per_stage, what);
  detail::maybe(j, "region_prior", c.region_prior, what);
  detail::maybe(j, "seed", c.seed, what);
  if (j.contains("query_policy")) {
    const auto s = detail::get_field<std::string>(j, "query_policy", what);
    if (s == "random_pair") c.query_policy = QueryPolicy::random_pair;
    else if (s == "canonical") c.query_policy = QueryPolicy::canonical;
    else throw InvalidInput(what + ": unknown query_policy '" + s + "'");
  }
  if (j.contains("overlap_rule")) {
    const auto s = detail::get_field<std::string>(j, "overlap_rule", what);
    if (s == "require_region_overlap") c.overlap_rule = OverlapRule::require_region_overlap;
    else if (s == "containment_only") c.overlap_rule = OverlapRule::containment_only;
    else throw InvalidInput(what + ": unknown overlap_rule '" + s + "'");
  }
  c.validate();
  return c;
}

// Item manifest ---------------------------------------------------------------------

inline json manifest_json(const ItemSet& items) {
  json a = json::array();
  for (const auto& it : items.items()) {
    json e = {{"id", it.id}, {"vector", point_json(it.vector)}};
    if (it.display_url) e["display_url"] = *it.display_url;
    a.push_back(std::move(e));
  }
  return a;
}

/// `[{"id", "vector": [...], "display_url"?}, ...]`
inline ItemSet manifest_from_json(const json& j) {
  if (!j.is_array()) throw InvalidInput("item manifest: expected a JSON array");
  std::vector<Item> items;
  items.reserve(j.size());
  for (std::size_t k = 0; k < j.size(); ++k) {
    const std::string what = "item manifest entry " + std::to_string(k);
    detail::reject_unknown_keys(j[k], {"id", "vector", "display_url"}, what);
    Item it;
    it.id = detail::get_field<std::string>(j[k], "id", what);
    if (!j[k].contains("vector")) throw InvalidInput(what + ": missing 'vector'");
    it.vector = point_from_json(j[k].at("vector"), what + ".vector");
    if (j[k].contains("display_url")) it.display_url = detail::get_field<std::string>(j[k], "display_url", what);
    items.push_back(std::move(it));
  }
  return ItemSet(std::move(items));
}

// CSV ------------------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\n\r\"") != std::string::npos)
    throw InvalidInput("CSV field '" + s + "' contains a reserved character");
  return s;
}

}  // namespace detail

/// Triplet CSV with header `i,j,t`: "i was chosen as closer to t than j".
inline std::vector<Triplet> triplets_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::vector<Triplet> out;
  long lineno = 0;
  bool header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (!header) {
      if (cells != std::vector<std::string>{"i", "j", "t"})
        throw InvalidInput("triplet CSV: header must be 'i,j,t'");
      header = true;
      continue;
    }
    if (cells.size() != 3 || cells[0].empty() || cells[1].empty() || cells[2].empty())
      throw InvalidInput("triplet CSV line " + std::to_string(lineno) + ": expected three non-empty ids");
    if (cells[0] == cells[1])
      throw InvalidInput("triplet CSV line " + std::to_string(lineno) + ": winner equals loser");
    out.push_back({cells[0], cells[1], cells[2]});
  }
  if (!header) throw InvalidInput("triplet CSV: missing header");
  return out;
}

inline std::string triplets_to_csv(const std::vector<Triplet>& ts) {
  std::string s = "i,j,t\n";
  for (const auto& t : ts) s += detail::csv_field(t.i) + "," + detail::csv_field(t.j) + "," + detail::csv_field(t.t) + "\n";
  return s;
}

inline std::string stage_log_header(int dim, bool with_run = false) {
  std::string s = with_run ? "run," : "";
  s += "stage,decision,child_index,queries_in_stage,cumulative_queries";
  for (int a = 0; a < dim; ++a) s += ",region_center_" + std::to_string(a);
  s += ",region_edge,depth,dist_to_target,dist_pow_d\n";
  return s;
}

/// One row per stage record; distances are measured from the region reached
/// by the record (its `after` region) to the target.
inline std::string stage_log_rows(const std::vector<StageRecord>& log, const Point& target, long run = -1) {
  std::string s;
  const auto d = static_cast<double>(target.size());
  for (const auto& r : log) {
    const double dist = (r.after.center - target).norm();
    if (run >= 0) s += std::to_string(run) + ",";
    s += std::to_string(r.stage) + "," + to_string(r.decision) + "," + std::to_string(r.child_index) + "," +
         std::to_string(r.queries_in_stage) + "," + std::to_string(r.cumulative_queries);
    for (Eigen::Index a = 0; a < r.after.center.size(); ++a) s += "," + fmt(r.after.center[a]);
    s += "," + fmt(r.after.edge) + "," + std::to_string(r.after.depth) + "," + fmt(dist) + "," +
         fmt(std::pow(dist, d)) + "\n";
  }
  return s;
}

inline std::string stage_log_csv(const std::vector<StageRecord>& log, const Point& target) {
  return stage_log_header(static_cast<int>(target.size())) + stage_log_rows(log, target);
}

inline std::string discrete_trace_csv(const std::vector<DiscreteTraceRow>& trace) {
  std::string s = "step,i,j,answer,entropy_of_belief,top1_prob\n";
  for (const auto& r : trace)
    s += std::to_string(r.step) + "," + detail::csv_field(r.i) + "," + detail::csv_field(r.j) + "," +
         detail::csv_field(r.answer) + "," + fmt(r.entropy) + "," + fmt(r.top1_prob) + "\n";
  return s;
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace sfsearch::io
