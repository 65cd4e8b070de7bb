#pragma once

// Interactive search sessions where a person answers the queries. The store
// hands out one pending query per session, tagged with a nonce that an
// answer must echo, and can snapshot every session to JSON.

#include "io.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>

namespace sfsearch::service {

using nlohmann::json;

/// Error with an HTTP-style status and a stable machine-readable code.
class ServiceError : public Error {
 public:
  ServiceError(int status, std::string code, const std::string& message)
      : Error(message), status_(status), code_(std::move(code)) {}
  int status() const noexcept { return status_; }
  const std::string& code() const noexcept { return code_; }

 private:
  int status_;
  std::string code_;
};

inline ServiceError not_found(const std::string& m) { return {404, "not_found", m}; }
inline ServiceError conflict(const std::string& m) { return {409, "conflict", m}; }
inline ServiceError bad_request(const std::string& m) { return {400, "invalid_input", m}; }

enum class Mode { continuous, discrete };

inline std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace detail {

/// JSON has no infinities; a log weight of -inf is stored as null.
inline json log_weights_json(const std::vector<double>& lw) {
  json a = json::array();
  for (double v : lw) a.push_back(std::isfinite(v) ? json(v) : json(nullptr));
  return a;
}

inline std::vector<double> log_weights_from_json(const json& j) {
  std::vector<double> lw;
  lw.reserve(j.size());
  for (const auto& v : j) lw.push_back(v.is_null() ? -std::numeric_limits<double>::infinity() : v.get<double>());
  return lw;
}

inline json stage_record_json(const StageRecord& r) {
  return {{"stage", r.stage},
          {"before", io::region_json(r.before)},
          {"after", io::region_json(r.after)},
          {"decision", io::to_string(r.decision)},
          {"child_index", r.child_index},
          {"queries_in_stage", r.queries_in_stage},
          {"cumulative_queries", r.cumulative_queries},
          {"forced", r.forced}};
}

inline StageRecord stage_record_from_json(const json& j) {
  StageRecord r;
  r.stage = j.at("stage").get<int>();
  r.before = io::region_from_json(j.at("before"));
  r.after = io::region_from_json(j.at("after"));
  const auto d = j.at("decision").get<std::string>();
  r.decision = d == "proceed" ? DecisionKind::proceed : DecisionKind::backtrack;
  r.child_index = j.at("child_index").get<long>();
  r.queries_in_stage = j.at("queries_in_stage").get<long>();
  r.cumulative_queries = j.at("cumulative_queries").get<long>();
  r.forced = j.at("forced").get<bool>();
  return r;
}

inline json item_json(const Item& it) {
  json e = {{"id", it.id}, {"vector", io::point_json(it.vector)}};
  if (it.display_url) e["display_url"] = *it.display_url;
  return e;
}

}  // namespace detail

/// Continuous search with a human oracle, integration criterion only: the
/// hypothesis test needs thousands of repeats of one query per cell.
class ContinuousSession {
 public:
  explicit ContinuousSession(SearchConfig config) : search_(validated(std::move(config))) {}
  explicit ContinuousSession(IntegrationSearch search) : search_(std::move(search)) {}

  bool terminal() const { return search_.finished(); }
  long history_length() const { return search_.queries(); }
  const IntegrationSearch& search() const { return search_; }

  json pending_json() const {
    const QueryPair& q = search_.pending();
    return {{"first", io::point_json(q.first)}, {"second", io::point_json(q.second)}};
  }

  /// `choice` is "first" or "second": the point the person found closer.
  json answer(const json& choice) {
    if (!choice.is_string()) throw bad_request("choice must be \"first\" or \"second\"");
    const auto c = choice.get<std::string>();
    if (c != "first" && c != "second") throw bad_request("choice must be \"first\" or \"second\"");
    const auto rec = search_.submit(c == "first");
    json out = json::object();
    if (rec) out["stage_completed"] = detail::stage_record_json(*rec);
    return out;
  }

  json belief_json() const {
    const Region& r = search_.region();
    const Point lo = r.center.array() - 0.5 * r.edge, hi = r.center.array() + 0.5 * r.edge;
    return {{"region", io::region_json(r)},
            {"box_lo", io::point_json(lo)},
            {"box_hi", io::point_json(hi)},
            {"mass", search_.belief().mass_in(r)}};
  }

  json stage_log_json() const {
    json a = json::array();
    for (const auto& rec : search_.log()) a.push_back(detail::stage_record_json(rec));
    return a;
  }

  json result_json() const { return {{"kind", "budget_exhausted"}, {"region", io::region_json(search_.region())}}; }

  json snapshot() const {
    json log = stage_log_json();
    json pending = json(nullptr);
    if (!search_.finished()) pending = pending_json();
    return {{"config", io::config_json(search_.config())},
            {"region", io::region_json(search_.region())},
            {"log_weights", detail::log_weights_json(search_.belief().log_weights())},
            {"queries", search_.queries()},
            {"stage_queries", search_.stage_queries()},
            {"log", std::move(log)},
            {"rng_state", search_.rng_state()},
            {"pending", std::move(pending)}};
  }

  static ContinuousSession restore(const json& j) {
    std::vector<StageRecord> log;
    for (const auto& r : j.at("log")) log.push_back(detail::stage_record_from_json(r));
    QueryPair pending;
    if (!j.at("pending").is_null()) {
      pending.first = io::point_from_json(j.at("pending").at("first"), "pending.first");
      pending.second = io::point_from_json(j.at("pending").at("second"), "pending.second");
    }
    return ContinuousSession(IntegrationSearch::restore(
        io::config_from_json(j.at("config")), io::region_from_json(j.at("region")),
        detail::log_weights_from_json(j.at("log_weights")), j.at("queries").get<long>(),
        j.at("stage_queries").get<long>(), std::move(log), j.at("rng_state").get<std::string>(), pending));
  }

 private:
  static SearchConfig validated(SearchConfig c) {
    c.validate();
    if (c.criterion != Criterion::integration)
      throw bad_request("interactive continuous sessions support the integration criterion only");
    return c;
  }

  IntegrationSearch search_;
};

struct DiscreteOptions {
  double gamma = 3.0;
  double r = 2.0;
  ProtoWeighting weighting = ProtoWeighting::ratio;
};

/// Discrete item search with a human oracle. The search ends when the
/// person marks one of the shown items as the target, or when fewer than two
/// unused items remain.
class DiscreteSession {
 public:
  DiscreteSession(ItemSet items, DiscreteOptions opt)
      : items_(std::move(items)),
        model_(opt.gamma, items_.dim()),
        state_(make_discrete_state(items_, opt.r, opt.gamma, opt.weighting)) {
    if (items_.size() < 2) throw bad_request("discrete sessions need at least two items");
    pending_ = next_query(state_, items_);
  }

  bool terminal() const { return result_.has_value(); }
  long history_length() const { return state_.step; }
  const DiscreteSearchState& state() const { return state_; }
  const ItemSet& items() const { return items_; }

  json pending_json() const {
    return {{"first", detail::item_json(items_[pending_.i])}, {"second", detail::item_json(items_[pending_.j])}};
  }

  /// `choice` is the id of the closer item; with `is_target` it names the
  /// item the person was looking for, which ends the search.
  json answer(const json& choice, bool is_target) {
    if (!choice.is_string()) throw bad_request("choice must be an item id");
    const auto id = choice.get<std::string>();
    if (!items_.contains(id)) throw bad_request("unknown item id '" + id + "'");
    const std::size_t k = items_.index_of(id);
    if (k != pending_.i && k != pending_.j) throw bad_request("item '" + id + "' is not part of the pending query");
    if (is_target) {
      result_ = json{{"kind", "target_found"}, {"target", id}, {"steps", state_.step + 1}};
      return json::object();
    }
    state_ = update_posterior(std::move(state_), items_, pending_, k, model_);
    if (state_.unused_count() < 2) {
      const std::size_t top = state_.belief.top1();
      result_ = json{{"kind", "items_exhausted"}, {"top1", items_[top].id}, {"steps", state_.step}};
    } else {
      pending_ = next_query(state_, items_);
    }
    return json::object();
  }

  /// Top-5 items by belief (ties by id).
  json belief_json() const {
    std::vector<std::size_t> order(items_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto& p = state_.belief.probs;
    const std::size_t m = std::min<std::size_t>(5, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        return p[a] != p[b] ? p[a] > p[b] : items_[a].id < items_[b].id;
                      });
    json top = json::array();
    for (std::size_t k = 0; k < m; ++k) top.push_back({{"id", items_[order[k]].id}, {"probability", p[order[k]]}});
    return {{"top", std::move(top)}, {"entropy", state_.belief.entropy()}};
  }

  json result_json() const { return result_ ? *result_ : json(nullptr); }

  json snapshot() const {
    json history = json::array();
    for (const auto& h : state_.history)
      history.push_back({items_[h.query.i].id, items_[h.query.j].id, items_[h.answer].id});
    json used = json::array();
    for (std::size_t k = 0; k < items_.size(); ++k)
      if (state_.used[k]) used.push_back(items_[k].id);
    return {{"items", io::manifest_json(items_)},
            {"gamma", model_.gamma()},
            {"r", state_.r},
            {"weighting", state_.weighting == ProtoWeighting::ratio ? "ratio" : "product"},
            {"probs", state_.belief.probs},
            {"used", std::move(used)},
            {"history", std::move(history)},
            {"pending", {items_[pending_.i].id, items_[pending_.j].id}},
            {"result", result_json()}};
  }

  static DiscreteSession restore(const json& j) {
    DiscreteOptions opt;
    opt.gamma = j.at("gamma").get<double>();
    opt.r = j.at("r").get<double>();
    opt.weighting = j.at("weighting").get<std::string>() == "product" ? ProtoWeighting::product : ProtoWeighting::ratio;
    DiscreteSession s(io::manifest_from_json(j.at("items")), opt);
    auto probs = j.at("probs").get<std::vector<double>>();
    require(probs.size() == s.items_.size(), "discrete snapshot: belief size mismatch");
    s.state_.belief.probs = std::move(probs);
    for (const auto& id : j.at("used")) {
      s.state_.used[s.items_.index_of(id.get<std::string>())] = true;
      ++s.state_.used_count;
    }
    for (const auto& h : j.at("history")) {
      const std::size_t i = s.items_.index_of(h.at(0).get<std::string>());
      const std::size_t jj = s.items_.index_of(h.at(1).get<std::string>());
      s.state_.history.push_back({{i, jj}, s.items_.index_of(h.at(2).get<std::string>())});
    }
    s.state_.step = static_cast<long>(s.state_.history.size());
    s.pending_ = {s.items_.index_of(j.at("pending").at(0).get<std::string>()),
                  s.items_.index_of(j.at("pending").at(1).get<std::string>())};
    if (!j.at("result").is_null()) s.result_ = j.at("result");
    return s;
  }

 private:
  ItemSet items_;
  OracleModel model_;
  DiscreteSearchState state_;
  DiscreteQuery pending_;
  std::optional<json> result_;
};

/// One session: engine plus the nonce of its pending query. All access goes
/// through the session's own mutex.
struct Session {
  std::string id;
  Mode mode = Mode::continuous;
  std::optional<ContinuousSession> continuous;
  std::optional<DiscreteSession> discrete;
  std::string nonce;
  std::uint64_t nonce_counter = 0;
  std::string created_at, updated_at;
  std::mutex mutex;

  bool terminal() const { return continuous ? continuous->terminal() : discrete->terminal(); }
  long history_length() const { return continuous ? continuous->history_length() : discrete->history_length(); }
};

class SessionStore {
 public:
  /// `seed` drives session ids and nonces; `snapshot_dir`, when set, receives
  /// `<id>.json` after every transition.
  explicit SessionStore(std::uint64_t seed = std::random_device{}(), std::string snapshot_dir = {})
      : seed_(seed), snapshot_dir_(std::move(snapshot_dir)) {
    if (!snapshot_dir_.empty()) std::filesystem::create_directories(snapshot_dir_);
  }

  /// Body: {"mode": "continuous", "config": {...}} or
  /// {"mode": "discrete", "items": [...], "gamma"?, "r"?, "weighting"?}.
  json create(const json& body) {
    if (!body.is_object()) throw bad_request("request body must be a JSON object");
    const std::string mode = body.value("mode", "");
    auto s = std::make_shared<Session>();
    try {
      if (mode == "continuous") {
        io::detail::reject_unknown_keys(body, {"mode", "config"}, "continuous session");
        SearchConfig c = body.contains("config") ? io::config_from_json(body.at("config")) : SearchConfig{};
        s->mode = Mode::continuous;
        s->continuous.emplace(std::move(c));
      } else if (mode == "discrete") {
        io::detail::reject_unknown_keys(body, {"mode", "items", "gamma", "r", "weighting"}, "discrete session");
        if (!body.contains("items")) throw bad_request("discrete session: missing 'items'");
        DiscreteOptions opt;
        opt.gamma = body.value("gamma", opt.gamma);
        opt.r = body.value("r", opt.r);
        const std::string w = body.value("weighting", "ratio");
        if (w != "ratio" && w != "product") throw bad_request("weighting must be \"ratio\" or \"product\"");
        opt.weighting = w == "product" ? ProtoWeighting::product : ProtoWeighting::ratio;
        s->mode = Mode::discrete;
        s->discrete.emplace(io::manifest_from_json(body.at("items")), opt);
      } else {
        throw bad_request("mode must be \"continuous\" or \"discrete\"");
      }
    } catch (const ServiceError&) {
      throw;
    } catch (const InvalidInput& e) {
      throw bad_request(e.what());
    } catch (const json::exception& e) {
      throw bad_request(e.what());
    }
    s->created_at = s->updated_at = now_utc();
    std::lock_guard<std::mutex> lock(mutex_);
    s->id = next_id_locked();
    fresh_nonce(*s);
    sessions_[s->id] = s;
    std::lock_guard<std::mutex> slock(s->mutex);
    persist(*s);
    return public_state(*s);
  }

  json get(const std::string& id) {
    auto s = find(id);
    std::lock_guard<std::mutex> lock(s->mutex);
    return public_state(*s);
  }

  /// Body: {"nonce", "choice", "is_target"?}.
  json answer(const std::string& id, const json& body) {
    auto s = find(id);
    std::lock_guard<std::mutex> lock(s->mutex);
    if (!body.is_object() || !body.contains("nonce") || !body.contains("choice"))
      throw bad_request("answer body needs 'nonce' and 'choice'");
    if (!body.at("nonce").is_string()) throw bad_request("nonce must be a string");
    if (s->terminal()) throw conflict("session " + id + " has finished");
    if (body.at("nonce").get<std::string>() != s->nonce) throw conflict("stale or unknown nonce");
    const bool is_target = body.value("is_target", false);
    json extra;
    try {
      if (s->continuous) {
        if (is_target) throw bad_request("is_target applies to discrete sessions only");
        extra = s->continuous->answer(body.at("choice"));
      } else {
        extra = s->discrete->answer(body.at("choice"), is_target);
      }
    } catch (const ServiceError&) {
      throw;
    } catch (const InvalidInput& e) {
      throw bad_request(e.what());
    }
    fresh_nonce(*s);
    s->updated_at = now_utc();
    persist(*s);
    json out = public_state(*s);
    for (auto& [k, v] : extra.items()) out[k] = v;
    return out;
  }

  json snapshot(const std::string& id) {
    auto s = find(id);
    std::lock_guard<std::mutex> lock(s->mutex);
    return snapshot_locked(*s);
  }

  /// Re-creates a session from its snapshot under the snapshot's id.
  json restore(const json& snap) {
    auto s = std::make_shared<Session>();
    try {
      s->id = snap.at("id").get<std::string>();
      const auto mode = snap.at("mode").get<std::string>();
      if (mode == "continuous") {
        s->mode = Mode::continuous;
        s->continuous.emplace(ContinuousSession::restore(snap.at("engine")));
      } else if (mode == "discrete") {
        s->mode = Mode::discrete;
        s->discrete.emplace(DiscreteSession::restore(snap.at("engine")));
      } else {
        throw bad_request("snapshot: unknown mode '" + mode + "'");
      }
      s->nonce = snap.at("nonce").get<std::string>();
      s->nonce_counter = snap.at("nonce_counter").get<std::uint64_t>();
      s->created_at = snap.at("created_at").get<std::string>();
      s->updated_at = snap.at("updated_at").get<std::string>();
    } catch (const json::exception& e) {
      throw bad_request(std::string("snapshot: ") + e.what());
    } catch (const InvalidInput& e) {
      throw bad_request(std::string("snapshot: ") + e.what());
    }
    std::lock_guard<std::mutex> lock(mutex_);
    if (sessions_.count(s->id)) throw conflict("session " + s->id + " already exists");
    sessions_[s->id] = s;
    std::lock_guard<std::mutex> slock(s->mutex);
    return public_state(*s);
  }

  /// Loads every `<id>.json` in the snapshot directory.
  std::size_t load_snapshots() {
    if (snapshot_dir_.empty()) return 0;
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(snapshot_dir_))
      if (e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) restore(io::parse_json(io::read_file(f.string()), f.string()));
    return files.size();
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return sessions_.size();
  }

 private:
  std::shared_ptr<Session> find(const std::string& id) {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw not_found("no session '" + id + "'");
    return it->second;
  }

  std::string hex(std::uint64_t v) const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
  }

  std::string next_id_locked() {
    std::string id;
    do {
      id = hex(splitmix64(seed_ ^ splitmix64(++id_counter_)));
    } while (sessions_.count(id));
    return id;
  }

  void fresh_nonce(Session& s) const {
    s.nonce = hex(splitmix64(seed_ ^ splitmix64(std::hash<std::string>{}(s.id)) ^ ++s.nonce_counter));
  }

  json snapshot_locked(const Session& s) const {
    return {{"id", s.id},
            {"mode", s.mode == Mode::continuous ? "continuous" : "discrete"},
            {"engine", s.continuous ? s.continuous->snapshot() : s.discrete->snapshot()},
            {"nonce", s.nonce},
            {"nonce_counter", s.nonce_counter},
            {"created_at", s.created_at},
            {"updated_at", s.updated_at}};
  }

  void persist(const Session& s) const {
    if (snapshot_dir_.empty()) return;
    const auto path = std::filesystem::path(snapshot_dir_) / (s.id + ".json");
    const auto tmp = path.string() + ".tmp";
    io::write_file(tmp, io::dump(snapshot_locked(s)));
    std::filesystem::rename(tmp, path);
  }

  json public_state(const Session& s) const {
    json out = {{"id", s.id},
                {"mode", s.mode == Mode::continuous ? "continuous" : "discrete"},
                {"history_length", s.history_length()},
                {"terminal", s.terminal()},
                {"created_at", s.created_at},
                {"updated_at", s.updated_at}};
    if (s.continuous) {
      out["belief"] = s.continuous->belief_json();
      out["stage_log"] = s.continuous->stage_log_json();
      if (s.terminal()) out["result"] = s.continuous->result_json();
      else out["pending"] = s.continuous->pending_json();
    } else {
      out["belief"] = s.discrete->belief_json();
      if (s.terminal()) out["result"] = s.discrete->result_json();
      else out["pending"] = s.discrete->pending_json();
    }
    if (!s.terminal()) out["pending"]["nonce"] = s.nonce;
    return out;
  }

  std::uint64_t seed_;
  std::string snapshot_dir_;
  std::uint64_t id_counter_ = 0;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

}  // namespace sfsearch::service
