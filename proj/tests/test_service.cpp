#include "sfsearch/http_service.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <thread>

using namespace sfsearch;
using namespace sfsearch::service;

namespace {

json discrete_body(int n) {
  json items = json::array();
  for (int k = 0; k < n; ++k) {
    const double a = 0.7 * k;
    items.push_back({{"id", "it" + std::to_string(k)}, {"vector", {std::cos(a) * (1 + 0.1 * k), std::sin(a)}}});
  }
  return {{"mode", "discrete"}, {"items", items}};
}

json continuous_body(long budget = 200) {
  return {{"mode", "continuous"},
          {"config", {{"dim", 2}, {"gamma", 1e6}, {"budget", budget}, {"seed", 3},
                      {"omega", {{"center", {0.0, 0.0}}, {"edge", 1.0}}}}}};
}

/// Answers continuous queries as a noiseless person whose target is `xt`.
std::string closer(const json& pending, const Point& xt) {
  const Point a = io::point_from_json(pending.at("first"), "a"), b = io::point_from_json(pending.at("second"), "b");
  return (a - xt).norm() <= (b - xt).norm() ? "first" : "second";
}

}  // namespace

TEST(Store, DiscreteTwoItemsOfferTheOnlyPair) {
  SessionStore store(1);
  const json s = store.create(discrete_body(2));
  EXPECT_EQ(s.at("history_length"), 0);
  EXPECT_FALSE(s.at("terminal").get<bool>());
  std::set<std::string> ids{s.at("pending").at("first").at("id"), s.at("pending").at("second").at("id")};
  EXPECT_EQ(ids, (std::set<std::string>{"it0", "it1"}));
}

TEST(Store, ContinuousFirstQueryDelegatesToEngine) {
  SessionStore store(1);
  const json s = store.create(continuous_body());
  SearchConfig c = io::config_from_json(continuous_body().at("config"));
  IntegrationSearch engine(c);
  EXPECT_EQ(io::point_from_json(s.at("pending").at("first"), "a"), engine.pending().first);
  EXPECT_EQ(io::point_from_json(s.at("pending").at("second"), "b"), engine.pending().second);
  EXPECT_EQ(s.at("belief").at("region").at("edge"), 1.0);
}

TEST(Store, CreateRejections) {
  SessionStore store(1);
  json dup = discrete_body(3);
  dup["items"][1]["id"] = "it0";
  EXPECT_THROW(store.create(dup), ServiceError);
  EXPECT_THROW(store.create({{"mode", "other"}}), ServiceError);
  EXPECT_THROW(store.create({{"mode", "discrete"}}), ServiceError);
  EXPECT_THROW(store.create({{"mode", "continuous"}, {"config", {{"alpha", 2}}}}), ServiceError);
  json hyp = continuous_body();
  hyp["config"]["criterion"] = "hypothesis_test";
  EXPECT_THROW(store.create(hyp), ServiceError);
  try {
    store.create(discrete_body(1));
    FAIL();
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.status(), 400);
  }
  EXPECT_EQ(store.size(), 0u);
}

TEST(Store, NonceGuardsAgainstReplays) {
  SessionStore store(2);
  const json s = store.create(discrete_body(6));
  const std::string id = s.at("id");
  const json ans = {{"nonce", s.at("pending").at("nonce")}, {"choice", s.at("pending").at("first").at("id")}};
  const json next = store.answer(id, ans);
  EXPECT_EQ(next.at("history_length"), 1);
  try {
    store.answer(id, ans);
    FAIL() << "replayed nonce accepted";
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.status(), 409);
    EXPECT_EQ(e.code(), "conflict");
  }
  EXPECT_NE(next.at("pending").at("nonce"), s.at("pending").at("nonce"));
}

TEST(Store, UnknownSessionAndBadChoices) {
  SessionStore store(3);
  EXPECT_THROW(store.get("nope"), ServiceError);
  const json s = store.create(discrete_body(6));
  const std::string id = s.at("id");
  const json nonce = s.at("pending").at("nonce");
  for (const json& choice : {json("it5x"), json(3), json(nullptr)}) {
    try {
      store.answer(id, {{"nonce", nonce}, {"choice", choice}});
      FAIL();
    } catch (const ServiceError& e) {
      EXPECT_EQ(e.status(), 400);
    }
  }
  // An item outside the pending pair is rejected too.
  std::string outside;
  for (int k = 0; k < 6; ++k) {
    const std::string cand = "it" + std::to_string(k);
    if (cand != s.at("pending").at("first").at("id") && cand != s.at("pending").at("second").at("id")) outside = cand;
  }
  EXPECT_THROW(store.answer(id, {{"nonce", nonce}, {"choice", outside}}), ServiceError);
  EXPECT_EQ(store.get(id).at("history_length"), 0);
}

TEST(Store, DiscreteTargetFoundIsTerminal) {
  SessionStore store(4);
  json s = store.create(discrete_body(12));
  const std::string id = s.at("id");
  const std::string target = "it7";
  for (int step = 0; step < 6; ++step) {
    const json& p = s.at("pending");
    const std::string a = p.at("first").at("id"), b = p.at("second").at("id");
    if (a == target || b == target) {
      s = store.answer(id, {{"nonce", p.at("nonce")}, {"choice", target}, {"is_target", true}});
      break;
    }
    s = store.answer(id, {{"nonce", p.at("nonce")}, {"choice", a}});
  }
  ASSERT_TRUE(s.at("terminal").get<bool>());
  EXPECT_EQ(s.at("result").at("kind"), "target_found");
  EXPECT_EQ(s.at("result").at("target"), target);
  EXPECT_EQ(s.at("result").at("steps").get<long>(), s.at("history_length").get<long>() + 1);
  EXPECT_FALSE(s.contains("pending"));
  EXPECT_THROW(store.answer(id, {{"nonce", "x"}, {"choice", target}}), ServiceError);
}

TEST(Store, DiscreteBeliefSummaryTopFive) {
  SessionStore store(5);
  const json s = store.create(discrete_body(9));
  const json& top = s.at("belief").at("top");
  ASSERT_EQ(top.size(), 5u);
  EXPECT_EQ(top[0].at("id"), "it0");  // uniform belief: ties by id
  EXPECT_NEAR(top[0].at("probability").get<double>(), 1.0 / 9.0, 1e-15);
}

TEST(Store, ContinuousProceedHalvesEdge) {
  SessionStore store(6);
  json s = store.create(continuous_body(300));
  const std::string id = s.at("id");
  const Point xt = (Point(2) << 0.137, -0.211).finished();
  double edge = 1.0;
  int proceeds = 0;
  while (!s.at("terminal").get<bool>()) {
    s = store.answer(id, {{"nonce", s.at("pending").at("nonce")}, {"choice", closer(s.at("pending"), xt)}});
    if (s.contains("stage_completed")) {
      const double e = s.at("belief").at("region").at("edge");
      if (s.at("stage_completed").at("decision") == "proceed") {
        EXPECT_DOUBLE_EQ(e, edge / 2);
        ++proceeds;
      } else {
        EXPECT_DOUBLE_EQ(e, edge * 4);
      }
      edge = e;
    }
  }
  EXPECT_GT(proceeds, 3);
  EXPECT_EQ(s.at("history_length"), 300);
  EXPECT_EQ(s.at("result").at("kind"), "budget_exhausted");
  EXPECT_EQ(s.at("stage_log").size(), static_cast<std::size_t>(s.at("stage_log").back().at("stage").get<int>()));
}

TEST(Store, SnapshotRestoreReproducesQueries) {
  for (const json& body : {continuous_body(400), discrete_body(150)}) {
    SessionStore a(7), b(7);  // a restarted server keeps its seed
    json s = a.create(body);
    const std::string id = s.at("id");
    const bool cont = body.at("mode") == "continuous";
    const auto pick = [&](const json& st, int k) -> json {
      if (cont) return k % 3 == 0 ? "second" : "first";
      return st.at("pending").at(k % 3 == 0 ? "second" : "first").at("id");
    };
    for (int k = 0; k < 25; ++k) s = a.answer(id, {{"nonce", s.at("pending").at("nonce")}, {"choice", pick(s, k)}});
    json r = b.restore(json::parse(a.snapshot(id).dump()));
    s.erase("stage_completed");
    EXPECT_EQ(r, s);
    for (int k = 25; k < 60; ++k) {
      s = a.answer(id, {{"nonce", s.at("pending").at("nonce")}, {"choice", pick(s, k)}});
      r = b.answer(id, {{"nonce", r.at("pending").at("nonce")}, {"choice", pick(r, k)}});
      r["updated_at"] = s["updated_at"];
      ASSERT_EQ(r, s) << "diverged at answer " << k;
    }
    EXPECT_EQ(s.at("history_length").get<long>(), 60);
  }
}

TEST(Store, SnapshotDirectoryReload) {
  const auto dir = std::filesystem::path(testing::TempDir()) / "sfsearch_snapshots";
  std::filesystem::remove_all(dir);
  std::string id;
  json last;
  {
    SessionStore store(9, dir.string());
    json s = store.create(discrete_body(10));
    id = s.at("id");
    s = store.answer(id, {{"nonce", s.at("pending").at("nonce")}, {"choice", s.at("pending").at("first").at("id")}});
    last = s;
  }
  SessionStore reloaded(10, dir.string());
  EXPECT_EQ(reloaded.load_snapshots(), 1u);
  EXPECT_EQ(reloaded.get(id), last);
}

TEST(Store, ConcurrentSessionsAreIndependent) {
  SessionStore store(11);
  std::vector<std::thread> threads;
  std::vector<long> lengths(4, 0);
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      json s = store.create(discrete_body(30));
      const std::string id = s.at("id");
      for (int k = 0; k < 10; ++k)
        s = store.answer(id, {{"nonce", s.at("pending").at("nonce")}, {"choice", s.at("pending").at("first").at("id")}});
      lengths[static_cast<std::size_t>(t)] = store.get(id).at("history_length");
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(store.size(), 4u);
  for (long l : lengths) EXPECT_EQ(l, 10);
}

TEST(Http, EndToEnd) {
  SessionStore store(12);
  httplib::Server server;
  install_routes(server, store);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);

  auto health = cli.Get("/healthz");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(json::parse(health->body).at("status"), "ok");

  auto created = cli.Post("/sessions", discrete_body(5).dump(), "application/json");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201);
  const json s = json::parse(created->body);
  const std::string id = s.at("id");

  auto got = cli.Get("/sessions/" + id);
  ASSERT_TRUE(got);
  EXPECT_EQ(got->status, 200);
  EXPECT_EQ(json::parse(got->body).at("history_length"), 0);

  const json ans = {{"nonce", s.at("pending").at("nonce")}, {"choice", s.at("pending").at("second").at("id")}};
  auto answered = cli.Post("/sessions/" + id + "/answer", ans.dump(), "application/json");
  ASSERT_TRUE(answered);
  EXPECT_EQ(answered->status, 200);
  EXPECT_EQ(json::parse(answered->body).at("history_length"), 1);

  auto replay = cli.Post("/sessions/" + id + "/answer", ans.dump(), "application/json");
  ASSERT_TRUE(replay);
  EXPECT_EQ(replay->status, 409);
  EXPECT_EQ(json::parse(replay->body).at("code"), "conflict");

  auto missing = cli.Get("/sessions/doesnotexist");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  const json err = json::parse(missing->body);
  EXPECT_EQ(err.at("code"), "not_found");
  EXPECT_TRUE(err.at("message").is_string());

  auto malformed = cli.Post("/sessions", "{oops", "application/json");
  ASSERT_TRUE(malformed);
  EXPECT_EQ(malformed->status, 400);
  EXPECT_EQ(json::parse(malformed->body).at("code"), "invalid_input");

  auto noroute = cli.Get("/nothing/here");
  ASSERT_TRUE(noroute);
  EXPECT_EQ(noroute->status, 404);
  EXPECT_EQ(json::parse(noroute->body).at("code"), "not_found");

  server.stop();
  th.join();
}
