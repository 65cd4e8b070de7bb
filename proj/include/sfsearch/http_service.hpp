#pragma once

// HTTP/JSON front of the session store:
//   POST /sessions, GET /sessions/{id}, POST /sessions/{id}/answer, GET /healthz.
// Errors are returned as {"code", "message"}.

#include "service.hpp"

#include <httplib.h>

namespace sfsearch::service {

namespace detail {

inline void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, status, {{"code", code}, {"message", message}});
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const ServiceError& e) {
    send_error(res, e.status(), e.code(), e.what());
  } catch (const InvalidInput& e) {
    send_error(res, 400, "invalid_input", e.what());
  } catch (const json::exception& e) {
    send_error(res, 400, "invalid_input", e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "internal", e.what());
  }
}

inline json body_json(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw bad_request(std::string("malformed JSON body: ") + e.what());
  }
}

}  // namespace detail

/// Installs the API routes on `server`; `store` must outlive it.
inline void install_routes(httplib::Server& server, SessionStore& store) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});

  server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    detail::send_json(res, 200, {{"status", "ok"}});
  });

  server.Post("/sessions", [&store](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, [&] { detail::send_json(res, 201, store.create(detail::body_json(req))); });
  });

  server.Get(R"(/sessions/([^/]+))", [&store](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, [&] { detail::send_json(res, 200, store.get(req.matches[1])); });
  });

  server.Post(R"(/sessions/([^/]+)/answer)", [&store](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, [&] { detail::send_json(res, 200, store.answer(req.matches[1], detail::body_json(req))); });
  });

  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    if (res.status == 404) detail::send_error(res, 404, "not_found", "no route for " + req.method + " " + req.path);
    else detail::send_error(res, res.status, "http_error", httplib::status_message(res.status));
  });

  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string msg = "unknown error";
    try {
      if (ep) std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      msg = e.what();
    } catch (...) {
    }
    detail::send_error(res, 500, "internal", msg);
  });
}

}  // namespace sfsearch::service
