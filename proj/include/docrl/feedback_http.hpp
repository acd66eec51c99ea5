#pragma once

// Eigen must be parsed before httplib: <resolv.h> defines a `_res` macro
// that collides with Eigen parameter names.
#include "docrl/feedback.hpp"

#include <httplib.h>

#include <charconv>
#include <filesystem>
#include <optional>
#include <string>

namespace docrl {

inline int http_status(const FeedbackError& e) {
  switch (e.kind()) {
    case FeedbackError::Kind::kNotFound:
      return 404;
    case FeedbackError::Kind::kConflict:
      return 409;
    case FeedbackError::Kind::kBadRequest:
      return 400;
  }
  return 500;
}

// Routes of the feedback API. With `static_dir`, files under it are served
// from "/" (the browser frontend bundle).
inline void register_feedback_routes(httplib::Server& server, FeedbackService& service,
                                     const std::optional<std::filesystem::path>& static_dir = std::nullopt) {
  auto reply = [](httplib::Response& res, const auto& handler) {
    res.set_header("Access-Control-Allow-Origin", "*");
    try {
      res.set_content(handler().dump(), "application/json");
    } catch (const FeedbackError& e) {
      res.status = http_status(e);
      res.set_content(json{{"error", e.what()}, {"accepted", false}}.dump(), "application/json");
    } catch (const json::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", std::string("malformed request: ") + e.what()}}.dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  };

  server.Get("/api/session", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, [&] {
      std::optional<int> set;
      if (req.has_param("set")) {
        const std::string text = req.get_param_value("set");
        int value = 0;
        const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
        if (ec != std::errc() || end != text.data() + text.size()) {
          throw FeedbackError(FeedbackError::Kind::kBadRequest, "set must be an integer");
        }
        set = value;
      }
      return service.create_session(set);
    });
  });
  server.Get(R"(/api/session/([^/]+))", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, [&] { return service.describe_session(req.matches[1]); });
  });
  server.Get(R"(/api/session/([^/]+)/next)", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, [&] { return service.next(req.matches[1]); });
  });
  server.Post(R"(/api/session/([^/]+)/selection)",
              [&service, reply](const httplib::Request& req, httplib::Response& res) {
                reply(res, [&] { return service.select(req.matches[1], parse_selection(json::parse(req.body))); });
              });
  server.Post(R"(/api/session/([^/]+)/update)", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, [&] { return service.update(req.matches[1]); });
  });
  server.Get("/api/metrics", [&service, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, [&] { return service.metrics(); });
  });
  server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
  });
  if (static_dir) server.set_mount_point("/", static_dir->string());
}

// FeedbackApi over HTTP; non-2xx replies raise FeedbackError.
class HttpFeedbackApi : public FeedbackApi {
 public:
  HttpFeedbackApi(const std::string& host, int port) : client_(host, port) { client_.set_read_timeout(600, 0); }

  json create_session(std::optional<int> set) override {
    return get(set ? "/api/session?set=" + std::to_string(*set) : std::string("/api/session"));
  }
  json next(const std::string& id) override { return get("/api/session/" + id + "/next"); }
  json select(const std::string& id, const json& body) override {
    return post("/api/session/" + id + "/selection", body.dump());
  }
  json update(const std::string& id) override { return post("/api/session/" + id + "/update", "{}"); }
  json metrics() override { return get("/api/metrics"); }

 private:
  json get(const std::string& path) { return check(client_.Get(path), path); }
  json post(const std::string& path, const std::string& body) {
    return check(client_.Post(path, body, "application/json"), path);
  }
  static json check(const httplib::Result& res, const std::string& path) {
    if (!res) throw std::runtime_error("request to " + path + " failed: " + httplib::to_string(res.error()));
    json body = json::parse(res->body);
    if (res->status >= 300) {
      const std::string message = body.value("error", std::string("HTTP ") + std::to_string(res->status));
      const auto kind = res->status == 404   ? FeedbackError::Kind::kNotFound
                        : res->status == 409 ? FeedbackError::Kind::kConflict
                                             : FeedbackError::Kind::kBadRequest;
      throw FeedbackError(kind, message);
    }
    return body;
  }

  httplib::Client client_;
};

}  // namespace docrl
