#include <iostream>

// Eigen before httplib: <resolv.h> defines a _res macro that Eigen uses as a name.
#include "exrec/error.hpp"
#include "exrec/service.hpp"

#include <httplib.h>

namespace exrec {

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;

  explicit Impl(Service& s) : service(s) {}
};

namespace {

void send(httplib::Response& res, const Response& r) {
  res.status = r.status;
  if (r.status != 204) res.set_content(r.body.dump(), "application/json");
}

// Empty bodies are treated as {} so that bodiless POSTs reach validation.
std::optional<nlohmann::json> body_json(const httplib::Request& req, httplib::Response& res) {
  if (req.body.empty()) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    send(res, {400, {{"error", std::string("malformed JSON: ") + e.what()}}});
    return std::nullopt;
  }
}

}  // namespace

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  Service& svc = impl_->service;

  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Authorization, Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  srv.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  srv.set_pre_routing_handler([&svc](const httplib::Request& req, httplib::Response& res) {
    if (req.method == "OPTIONS") return httplib::Server::HandlerResponse::Unhandled;
    if (svc.authorized(req.get_header_value("Authorization"))) {
      return httplib::Server::HandlerResponse::Unhandled;
    }
    send(res, {401, {{"error", "missing or invalid token"}}});
    return httplib::Server::HandlerResponse::Handled;
  });
  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    std::cerr << "request failed: " << what << "\n";
    send(res, {500, {{"error", what}}});
  });
  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty() && res.status == 404) send(res, {404, {{"error", "no such resource"}}});
  });

  srv.Post("/v1/users", [&svc](const httplib::Request& req, httplib::Response& res) {
    if (auto b = body_json(req, res)) send(res, svc.create_user(*b));
  });
  srv.Get(R"(/v1/users/([^/]+)/next)", [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.next(req.matches[1]));
  });
  srv.Post(R"(/v1/users/([^/]+)/events)", [&svc](const httplib::Request& req, httplib::Response& res) {
    if (auto b = body_json(req, res)) send(res, svc.add_event(req.matches[1], *b));
  });
  srv.Get("/v1/reviews", [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.reviews(req.get_param_value("status")));
  });
  srv.Post(R"(/v1/reviews/([^/]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
    if (auto b = body_json(req, res)) send(res, svc.resolve(req.matches[1], *b));
  });
  srv.Get("/v1/admin/model", [&svc](const httplib::Request&, httplib::Response& res) {
    send(res, svc.model_info());
  });
  srv.Post("/v1/admin/retrain", [&svc](const httplib::Request&, httplib::Response& res) {
    send(res, svc.retrain());
  });
  srv.Get(R"(/v1/admin/jobs/([^/]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.job(req.matches[1]));
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  auto& srv = impl_->server;
  const int bound = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace exrec
