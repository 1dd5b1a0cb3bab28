/*
 * Copyright 2026 The Rashens Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <csignal>
#include <iostream>

#include "httplib.h"
#include "rashens/session.h"

namespace rashens {
namespace {

constexpr const char* kJson = "application/json";

void SendError(httplib::Response& res, int status, const std::string& stage, const std::string& message) {
  res.status = status;
  res.set_content(nlohmann::json{{"code", status}, {"message", message}, {"stage", stage}}.dump(), kJson);
}

// Wraps a handler so every failure becomes a {code, message, stage} body.
template <typename F>
httplib::Server::Handler Guard(F handler) {
  return [handler](const httplib::Request& req, httplib::Response& res) {
    try {
      res.set_content(handler(req).dump(), kJson);
    } catch (const ApiError& e) {
      SendError(res, e.status(), e.stage(), e.what());
    } catch (const Error& e) {
      SendError(res, 500, e.stage(), e.what());
    } catch (const nlohmann::json::exception& e) {
      SendError(res, 400, "request", std::string("malformed JSON: ") + e.what());
    } catch (const std::exception& e) {
      SendError(res, 500, "server", e.what());
    }
  };
}

httplib::Server* g_server = nullptr;

void StopOnSignal(int) {
  if (g_server != nullptr) g_server->stop();
}

}  // namespace

void RegisterRoutes(httplib::Server& server, Session& session, const std::filesystem::path& static_dir) {
  server.Get("/api/state", Guard([&](const httplib::Request&) { return session.State(); }));
  server.Get("/api/clusters", Guard([&](const httplib::Request&) { return session.Clusters(); }));
  server.Get(R"(/api/models/(-?\d+))", Guard([&](const httplib::Request& req) {
               return session.Model(std::stoi(req.matches[1].str()));
             }));
  server.Get("/api/ensemble", Guard([&](const httplib::Request&) { return session.EnsembleView(); }));
  server.Get("/api/drift", Guard([&](const httplib::Request&) { return session.Drift(); }));
  server.Post("/api/veto", Guard([&](const httplib::Request& req) {
                const auto body = nlohmann::json::parse(req.body);
                if (!body.is_object() || !body.contains("targets")) {
                  throw ApiError(400, "veto", "body must be {\"targets\": {...}, \"reason\": \"...\"}");
                }
                return session.Veto(VetoTargetsFromJson(body.at("targets")),
                                    body.value("reason", std::string()));
              }));
  server.Post("/api/rebuild", Guard([&](const httplib::Request&) { return session.Rebuild(); }));
  if (!static_dir.empty()) server.set_mount_point("/", static_dir.string());
  server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (res.body.empty()) {
      SendError(res, res.status, "request", "no route for " + req.method + " " + req.path);
    }
  });
}

int Serve(const std::filesystem::path& run_dir, const std::string& host, int port, bool fresh,
          const std::filesystem::path& static_dir) {
  Session session(run_dir, fresh);
  httplib::Server server;
  RegisterRoutes(server, session, static_dir);
  if (!server.bind_to_port(host, port)) {
    throw Error("serve", "cannot bind " + host + ":" + std::to_string(port) + " (port in use?)");
  }
  g_server = &server;
  std::signal(SIGINT, StopOnSignal);
  std::signal(SIGTERM, StopOnSignal);
  std::cout << "serving " << run_dir.string() << " on http://" << host << ":" << port
            << " (session " << session.session_dir().string() << ")" << std::endl;
  server.listen_after_bind();
  g_server = nullptr;
  return 0;
}

}  // namespace rashens
