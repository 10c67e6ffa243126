#pragma once

#include <atomic>
#include <chrono>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace testing {

/// Local agent endpoint speaking the embeddings-in/embeddings-out protocol.
///   /echo   returns the request tokens
///   /short  returns only the first row
///   /fail   always answers 500
///   /slow   sleeps 600 ms, then echoes
class EchoServer {
 public:
  EchoServer() {
    auto echo = [this](const httplib::Request& req, httplib::Response& res) {
      ++hits;
      const auto body = nlohmann::json::parse(req.body);
      last_auth = req.get_header_value("Authorization");
      res.set_content(nlohmann::json{{"tokens", body.at("tokens")}}.dump(), "application/json");
    };
    server_.Post("/echo", echo);
    server_.Post("/slow", [this, echo](const httplib::Request& req, httplib::Response& res) {
      std::this_thread::sleep_for(std::chrono::milliseconds(600));
      echo(req, res);
    });
    server_.Post("/short", [this](const httplib::Request& req, httplib::Response& res) {
      ++hits;
      const auto body = nlohmann::json::parse(req.body);
      nlohmann::json rows = nlohmann::json::array({body.at("tokens").at(0)});
      res.set_content(nlohmann::json{{"tokens", rows}}.dump(), "application/json");
    });
    server_.Post("/fail", [this](const httplib::Request&, httplib::Response& res) {
      ++hits;
      res.status = 500;
      res.set_content("boom", "text/plain");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~EchoServer() {
    server_.stop();
    thread_.join();
  }
  EchoServer(const EchoServer&) = delete;
  EchoServer& operator=(const EchoServer&) = delete;

  std::string url(const std::string& path) const {
    return "http://127.0.0.1:" + std::to_string(port_) + path;
  }

  std::atomic<int> hits{0};
  std::string last_auth;

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace testing
