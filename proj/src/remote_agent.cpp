#include <chrono>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "hgrec/error.hpp"
#include "hgrec/moa.hpp"

namespace hgrec {
namespace {

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Url split_url(const std::string& endpoint) {
  const auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos) {
    throw RemoteError(RemoteError::Kind::protocol, "endpoint needs a scheme: " + endpoint);
  }
  if (endpoint.compare(0, scheme_end, "http") != 0) {
    throw RemoteError(RemoteError::Kind::protocol, "only http endpoints are supported: " + endpoint);
  }
  const auto path_start = endpoint.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {endpoint, "/"};
  return {endpoint.substr(0, path_start), endpoint.substr(path_start)};
}

Matrix decode_tokens(const nlohmann::json& body, std::size_t rows, std::size_t cols) {
  if (!body.is_object() || !body.contains("tokens") || !body["tokens"].is_array()) {
    throw RemoteError(RemoteError::Kind::protocol, "response has no \"tokens\" array");
  }
  const auto& tokens = body["tokens"];
  if (tokens.size() != rows) {
    throw RemoteError(RemoteError::Kind::shape_mismatch,
                      "shape mismatch: expected " + std::to_string(rows) + ", got " +
                          std::to_string(tokens.size()));
  }
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& row = tokens[r];
    if (!row.is_array() || row.size() != cols) {
      throw RemoteError(RemoteError::Kind::shape_mismatch,
                        "shape mismatch: expected " + std::to_string(cols) + " columns in row " +
                            std::to_string(r) + ", got " +
                            std::to_string(row.is_array() ? row.size() : 0));
    }
    for (std::size_t c = 0; c < cols; ++c) {
      if (!row[c].is_number()) {
        throw RemoteError(RemoteError::Kind::protocol, "non-numeric token entry");
      }
      out(r, c) = row[c].get<double>();
    }
  }
  return out;
}

// One attempt. Throws RemoteError on any failure.
Matrix attempt(httplib::Client& client, const std::string& path, const std::string& payload,
               const httplib::Headers& headers, const Matrix& tokens, const AgentSpec& agent) {
  const auto start = std::chrono::steady_clock::now();
  auto res = client.Post(path, headers, payload, "application/json");
  if (!res) {
    const auto err = res.error();
    const auto waited = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - start).count();
    // httplib reports a read timeout as a plain read error.
    const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                           (err == httplib::Error::Read && waited >= 0.9 * agent.timeout_ms);
    throw RemoteError(timed_out ? RemoteError::Kind::timeout : RemoteError::Kind::transport,
                      "agent (" + std::to_string(agent.layer) + ", " + std::to_string(agent.index) +
                          ") at " + agent.endpoint + ": " + httplib::to_string(err));
  }
  if (res->status != 200) {
    throw RemoteError(RemoteError::Kind::http_status,
                      "agent (" + std::to_string(agent.layer) + ", " + std::to_string(agent.index) +
                          ") returned HTTP " + std::to_string(res->status));
  }
  nlohmann::json body;
  try {
    body = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error& e) {
    throw RemoteError(RemoteError::Kind::protocol, std::string("response is not JSON: ") + e.what());
  }
  return decode_tokens(body, tokens.rows(), tokens.cols());
}

bool retryable(const RemoteError& e) {
  switch (e.kind()) {
    case RemoteError::Kind::timeout:
    case RemoteError::Kind::transport:
      return true;
    case RemoteError::Kind::http_status:
      return std::string(e.what()).find("HTTP 5") != std::string::npos;
    default:
      return false;
  }
}

}  // namespace

Matrix call_remote_agent(const Matrix& tokens, const AgentSpec& agent, const RemoteOptions& options) {
  if (agent.kind != AgentKind::remote) throw InvalidArgument("call_remote_agent on a mock agent");
  if (tokens.cols() != agent.d_agent) {
    throw ShapeError("remote agent expects width " + std::to_string(agent.d_agent) + ", got " +
                     std::to_string(tokens.cols()));
  }
  const Url url = split_url(agent.endpoint);
  httplib::Client client(url.origin);
  const auto timeout = std::chrono::milliseconds(agent.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  httplib::Headers headers;
  if (!options.auth_token.empty()) headers.emplace("Authorization", "Bearer " + options.auth_token);

  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < tokens.rows(); ++r) {
    rows.push_back(std::vector<double>(tokens.row(r).begin(), tokens.row(r).end()));
  }
  const nlohmann::json request = {
      {"layer", agent.layer}, {"agent", agent.index}, {"dim", agent.d_agent}, {"tokens", rows}};
  const std::string payload = request.dump();

  for (int tries = 0;; ++tries) {
    try {
      return attempt(client, url.path, payload, headers, tokens, agent);
    } catch (const RemoteError& e) {
      if (tries >= agent.retries || !retryable(e)) throw;
    }
  }
}

}  // namespace hgrec
