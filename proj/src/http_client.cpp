// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <httplib.h>

#include "retlab/bench.hpp"

namespace retlab::bench {

using nlohmann::json;

void ProviderConfig::validate() const {
  if (base_url.empty()) throw std::invalid_argument("provider: base_url is required");
  if (model.empty()) throw std::invalid_argument("provider: model is required");
  if (max_attempts < 1) throw std::invalid_argument("provider: max_attempts must be >= 1");
  if (!(timeout_s > 0.0)) throw std::invalid_argument("provider: timeout must be positive");
  if (!options.is_object()) throw std::invalid_argument("provider: options must be an object");
}

HttpChatClient::HttpChatClient(ProviderConfig config) : config_(std::move(config)) {
  config_.validate();
  if (!config_.token_env.empty()) {
    if (const char* t = std::getenv(config_.token_env.c_str())) token_ = t;
  }
}

std::string HttpChatClient::complete(const std::string& prompt, const CallContext&) {
  httplib::Client cli(config_.base_url);
  const auto secs = static_cast<time_t>(config_.timeout_s);
  const auto usecs = static_cast<time_t>((config_.timeout_s - static_cast<double>(secs)) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);

  json body = config_.options;
  body["model"] = config_.model;
  body["messages"] = json::array({{{"role", "user"}, {"content", prompt}}});
  auto res = cli.Post(config_.path, headers, body.dump(), "application/json");
  if (!res) throw TransportError("request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) {
    throw TransportError("HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
  }
  try {
    const json reply = json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw TransportError(std::string("malformed response: ") + e.what());
  }
}

}  // namespace retlab::bench
