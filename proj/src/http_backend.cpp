#include <chrono>
#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "lmic/llm_client.hpp"

namespace lmic {

namespace {

bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace

HttpBackend::HttpBackend(BackendConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  if (!cfg_.is_remote()) throw std::invalid_argument("HttpBackend: base_url must start with http:// or https://");
  const auto scheme_end = cfg_.base_url.find("://") + 3;
  const auto path_start = cfg_.base_url.find('/', scheme_end);
  scheme_host_port_ = cfg_.base_url.substr(0, path_start);
  path_prefix_ = path_start == std::string::npos ? "" : cfg_.base_url.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  if (!cfg_.api_key_env.empty()) {
    const char* key = std::getenv(cfg_.api_key_env.c_str());
    if (key == nullptr || *key == '\0')
      throw std::runtime_error("environment variable " + cfg_.api_key_env +
                               " is not set; export the API key or set api_key_env to \"\" for keyless servers");
    api_key_ = key;
  }
}

std::string HttpBackend::request_body(const std::string& model, const std::string& prompt, int top_logprobs) {
  return nlohmann::json{{"model", model},
                        {"prompt", prompt},
                        {"max_tokens", 1},
                        {"temperature", 0},
                        {"logprobs", top_logprobs}}
      .dump();
}

TokenLogprobs HttpBackend::parse_response(const std::string& body) {
  try {
    const auto doc = nlohmann::json::parse(body);
    const auto& top = doc.at("choices").at(0).at("logprobs").at("top_logprobs").at(0);
    TokenLogprobs out;
    for (const auto& [token, lp] : top.items()) {
      if (!lp.is_number()) throw BackendError("non-numeric logprob for token '" + token + "'");
      out[token] = lp.get<double>();
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("malformed completions response: ") + e.what());
  }
}

TokenLogprobs HttpBackend::complete(const std::string& prompt) const {
  const std::string body = request_body(cfg_.model, prompt, cfg_.top_logprobs);
  const std::string path = path_prefix_ + "/completions";
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  std::string last_error;
  for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
    if (attempt > 0)
      std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.retry_backoff_ms) * (1 << std::min(attempt - 1, 6)));
    httplib::Client client(scheme_host_port_);
    const auto timeout = std::chrono::duration<double>(cfg_.timeout_s);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    const auto res = client.Post(path, headers, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 200) return parse_response(res->body);
    last_error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
    if (!retryable_status(res->status)) break;
  }
  throw BackendError("completion request to " + scheme_host_port_ + path + " failed: " + last_error);
}

}  // namespace lmic
