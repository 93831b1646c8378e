#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "lmic/llm_client.hpp"

namespace httplib {
class Server;
}

namespace lmic {

// Deterministic nearest-centroid stand-in for an LLM. The prompt is parsed
// back into demonstrations; each label scores -d^2 / temperature where d is the
// query's distance to that label's demonstration centroid, measured in channel
// units (rendered value / unit_scale).
struct MockConfig {
  double temperature = 1.0;
  double unit_scale = 10.0;
  // Extra score deficit for labels without any demonstration.
  double missing_penalty = 10.0;
  // Width of a per-template additive label bias, drawn uniformly in
  // [-template_bias/2, template_bias/2] from a hash of the template id. Models
  // the prompt sensitivity of real LLMs; 0 disables it.
  double template_bias = 0.5;
  std::string model = "mock";

  void validate() const;
};

// Label-token log-probabilities for a prompt produced by one of `templates`.
// A non-numeric query (content-free input) scores every label equally before
// the template bias. Throws std::invalid_argument when no template parses the
// prompt.
TokenLogprobs mock_complete(const std::string& prompt_text, const MockConfig& cfg,
                            const std::vector<PromptTemplate>& templates);

std::vector<double> mock_template_bias(const std::string& template_id, std::size_t k, double width);

class MockBackend final : public CompletionBackend {
 public:
  explicit MockBackend(MockConfig cfg = {}, std::vector<PromptTemplate> templates = template_registry());
  std::string id() const override { return cfg_.model; }
  TokenLogprobs complete(const std::string& prompt) const override;

 private:
  MockConfig cfg_;
  std::vector<PromptTemplate> templates_;
};

// Handles one /completions request body; returns {status, body}.
struct MockResponse {
  int status = 200;
  std::string body;
};
MockResponse mock_completions_handler(const std::string& request_body, const MockConfig& cfg,
                                      const std::vector<PromptTemplate>& templates);

// OpenAI-compatible completions server backed by mock_complete. Accepts POST on
// /v1/completions and /completions.
class MockServer {
 public:
  MockServer(MockConfig cfg = {}, std::vector<PromptTemplate> templates = template_registry());
  ~MockServer();
  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  // Binds and serves on a background thread. port 0 picks a free port.
  // Throws std::runtime_error on bind failure.
  int start(const std::string& host, int port);
  // Binds and serves on the calling thread until stop() is called.
  void run(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

 private:
  MockConfig cfg_;
  std::vector<PromptTemplate> templates_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace lmic
