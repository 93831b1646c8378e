#pragma once

#include <atomic>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lmic/prompting.hpp"

namespace lmic {

// Next-token log-probabilities keyed by token text.
using TokenLogprobs = std::map<std::string, double>;

class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A completion endpoint that returns the top log-probabilities of the first
// generated token. Implementations must be safe to call concurrently.
class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;
  virtual std::string id() const = 0;
  virtual TokenLogprobs complete(const std::string& prompt) const = 0;
};

struct BackendConfig {
  std::string base_url = "mock";  // "mock", "replay:<file>", or an http(s) URL ending in /v1
  std::string api_key_env = "OPENAI_API_KEY";
  std::string model = "mock";
  int top_logprobs = 20;
  double timeout_s = 60.0;
  int max_parallel = 4;
  int retries = 3;
  int retry_backoff_ms = 250;
  std::string replay_log;  // when set, every request/response pair is appended here

  void validate() const;
  bool is_mock() const { return base_url == "mock"; }
  bool is_remote() const { return base_url.starts_with("http://") || base_url.starts_with("https://"); }
};

struct LabelProbs {
  std::vector<double> probs;
  double coverage = 1.0;  // label mass before renormalization
  std::string source;

  std::size_t k() const { return probs.size(); }
};

// Per label takes the larger of the "L" and " L" token entries, drops the rest,
// and renormalizes. Throws BackendError when no label token is present.
LabelProbs reduce_label_logprobs(const TokenLogprobs& logprobs, std::span<const std::string> label_tokens,
                                 const std::string& source);

LabelProbs label_probabilities(const CompletionBackend& backend, const Prompt& prompt);

// Issues up to `max_parallel` requests at a time; output[i] belongs to prompts[i].
std::vector<LabelProbs> label_probabilities_batch(const CompletionBackend& backend, std::span<const Prompt> prompts,
                                                  int max_parallel);

// OpenAI-compatible /completions client.
class HttpBackend final : public CompletionBackend {
 public:
  // Throws std::runtime_error when api_key_env names an unset variable.
  explicit HttpBackend(BackendConfig cfg);
  std::string id() const override { return cfg_.model; }
  TokenLogprobs complete(const std::string& prompt) const override;

  static std::string request_body(const std::string& model, const std::string& prompt, int top_logprobs);
  // Extracts the first token's top_logprobs from a completions response.
  static TokenLogprobs parse_response(const std::string& body);

 private:
  BackendConfig cfg_;
  std::string scheme_host_port_;
  std::string path_prefix_;
  std::string api_key_;
};

// Appends {"prompt", "top_logprobs"} lines to a file for offline re-runs.
class RecordingBackend final : public CompletionBackend {
 public:
  RecordingBackend(std::shared_ptr<const CompletionBackend> inner, std::string path);
  std::string id() const override { return inner_->id(); }
  TokenLogprobs complete(const std::string& prompt) const override;

 private:
  std::shared_ptr<const CompletionBackend> inner_;
  std::string path_;
  mutable std::mutex mu_;
};

// Serves responses from a file written by RecordingBackend.
class ReplayBackend final : public CompletionBackend {
 public:
  explicit ReplayBackend(const std::string& path);
  std::string id() const override { return "replay"; }
  TokenLogprobs complete(const std::string& prompt) const override;
  std::size_t size() const { return table_.size(); }

 private:
  std::map<std::string, TokenLogprobs> table_;
};

// Enforces a cap on the number of completion calls.
class CountingBackend final : public CompletionBackend {
 public:
  CountingBackend(std::shared_ptr<const CompletionBackend> inner, std::size_t max_calls);
  std::string id() const override { return inner_->id(); }
  TokenLogprobs complete(const std::string& prompt) const override;
  std::size_t calls() const { return calls_.load(); }

 private:
  std::shared_ptr<const CompletionBackend> inner_;
  std::size_t max_calls_;
  mutable std::atomic<std::size_t> calls_{0};
};

struct MockConfig;
std::shared_ptr<const CompletionBackend> make_backend(const BackendConfig& cfg, const MockConfig& mock,
                                                      std::vector<PromptTemplate> templates);

}  // namespace lmic
