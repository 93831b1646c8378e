#include "lmic/llm_client.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <thread>

#include "json.hpp"
#include "lmic/mock_backend.hpp"

namespace lmic {

void BackendConfig::validate() const {
  if (max_parallel < 1) throw std::invalid_argument("backend: max_parallel must be >= 1");
  if (top_logprobs < 1) throw std::invalid_argument("backend: top_logprobs must be >= 1");
  if (retries < 0) throw std::invalid_argument("backend: retries must be >= 0");
  if (!(timeout_s > 0.0)) throw std::invalid_argument("backend: timeout must be positive");
  if (!is_mock() && !is_remote() && !base_url.starts_with("replay:"))
    throw std::invalid_argument("backend: expected 'mock', 'replay:<file>' or an http(s) URL, got '" + base_url +
                                "'");
}

LabelProbs reduce_label_logprobs(const TokenLogprobs& logprobs, std::span<const std::string> label_tokens,
                                 const std::string& source) {
  LabelProbs out;
  out.source = source;
  out.probs.assign(label_tokens.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < label_tokens.size(); ++i) {
    double best = 0.0;
    for (const auto& variant : {label_tokens[i], " " + label_tokens[i]}) {
      const auto it = logprobs.find(variant);
      if (it == logprobs.end()) continue;
      if (std::isnan(it->second) || it->second > 1e-9)
        throw BackendError("malformed logprob for token '" + variant + "'");
      best = std::max(best, std::exp(it->second));
    }
    out.probs[i] = best;
    total += best;
  }
  if (!(total > 0.0))
    throw BackendError("no label token found among returned logprobs (tokenizer mismatch?)");
  for (auto& p : out.probs) p /= total;
  out.coverage = std::min(total, 1.0);
  return out;
}

LabelProbs label_probabilities(const CompletionBackend& backend, const Prompt& prompt) {
  if (prompt.label_tokens.empty()) throw std::invalid_argument("label_probabilities: prompt has no label tokens");
  return reduce_label_logprobs(backend.complete(prompt.text), prompt.label_tokens, backend.id());
}

std::vector<LabelProbs> label_probabilities_batch(const CompletionBackend& backend, std::span<const Prompt> prompts,
                                                  int max_parallel) {
  std::vector<LabelProbs> out(prompts.size());
  const std::size_t workers = std::min<std::size_t>(std::max(max_parallel, 1), prompts.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < prompts.size(); ++i) out[i] = label_probabilities(backend, prompts[i]);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mu;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= prompts.size() || failed.load()) return;
      try {
        out[i] = label_probabilities(backend, prompts[i]);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return out;
}

RecordingBackend::RecordingBackend(std::shared_ptr<const CompletionBackend> inner, std::string path)
    : inner_(std::move(inner)), path_(std::move(path)) {}

TokenLogprobs RecordingBackend::complete(const std::string& prompt) const {
  auto result = inner_->complete(prompt);
  const nlohmann::json rec = {{"prompt", prompt}, {"top_logprobs", result}};
  std::lock_guard lock(mu_);
  std::ofstream out(path_, std::ios::app);
  if (!out) throw std::runtime_error("cannot open replay log '" + path_ + "'");
  out << rec.dump() << '\n';
  return result;
}

ReplayBackend::ReplayBackend(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open replay file '" + path + "'");
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto rec = nlohmann::json::parse(line);
    table_[rec.at("prompt").get<std::string>()] = rec.at("top_logprobs").get<TokenLogprobs>();
  }
}

TokenLogprobs ReplayBackend::complete(const std::string& prompt) const {
  const auto it = table_.find(prompt);
  if (it == table_.end()) throw BackendError("replay file has no response for this prompt");
  return it->second;
}

CountingBackend::CountingBackend(std::shared_ptr<const CompletionBackend> inner, std::size_t max_calls)
    : inner_(std::move(inner)), max_calls_(max_calls) {}

TokenLogprobs CountingBackend::complete(const std::string& prompt) const {
  if (calls_.fetch_add(1) >= max_calls_)
    throw BackendError("backend call cap of " + std::to_string(max_calls_) + " reached");
  return inner_->complete(prompt);
}

std::shared_ptr<const CompletionBackend> make_backend(const BackendConfig& cfg, const MockConfig& mock,
                                                      std::vector<PromptTemplate> templates) {
  cfg.validate();
  std::shared_ptr<const CompletionBackend> backend;
  if (cfg.is_mock())
    backend = std::make_shared<MockBackend>(mock, std::move(templates));
  else if (cfg.base_url.starts_with("replay:"))
    backend = std::make_shared<ReplayBackend>(cfg.base_url.substr(7));
  else
    backend = std::make_shared<HttpBackend>(cfg);
  if (!cfg.replay_log.empty()) backend = std::make_shared<RecordingBackend>(backend, cfg.replay_log);
  return backend;
}

}  // namespace lmic
