#include "lmic/mock_backend.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "httplib.h"
#include "json.hpp"

namespace lmic {

void MockConfig::validate() const {
  if (!(temperature > 0.0)) throw std::invalid_argument("mock: temperature must be positive");
  if (!(unit_scale > 0.0)) throw std::invalid_argument("mock: unit_scale must be positive");
  if (!(missing_penalty >= 0.0)) throw std::invalid_argument("mock: missing_penalty must be >= 0");
  if (!(template_bias >= 0.0)) throw std::invalid_argument("mock: template_bias must be >= 0");
}

std::vector<double> mock_template_bias(const std::string& template_id, std::size_t k, double width) {
  std::vector<double> bias(k, 0.0);
  if (width == 0.0) return bias;
  Rng rng(derive_seed(fnv1a64(template_id), "mock-template-bias"));
  for (auto& b : bias) b = width * (rng.uniform() - 0.5);
  return bias;
}

TokenLogprobs mock_complete(const std::string& prompt_text, const MockConfig& cfg,
                            const std::vector<PromptTemplate>& templates) {
  const PromptTemplate* tmpl = nullptr;
  std::optional<ParsedPrompt> parsed;
  for (const auto& t : templates) {
    parsed = parse_prompt(t, prompt_text);
    if (parsed) {
      tmpl = &t;
      break;
    }
  }
  if (!tmpl) throw std::invalid_argument("mock backend: prompt does not match any known template");

  const std::size_t k = tmpl->k();
  std::vector<double> sum_re(k, 0.0), sum_im(k, 0.0);
  std::vector<std::size_t> count(k, 0);
  for (const auto& d : parsed->demos) {
    const auto re = parse_number(d.re);
    const auto im = parse_number(d.im);
    if (!re || !im) throw std::invalid_argument("mock backend: non-numeric demonstration value");
    sum_re[d.label] += *re / cfg.unit_scale;
    sum_im[d.label] += *im / cfg.unit_scale;
    ++count[d.label];
  }

  std::vector<double> scores(k, 0.0);
  const auto qre = parse_number(parsed->query_re);
  const auto qim = parse_number(parsed->query_im);
  if (qre && qim) {
    const double x = *qre / cfg.unit_scale;
    const double y = *qim / cfg.unit_scale;
    double nearest = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i) {
      if (count[i] == 0) continue;
      const double n = static_cast<double>(count[i]);
      const double dx = x - sum_re[i] / n;
      const double dy = y - sum_im[i] / n;
      scores[i] = -(dx * dx + dy * dy) / cfg.temperature;
      nearest = std::max(nearest, scores[i]);
    }
    if (std::isinf(nearest)) nearest = 0.0;
    for (std::size_t i = 0; i < k; ++i)
      if (count[i] == 0) scores[i] = nearest - cfg.missing_penalty;
  }
  const auto bias = mock_template_bias(tmpl->id, k, cfg.template_bias);
  for (std::size_t i = 0; i < k; ++i) scores[i] += bias[i];

  const double top = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (double s : scores) z += std::exp(s - top);
  const double log_z = top + std::log(z);
  TokenLogprobs out;
  for (std::size_t i = 0; i < k; ++i) out[tmpl->label_verbalizer[i]] = scores[i] - log_z;
  return out;
}

MockBackend::MockBackend(MockConfig cfg, std::vector<PromptTemplate> templates)
    : cfg_(std::move(cfg)), templates_(std::move(templates)) {
  cfg_.validate();
}

TokenLogprobs MockBackend::complete(const std::string& prompt) const {
  try {
    return mock_complete(prompt, cfg_, templates_);
  } catch (const std::invalid_argument& e) {
    throw BackendError(e.what());
  }
}

MockResponse mock_completions_handler(const std::string& request_body, const MockConfig& cfg,
                                      const std::vector<PromptTemplate>& templates) {
  auto error = [](int status, const std::string& msg) {
    return MockResponse{status, nlohmann::json{{"error", {{"message", msg}, {"type", "invalid_request_error"}}}}.dump()};
  };
  nlohmann::json req;
  try {
    req = nlohmann::json::parse(request_body);
  } catch (const nlohmann::json::exception&) {
    return error(400, "request body is not valid JSON");
  }
  if (!req.is_object() || !req.contains("prompt") || !req["prompt"].is_string())
    return error(400, "field 'prompt' must be a string");
  if (req.contains("max_tokens") && !req["max_tokens"].is_number_integer())
    return error(400, "field 'max_tokens' must be an integer");
  if (req.contains("logprobs") && !req["logprobs"].is_null() && !req["logprobs"].is_number_integer())
    return error(400, "field 'logprobs' must be an integer");

  TokenLogprobs lp;
  try {
    lp = mock_complete(req["prompt"].get<std::string>(), cfg, templates);
  } catch (const std::invalid_argument& e) {
    return error(422, e.what());
  }
  const auto best = std::max_element(lp.begin(), lp.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
  nlohmann::json top = nlohmann::json::object();
  for (const auto& [tok, v] : lp) top[tok] = v;
  const std::string model = req.value("model", cfg.model);
  const nlohmann::json resp = {
      {"id", "cmpl-mock"},
      {"object", "text_completion"},
      {"model", model},
      {"choices",
       {{{"index", 0},
         {"text", best->first},
         {"finish_reason", "length"},
         {"logprobs",
          {{"tokens", {best->first}},
           {"token_logprobs", {best->second}},
           {"top_logprobs", {top}},
           {"text_offset", {0}}}}}}},
      {"usage", {{"completion_tokens", 1}}}};
  return {200, resp.dump()};
}

MockServer::MockServer(MockConfig cfg, std::vector<PromptTemplate> templates)
    : cfg_(std::move(cfg)), templates_(std::move(templates)), server_(std::make_unique<httplib::Server>()) {
  cfg_.validate();
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    const auto r = mock_completions_handler(req.body, cfg_, templates_);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  server_->Post("/v1/completions", handler);
  server_->Post("/completions", handler);
}

MockServer::~MockServer() { stop(); }

int MockServer::start(const std::string& host, int port) {
  if (port == 0)
    port_ = server_->bind_to_any_port(host);
  else
    port_ = server_->bind_to_port(host, port) ? port : -1;
  if (port_ < 0) throw std::runtime_error("mock server: cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void MockServer::run(const std::string& host, int port) {
  if (!server_->bind_to_port(host, port))
    throw std::runtime_error("mock server: cannot bind " + host + ":" + std::to_string(port));
  port_ = port;
  server_->listen_after_bind();
}

void MockServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace lmic
