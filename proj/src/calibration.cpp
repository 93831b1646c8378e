#include "lmic/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "json.hpp"

namespace lmic {

std::string_view to_string(CalibMethod m) {
  switch (m) {
    case CalibMethod::vanilla: return "vanilla";
    case CalibMethod::conc: return "conc";
    case CalibMethod::linc: return "linc";
  }
  return "?";
}

CalibMethod calib_method_from_string(std::string_view s) {
  if (s == "vanilla") return CalibMethod::vanilla;
  if (s == "conc") return CalibMethod::conc;
  if (s == "linc") return CalibMethod::linc;
  throw std::invalid_argument("unknown calibration method '" + std::string(s) + "'");
}

CalibParams CalibParams::identity(std::size_t k, CalibMethod method) {
  CalibParams p;
  p.k = k;
  p.a.assign(k * k, 0.0);
  p.b.assign(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) p.at(i, i) = 1.0;
  p.method = method;
  return p;
}

void LinCConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("linc: learning_rate must be positive");
}

Label predict(std::span<const double> p) {
  if (p.empty()) throw std::invalid_argument("predict: empty probability vector");
  Label best = 0;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (p[i] > p[best]) best = i;
  return best;
}

std::vector<double> softmax(std::span<const double> z) {
  const double top = *std::max_element(z.begin(), z.end());
  std::vector<double> out(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - top);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

namespace {

std::vector<double> affine(const CalibParams& params, std::span<const double> p) {
  if (p.size() != params.k) throw std::invalid_argument("calibration: dimension mismatch");
  std::vector<double> z(params.k);
  for (std::size_t i = 0; i < params.k; ++i) {
    double acc = params.b[i];
    for (std::size_t j = 0; j < params.k; ++j) acc += params.at(i, j) * p[j];
    z[i] = acc;
  }
  return z;
}

}  // namespace

std::vector<double> platt_transform(const CalibParams& params, std::span<const double> p) {
  const auto z = affine(params, p);
  for (double v : z)
    if (!std::isfinite(v)) throw std::domain_error("calibration: non-finite logit (pathological parameters)");
  auto out = softmax(z);
  for (double v : out)
    if (!std::isfinite(v)) throw std::domain_error("calibration: non-finite probability");
  return out;
}

LabelProbs apply_calibration(const CalibParams& params, const LabelProbs& p) {
  if (params.method == CalibMethod::vanilla) return p;
  LabelProbs out = p;
  out.probs = platt_transform(params, p.probs);
  return out;
}

CalibParams conc_params(const LabelProbs& p_cf) {
  constexpr double floor = 1e-9;
  CalibParams params = CalibParams::identity(p_cf.k(), CalibMethod::conc);
  for (std::size_t i = 0; i < p_cf.k(); ++i) {
    if (!(p_cf.probs[i] >= floor))
      throw std::domain_error("conc: content-free probability of label " + std::to_string(i) +
                              " is below 1e-9; add more content-free inputs");
    params.at(i, i) = 1.0 / p_cf.probs[i];
  }
  return params;
}

LabelProbs average_probs(std::span<const LabelProbs> items) {
  if (items.empty()) throw std::invalid_argument("average_probs: no inputs");
  LabelProbs out;
  out.source = items.front().source;
  out.probs.assign(items.front().k(), 0.0);
  double coverage = 0.0;
  for (const auto& item : items) {
    if (item.k() != out.k()) throw std::invalid_argument("average_probs: dimension mismatch");
    for (std::size_t i = 0; i < out.k(); ++i) out.probs[i] += item.probs[i];
    coverage += item.coverage;
  }
  double total = 0.0;
  for (double v : out.probs) total += v;
  for (auto& v : out.probs) v /= total;
  out.coverage = coverage / static_cast<double>(items.size());
  return out;
}

LabelProbs conc_content_free_probs(const CompletionBackend& backend, const PromptTemplate& t,
                                   std::span<const ReceivedSample> demos, std::span<const std::string> cf_texts,
                                   const QuantizationConfig& q, int max_parallel) {
  if (cf_texts.empty()) throw std::invalid_argument("conc: no content-free inputs");
  std::vector<Prompt> prompts;
  for (const auto& cf : cf_texts) prompts.push_back(content_free_prompt(t, demos, cf, q));
  const auto probs = label_probabilities_batch(backend, prompts, max_parallel);
  return average_probs(probs);
}

LincObjective linc_objective(const CalibParams& params, std::span<const ProbeItem> probe) {
  if (probe.empty()) throw std::invalid_argument("linc: empty probe set");
  const std::size_t k = params.k;
  LincObjective obj;
  obj.grad_a.assign(k * k, 0.0);
  obj.grad_b.assign(k, 0.0);
  const double inv_n = 1.0 / static_cast<double>(probe.size());
  for (const auto& item : probe) {
    if (item.label >= k) throw std::out_of_range("linc: probe label out of range");
    const auto z = affine(params, item.probs.probs);
    const double top = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - top);
    const double log_z = top + std::log(sum);
    obj.loss += (log_z - z[item.label]) * inv_n;
    for (std::size_t i = 0; i < k; ++i) {
      const double dz = (std::exp(z[i] - log_z) - (i == item.label ? 1.0 : 0.0)) * inv_n;
      obj.grad_b[i] += dz;
      for (std::size_t j = 0; j < k; ++j) obj.grad_a[i * k + j] += dz * item.probs.probs[j];
    }
  }
  return obj;
}

CalibParams linc_fit(std::span<const ProbeItem> probe, const LinCConfig& cfg) {
  if (probe.empty()) throw std::invalid_argument("linc: empty probe set");
  cfg.validate();
  const std::size_t k = probe.front().probs.k();
  CalibParams params = CalibParams::identity(k, CalibMethod::linc);
  if (cfg.init == LincInit::zero_a_zero_b) std::fill(params.a.begin(), params.a.end(), 0.0);

  CalibParams best = params;
  double best_loss = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 0;; ++epoch) {
    const auto obj = linc_objective(params, probe);
    if (obj.loss < best_loss) {
      best_loss = obj.loss;
      best = params;
    }
    if (epoch == cfg.epochs) break;
    for (std::size_t i = 0; i < params.a.size(); ++i) params.a[i] -= cfg.learning_rate * obj.grad_a[i];
    for (std::size_t i = 0; i < k; ++i) params.b[i] -= cfg.learning_rate * obj.grad_b[i];
  }
  return best;
}

std::vector<Prompt> linc_probe_prompts(const PromptTemplate& t, std::span<const ReceivedSample> demos,
                                       const QuantizationConfig& q) {
  if (demos.size() < 2) throw std::invalid_argument("linc: leave-one-out probes need at least 2 demonstrations");
  std::vector<Prompt> prompts;
  prompts.reserve(demos.size());
  std::vector<ReceivedSample> context;
  for (std::size_t i = 0; i < demos.size(); ++i) {
    context.clear();
    for (std::size_t j = 0; j < demos.size(); ++j)
      if (j != i) context.push_back(demos[j]);
    prompts.push_back(build_prompt(t, context, demos[i], q));
  }
  return prompts;
}

std::vector<ProbeItem> linc_probe_set(const CompletionBackend& backend, const PromptTemplate& t,
                                      std::span<const ReceivedSample> demos, const QuantizationConfig& q,
                                      int max_parallel) {
  const auto prompts = linc_probe_prompts(t, demos, q);
  auto probs = label_probabilities_batch(backend, prompts, max_parallel);
  std::vector<ProbeItem> probe;
  probe.reserve(demos.size());
  for (std::size_t i = 0; i < demos.size(); ++i) probe.push_back({std::move(probs[i]), demos[i].y});
  return probe;
}

void write_calib_params(std::ostream& out, const CalibParams& params) {
  const nlohmann::json doc = {
      {"method", to_string(params.method)}, {"k", params.k}, {"a", params.a}, {"b", params.b}};
  out << doc.dump(2) << '\n';
}

CalibParams read_calib_params(std::istream& in) {
  const auto doc = nlohmann::json::parse(in);
  CalibParams p;
  p.method = calib_method_from_string(doc.at("method").get<std::string>());
  p.k = doc.at("k").get<std::size_t>();
  p.a = doc.at("a").get<std::vector<double>>();
  p.b = doc.at("b").get<std::vector<double>>();
  if (p.a.size() != p.k * p.k || p.b.size() != p.k) throw std::runtime_error("calibration file: shape mismatch");
  return p;
}

}  // namespace lmic
