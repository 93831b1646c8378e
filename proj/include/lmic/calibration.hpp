#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lmic/llm_client.hpp"

namespace lmic {

enum class CalibMethod { vanilla, conc, linc };

std::string_view to_string(CalibMethod m);
CalibMethod calib_method_from_string(std::string_view s);

// Affine map on label probabilities followed by softmax (Platt scaling).
struct CalibParams {
  std::size_t k = 0;
  std::vector<double> a;  // k x k, row-major
  std::vector<double> b;  // k
  CalibMethod method = CalibMethod::vanilla;

  static CalibParams identity(std::size_t k, CalibMethod method = CalibMethod::vanilla);
  double& at(std::size_t row, std::size_t col) { return a[row * k + col]; }
  double at(std::size_t row, std::size_t col) const { return a[row * k + col]; }
};

enum class LincInit { identity_a_zero_b, zero_a_zero_b };

struct LinCConfig {
  double learning_rate = 0.01;
  std::size_t epochs = 100;
  LincInit init = LincInit::identity_a_zero_b;

  void validate() const;
};

struct ProbeItem {
  LabelProbs probs;
  Label label = 0;
};

// argmax; ties resolve to the lowest label.
Label predict(std::span<const double> p);
inline Label predict(const LabelProbs& p) { return predict(p.probs); }

std::vector<double> softmax(std::span<const double> z);

// softmax(A p + b). Throws std::domain_error on a non-finite intermediate.
std::vector<double> platt_transform(const CalibParams& params, std::span<const double> p);

// Vanilla parameters pass p through untouched; every other method applies the
// Platt transform.
LabelProbs apply_calibration(const CalibParams& params, const LabelProbs& p);

// A = diag(p_cf)^-1, b = 0. Throws std::domain_error when any entry of p_cf is
// below 1e-9.
CalibParams conc_params(const LabelProbs& p_cf);

// Arithmetic mean of probability vectors, renormalized.
LabelProbs average_probs(std::span<const LabelProbs> items);

// Mean label distribution over content-free variants of the query.
LabelProbs conc_content_free_probs(const CompletionBackend& backend, const PromptTemplate& t,
                                   std::span<const ReceivedSample> demos, std::span<const std::string> cf_texts,
                                   const QuantizationConfig& q, int max_parallel = 1);

struct LincObjective {
  double loss = 0.0;
  std::vector<double> grad_a;
  std::vector<double> grad_b;
};

// Mean cross-entropy of softmax(A p + b) over the probe set and its gradient.
LincObjective linc_objective(const CalibParams& params, std::span<const ProbeItem> probe);

// Full-batch gradient descent from the configured init; returns the iterate
// with the lowest training loss.
CalibParams linc_fit(std::span<const ProbeItem> probe, const LinCConfig& cfg);

// Leave-one-out probes: demonstration i becomes the query of a prompt built
// from the remaining N-1 demonstrations.
std::vector<ProbeItem> linc_probe_set(const CompletionBackend& backend, const PromptTemplate& t,
                                      std::span<const ReceivedSample> demos, const QuantizationConfig& q,
                                      int max_parallel = 1);
std::vector<Prompt> linc_probe_prompts(const PromptTemplate& t, std::span<const ReceivedSample> demos,
                                       const QuantizationConfig& q);

void write_calib_params(std::ostream& out, const CalibParams& params);
CalibParams read_calib_params(std::istream& in);

}  // namespace lmic
