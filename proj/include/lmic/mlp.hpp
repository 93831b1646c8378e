#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "lmic/channel.hpp"
#include "lmic/llm_client.hpp"

namespace lmic {

// Fully connected ReLU network with a softmax output.
struct MLPSpec {
  std::vector<std::size_t> layer_sizes;  // input first, output last

  // DNN-4 is [2, 10, 30, 30, 30, 8]; each extra depth adds a 30-unit layer.
  static MLPSpec dnn(int hidden_layers, std::size_t k = 8);
  std::size_t param_count() const;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t epochs = 2000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

using Features = std::array<double, 2>;

inline Features features_of(const ReceivedSample& s) { return {s.x.real(), s.x.imag()}; }

class MLPModel {
 public:
  MLPModel() = default;
  // Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  MLPModel(MLPSpec spec, std::uint64_t seed);
  MLPModel(MLPSpec spec, std::vector<double> params);

  const MLPSpec& spec() const { return spec_; }
  std::size_t layers() const { return spec_.layer_sizes.size() - 1; }
  std::size_t input_size() const { return spec_.layer_sizes.front(); }
  std::size_t output_size() const { return spec_.layer_sizes.back(); }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  // Layer l maps layer_sizes[l] -> layer_sizes[l+1]; W is row-major (out x in).
  std::size_t weight_offset(std::size_t l) const { return offsets_[l]; }
  std::size_t bias_offset(std::size_t l) const {
    return offsets_[l] + spec_.layer_sizes[l] * spec_.layer_sizes[l + 1];
  }

 private:
  void index_layers();

  MLPSpec spec_;
  std::vector<double> params_;
  std::vector<std::size_t> offsets_;
};

// Hidden-layer count in {4,5,6,7}.
MLPModel build_mlp(int depth, std::uint64_t seed, std::size_t k = 8);

std::vector<double> forward(const MLPModel& model, const Features& x);

// Batched kernels. The OpenMP versions parallelize over samples and reduce in
// sample order, so they agree bit-for-bit with the serial references.
void forward_batch(const MLPModel& model, std::span<const Features> inputs, std::span<double> probs_out);
void forward_batch_serial(const MLPModel& model, std::span<const Features> inputs, std::span<double> probs_out);

// Per-sample gradient slots reused across calls.
struct GradientScratch {
  std::vector<double> slots;
  std::vector<double> losses;
};

// Mean cross-entropy over the batch; writes d(loss)/d(params) into grad.
double loss_and_gradient(const MLPModel& model, std::span<const Features> inputs, std::span<const Label> labels,
                         std::span<double> grad, GradientScratch& scratch);
double loss_and_gradient(const MLPModel& model, std::span<const Features> inputs, std::span<const Label> labels,
                         std::span<double> grad);
double loss_and_gradient_serial(const MLPModel& model, std::span<const Features> inputs,
                                std::span<const Label> labels, std::span<double> grad);

struct TrainResult {
  MLPModel model;
  std::vector<double> loss_curve;  // loss before each update, then the final loss
};

// Full-batch Adam on raw (Re x, Im x) features.
TrainResult train(MLPModel model, std::span<const ReceivedSample> demos, const TrainConfig& cfg);

struct EvalResult {
  double accuracy = 0.0;
  std::vector<LabelProbs> probs;
  std::vector<Label> predictions;
};

EvalResult evaluate(const MLPModel& model, std::span<const ReceivedSample> test);

void write_model_json(std::ostream& out, const MLPModel& model);
MLPModel read_model_json(std::istream& in);
void write_loss_curve_csv(std::ostream& out, std::span<const double> curve);

}  // namespace lmic
