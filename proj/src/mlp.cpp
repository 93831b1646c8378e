#include "lmic/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "json.hpp"
#include "lmic/calibration.hpp"

namespace lmic {

MLPSpec MLPSpec::dnn(int hidden_layers, std::size_t k) {
  if (hidden_layers < 4 || hidden_layers > 7) throw std::invalid_argument("DNN depth must be in [4, 7]");
  MLPSpec spec;
  spec.layer_sizes = {2, 10};
  for (int i = 1; i < hidden_layers; ++i) spec.layer_sizes.push_back(30);
  spec.layer_sizes.push_back(k);
  return spec;
}

std::size_t MLPSpec::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) n += (layer_sizes[l] + 1) * layer_sizes[l + 1];
  return n;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be positive");
}

void MLPModel::index_layers() {
  if (spec_.layer_sizes.size() < 2) throw std::invalid_argument("MLP needs at least input and output layers");
  offsets_.clear();
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < spec_.layer_sizes.size(); ++l) {
    offsets_.push_back(off);
    off += (spec_.layer_sizes[l] + 1) * spec_.layer_sizes[l + 1];
  }
}

MLPModel::MLPModel(MLPSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  index_layers();
  params_.resize(spec_.param_count());
  Rng rng(seed);
  for (std::size_t l = 0; l < layers(); ++l) {
    const std::size_t fan_in = spec_.layer_sizes[l];
    const std::size_t n = (fan_in + 1) * spec_.layer_sizes[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < n; ++i) params_[offsets_[l] + i] = rng.uniform(-bound, bound);
  }
}

MLPModel::MLPModel(MLPSpec spec, std::vector<double> params) : spec_(std::move(spec)), params_(std::move(params)) {
  index_layers();
  if (params_.size() != spec_.param_count()) throw std::invalid_argument("MLP parameter count mismatch");
}

MLPModel build_mlp(int depth, std::uint64_t seed, std::size_t k) { return MLPModel(MLPSpec::dnn(depth, k), seed); }

namespace {

// Per-sample scratch: activations of every layer, input first, and the
// backpropagated error of the current layer.
struct Workspace {
  std::vector<std::vector<double>> act;
  std::vector<double> delta;
  std::vector<double> delta_prev;

  explicit Workspace(const MLPModel& m) {
    for (auto n : m.spec().layer_sizes) act.emplace_back(n, 0.0);
  }
};

void forward_into(const MLPModel& m, const Features& x, Workspace& ws) {
  const auto p = m.params();
  ws.act[0][0] = x[0];
  ws.act[0][1] = x[1];
  const std::size_t last = m.layers() - 1;
  for (std::size_t l = 0; l < m.layers(); ++l) {
    const std::size_t in = m.spec().layer_sizes[l];
    const std::size_t out = m.spec().layer_sizes[l + 1];
    const double* w = p.data() + m.weight_offset(l);
    const double* b = p.data() + m.bias_offset(l);
    const double* a = ws.act[l].data();
    double* z = ws.act[l + 1].data();
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b[o];
      const double* row = w + o * in;
      for (std::size_t i = 0; i < in; ++i) acc += row[i] * a[i];
      z[o] = (l == last || acc > 0.0) ? acc : 0.0;
    }
  }
  auto& logits = ws.act.back();
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (auto& v : logits) {
    v = std::exp(v - top);
    sum += v;
  }
  for (auto& v : logits) v /= sum;
}

// Cross-entropy of one sample; gradient written (not accumulated) into grad.
double sample_gradient(const MLPModel& m, const Features& x, Label y, Workspace& ws, std::span<double> grad) {
  forward_into(m, x, ws);
  const auto& probs = ws.act.back();
  const double loss = -std::log(std::max(probs[y], 1e-300));
  const auto p = m.params();
  ws.delta.assign(probs.begin(), probs.end());
  ws.delta[y] -= 1.0;
  for (std::size_t l = m.layers(); l-- > 0;) {
    const std::size_t in = m.spec().layer_sizes[l];
    const std::size_t out = m.spec().layer_sizes[l + 1];
    const double* a = ws.act[l].data();
    double* gw = grad.data() + m.weight_offset(l);
    double* gb = grad.data() + m.bias_offset(l);
    for (std::size_t o = 0; o < out; ++o) {
      const double d = ws.delta[o];
      gb[o] = d;
      double* row = gw + o * in;
      for (std::size_t i = 0; i < in; ++i) row[i] = d * a[i];
    }
    if (l == 0) break;
    const double* w = p.data() + m.weight_offset(l);
    ws.delta_prev.assign(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double d = ws.delta[o];
      const double* row = w + o * in;
      for (std::size_t i = 0; i < in; ++i) ws.delta_prev[i] += row[i] * d;
    }
    for (std::size_t i = 0; i < in; ++i)
      if (!(a[i] > 0.0)) ws.delta_prev[i] = 0.0;
    std::swap(ws.delta, ws.delta_prev);
  }
  return loss;
}

void check_batch(const MLPModel& m, std::size_t n_inputs, std::size_t n_out) {
  if (n_out != n_inputs * m.output_size()) throw std::invalid_argument("forward_batch: output span size mismatch");
}

}  // namespace

std::vector<double> forward(const MLPModel& model, const Features& x) {
  Workspace ws(model);
  forward_into(model, x, ws);
  return ws.act.back();
}

void forward_batch_serial(const MLPModel& model, std::span<const Features> inputs, std::span<double> probs_out) {
  check_batch(model, inputs.size(), probs_out.size());
  const std::size_t k = model.output_size();
  Workspace ws(model);
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    forward_into(model, inputs[s], ws);
    std::copy(ws.act.back().begin(), ws.act.back().end(), probs_out.begin() + static_cast<std::ptrdiff_t>(s * k));
  }
}

void forward_batch(const MLPModel& model, std::span<const Features> inputs, std::span<double> probs_out) {
  check_batch(model, inputs.size(), probs_out.size());
  const std::size_t k = model.output_size();
  const auto n = static_cast<std::ptrdiff_t>(inputs.size());
#pragma omp parallel
  {
    Workspace ws(model);
#pragma omp for schedule(static)
    for (std::ptrdiff_t s = 0; s < n; ++s) {
      forward_into(model, inputs[static_cast<std::size_t>(s)], ws);
      std::copy(ws.act.back().begin(), ws.act.back().end(), probs_out.begin() + s * static_cast<std::ptrdiff_t>(k));
    }
  }
}

double loss_and_gradient_serial(const MLPModel& model, std::span<const Features> inputs,
                                std::span<const Label> labels, std::span<double> grad) {
  if (inputs.empty() || inputs.size() != labels.size()) throw std::invalid_argument("loss_and_gradient: bad batch");
  if (grad.size() != model.params().size()) throw std::invalid_argument("loss_and_gradient: gradient size mismatch");
  Workspace ws(model);
  std::vector<double> scratch(grad.size());
  std::fill(grad.begin(), grad.end(), 0.0);
  double loss = 0.0;
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    loss += sample_gradient(model, inputs[s], labels[s], ws, scratch);
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += scratch[i];
  }
  const double inv_n = 1.0 / static_cast<double>(inputs.size());
  for (auto& g : grad) g *= inv_n;
  return loss * inv_n;
}

double loss_and_gradient(const MLPModel& model, std::span<const Features> inputs, std::span<const Label> labels,
                         std::span<double> grad) {
  GradientScratch scratch;
  return loss_and_gradient(model, inputs, labels, grad, scratch);
}

double loss_and_gradient(const MLPModel& model, std::span<const Features> inputs, std::span<const Label> labels,
                         std::span<double> grad, GradientScratch& scratch) {
  if (inputs.empty() || inputs.size() != labels.size()) throw std::invalid_argument("loss_and_gradient: bad batch");
  if (grad.size() != model.params().size()) throw std::invalid_argument("loss_and_gradient: gradient size mismatch");
  const std::size_t n = inputs.size();
  const std::size_t p = grad.size();
  scratch.slots.resize(n * p);
  scratch.losses.resize(n);
  auto& slots = scratch.slots;
  auto& losses = scratch.losses;
#pragma omp parallel
  {
    Workspace ws(model);
#pragma omp for schedule(static)
    for (std::ptrdiff_t s = 0; s < static_cast<std::ptrdiff_t>(n); ++s) {
      const auto u = static_cast<std::size_t>(s);
      losses[u] = sample_gradient(model, inputs[u], labels[u], ws, std::span<double>(slots).subspan(u * p, p));
    }
    // Ordered reduction over samples, partitioned into parameter tiles so each
    // pass reads contiguous rows of the slot matrix.
    constexpr std::size_t tile = 256;
    const auto n_tiles = static_cast<std::ptrdiff_t>((p + tile - 1) / tile);
#pragma omp for schedule(static)
    for (std::ptrdiff_t t = 0; t < n_tiles; ++t) {
      const std::size_t lo = static_cast<std::size_t>(t) * tile, hi = std::min(p, lo + tile);
      std::fill(grad.begin() + static_cast<std::ptrdiff_t>(lo), grad.begin() + static_cast<std::ptrdiff_t>(hi), 0.0);
      for (std::size_t s = 0; s < n; ++s) {
        const double* row = slots.data() + s * p;
        for (std::size_t i = lo; i < hi; ++i) grad[i] += row[i];
      }
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  for (auto& g : grad) g *= inv_n;
  double loss = 0.0;
  for (double l : losses) loss += l;
  return loss * inv_n;
}

TrainResult train(MLPModel model, std::span<const ReceivedSample> demos, const TrainConfig& cfg) {
  if (demos.empty()) throw std::invalid_argument("train: no samples");
  cfg.validate();
  std::vector<Features> inputs;
  std::vector<Label> labels;
  for (const auto& s : demos) {
    if (s.y >= model.output_size()) throw std::out_of_range("train: label out of range");
    inputs.push_back(features_of(s));
    labels.push_back(s.y);
  }
  const std::size_t p = model.params().size();
  std::vector<double> grad(p), m(p, 0.0), v(p, 0.0);
  TrainResult result;
  result.loss_curve.reserve(cfg.epochs + 1);
  GradientScratch scratch;
  double b1t = 1.0;
  double b2t = 1.0;
  auto params = model.params();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    result.loss_curve.push_back(loss_and_gradient(model, inputs, labels, grad, scratch));
    b1t *= cfg.beta1;
    b2t *= cfg.beta2;
    const double step = cfg.learning_rate * std::sqrt(1.0 - b2t) / (1.0 - b1t);
    const double eps_hat = cfg.adam_eps * std::sqrt(1.0 - b2t);
    for (std::size_t i = 0; i < p; ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
      params[i] -= step * m[i] / (std::sqrt(v[i]) + eps_hat);
    }
  }
  result.loss_curve.push_back(loss_and_gradient(model, inputs, labels, grad, scratch));
  result.model = std::move(model);
  return result;
}

EvalResult evaluate(const MLPModel& model, std::span<const ReceivedSample> test) {
  EvalResult r;
  if (test.empty()) return r;
  const std::size_t k = model.output_size();
  std::vector<Features> inputs;
  inputs.reserve(test.size());
  for (const auto& s : test) inputs.push_back(features_of(s));
  std::vector<double> flat(test.size() * k);
  forward_batch(model, inputs, flat);
  std::size_t correct = 0;
  for (std::size_t s = 0; s < test.size(); ++s) {
    LabelProbs lp;
    lp.probs.assign(flat.begin() + static_cast<std::ptrdiff_t>(s * k),
                    flat.begin() + static_cast<std::ptrdiff_t>((s + 1) * k));
    lp.source = "mlp";
    const Label pred = predict(lp.probs);
    correct += pred == test[s].y ? 1 : 0;
    r.predictions.push_back(pred);
    r.probs.push_back(std::move(lp));
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
  return r;
}

void write_model_json(std::ostream& out, const MLPModel& model) {
  const auto params = model.params();
  const nlohmann::json doc = {{"layer_sizes", model.spec().layer_sizes},
                              {"activation", "relu"},
                              {"output", "softmax"},
                              {"params", std::vector<double>(params.begin(), params.end())}};
  out << doc.dump() << '\n';
}

MLPModel read_model_json(std::istream& in) {
  const auto doc = nlohmann::json::parse(in);
  MLPSpec spec{doc.at("layer_sizes").get<std::vector<std::size_t>>()};
  return MLPModel(std::move(spec), doc.at("params").get<std::vector<double>>());
}

void write_loss_curve_csv(std::ostream& out, std::span<const double> curve) {
  out << "epoch,loss\n";
  out.precision(17);
  for (std::size_t i = 0; i < curve.size(); ++i) out << i << ',' << curve[i] << '\n';
}

}  // namespace lmic
