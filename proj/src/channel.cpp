#include "lmic/channel.hpp"

#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>

#include "json.hpp"

namespace lmic {

std::vector<Ring> default_ring_spec() { return {{4, 1.0, std::nullopt}, {4, 2.0, std::nullopt}}; }

Constellation make_constellation(const std::vector<Ring>& ring_spec) {
  if (ring_spec.empty()) throw std::invalid_argument("make_constellation: empty ring spec");
  double prev_radius = 0.0;
  for (const auto& ring : ring_spec) {
    if (ring.size == 0) throw std::invalid_argument("make_constellation: ring with zero points");
    if (!(ring.radius > 0.0)) throw std::invalid_argument("make_constellation: non-positive radius");
    if (!(ring.radius > prev_radius))
      throw std::invalid_argument("make_constellation: radii must be strictly increasing");
    prev_radius = ring.radius;
  }

  Constellation c;
  c.ring_spec = ring_spec;
  double energy = 0.0;
  for (std::size_t r = 0; r < ring_spec.size(); ++r) {
    const auto& ring = ring_spec[r];
    const bool outermost = r + 1 == ring_spec.size();
    const double phase =
        ring.phase.value_or(outermost ? 0.0 : std::numbers::pi / static_cast<double>(ring.size));
    for (std::size_t i = 0; i < ring.size; ++i) {
      const double angle = phase + 2.0 * std::numbers::pi * static_cast<double>(i) /
                                       static_cast<double>(ring.size);
      c.points.push_back(std::polar(ring.radius, angle));
      energy += ring.radius * ring.radius;
    }
  }
  c.k = c.points.size();
  const double scale = 1.0 / std::sqrt(energy / static_cast<double>(c.k));
  for (auto& p : c.points) p *= scale;
  return c;
}

void ImbalanceConfig::validate() const {
  if (!(beta_a > 0.0) || !(beta_b > 0.0))
    throw std::invalid_argument("ImbalanceConfig: beta shapes must be positive");
  if (!(epsilon_scale >= 0.0) || !(delta_scale >= 0.0))
    throw std::invalid_argument("ImbalanceConfig: imbalance scales must be non-negative");
  if (std::isnan(snr_db)) throw std::invalid_argument("ImbalanceConfig: snr_db is NaN");
}

ChannelState sample_channel_state(Rng& rng, const ImbalanceConfig& cfg) {
  ChannelState s;
  s.psi = 2.0 * std::numbers::pi * rng.uniform();
  s.epsilon = cfg.epsilon_scale * rng.beta(cfg.beta_a, cfg.beta_b);
  s.delta = cfg.delta_scale * rng.beta(cfg.beta_a, cfg.beta_b);
  return s;
}

Complex apply_iq_imbalance(Complex y, double epsilon, double delta) {
  const double c = std::cos(delta);
  const double s = std::sin(delta);
  const double i = (1.0 + epsilon) * (c * y.real() - s * y.imag());
  const double q = (1.0 - epsilon) * (-s * y.real() + c * y.imag());
  return {i, q};
}

double noise_variance(double snr_db) {
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  return std::pow(10.0, -snr_db / 10.0);
}

ReceivedSample transmit(Label label, const Constellation& constellation, const ChannelState& state,
                        double snr_db, Rng& rng) {
  if (label >= constellation.k) throw std::out_of_range("transmit: label out of range");
  const Complex rotated =
      std::polar(1.0, state.psi) * apply_iq_imbalance(constellation.points[label], state.epsilon, state.delta);
  const double var = noise_variance(snr_db);
  Complex noise{0.0, 0.0};
  if (var > 0.0) {
    const double sigma = std::sqrt(var / 2.0);
    const auto [a, b] = rng.normal_pair();
    noise = {sigma * a, sigma * b};
  }
  return {rotated + noise, label};
}

TaskDataset generate_task(Rng& rng, std::size_t n_shots, std::size_t n_test,
                          const Constellation& constellation, const ImbalanceConfig& cfg) {
  if (n_shots < 1 || n_test < 1) throw std::invalid_argument("generate_task: need n_shots >= 1 and n_test >= 1");
  cfg.validate();
  TaskDataset task;
  task.seed = rng.seed();
  task.state = sample_channel_state(rng, cfg);
  auto draw = [&](std::size_t count, std::vector<ReceivedSample>& out) {
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      const Label y = rng.index(constellation.k);
      out.push_back(transmit(y, constellation, task.state, cfg.snr_db, rng));
    }
  };
  draw(n_shots, task.demos);
  draw(n_test, task.test);
  return task;
}

void write_task_jsonl(std::ostream& out, const TaskDataset& task, const std::string& task_id) {
  auto emit = [&](const ReceivedSample& s, const char* split) {
    nlohmann::json rec = {{"re", s.x.real()},          {"im", s.x.imag()},
                          {"label", s.y},              {"split", split},
                          {"task_id", task_id},        {"seed", task.seed},
                          {"psi", task.state.psi},     {"epsilon", task.state.epsilon},
                          {"delta", task.state.delta}};
    out << rec.dump() << '\n';
  };
  for (const auto& s : task.demos) emit(s, "demo");
  for (const auto& s : task.test) emit(s, "test");
}

std::vector<NamedTask> read_tasks_jsonl(std::istream& in) {
  std::vector<NamedTask> tasks;
  std::map<std::string, std::size_t> index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("task file line " + std::to_string(lineno) + ": " + e.what());
    }
    const auto id = rec.at("task_id").get<std::string>();
    auto [it, inserted] = index.emplace(id, tasks.size());
    if (inserted) {
      NamedTask t;
      t.task_id = id;
      t.task.seed = rec.at("seed").get<std::uint64_t>();
      t.task.state = {rec.value("psi", 0.0), rec.value("epsilon", 0.0), rec.value("delta", 0.0)};
      tasks.push_back(std::move(t));
    }
    ReceivedSample s{{rec.at("re").get<double>(), rec.at("im").get<double>()}, rec.at("label").get<Label>()};
    const auto split = rec.at("split").get<std::string>();
    auto& task = tasks[it->second].task;
    if (split == "demo")
      task.demos.push_back(s);
    else if (split == "test")
      task.test.push_back(s);
    else
      throw std::runtime_error("task file line " + std::to_string(lineno) + ": unknown split '" + split + "'");
  }
  return tasks;
}

}  // namespace lmic
