#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "lmic/rng.hpp"

namespace lmic {

using Label = std::size_t;
using Complex = std::complex<double>;

struct Ring {
  std::size_t size = 0;
  double radius = 0.0;
  // Angle of the ring's first point. Defaults to 0 on the outermost ring and
  // pi/size on every inner ring.
  std::optional<double> phase;
};

struct Constellation {
  std::vector<Complex> points;
  std::size_t k = 0;
  std::vector<Ring> ring_spec;

  const Complex& point(Label label) const { return points.at(label); }
};

// Two-ring (4,4) 8-APSK with radius ratio 2.
std::vector<Ring> default_ring_spec();

// Points are spread uniformly in angle on each ring and globally scaled to unit
// average energy. Labels run ring by ring, innermost first, counter-clockwise.
Constellation make_constellation(const std::vector<Ring>& ring_spec);
inline Constellation default_constellation() { return make_constellation(default_ring_spec()); }

struct ChannelState {
  double psi = 0.0;      // common phase rotation, radians in [0, 2pi)
  double epsilon = 0.0;  // amplitude imbalance
  double delta = 0.0;    // phase imbalance, radians
};

struct ImbalanceConfig {
  double epsilon_scale = 0.15;
  double delta_scale = 15.0 * std::numbers::pi / 180.0;
  double beta_a = 5.0;
  double beta_b = 2.0;
  double snr_db = 5.0;  // +inf disables noise

  void validate() const;
};

struct ReceivedSample {
  Complex x;
  Label y = 0;
};

struct TaskDataset {
  std::vector<ReceivedSample> demos;
  std::vector<ReceivedSample> test;
  ChannelState state;
  std::uint64_t seed = 0;
};

ChannelState sample_channel_state(Rng& rng, const ImbalanceConfig& cfg);

// I/Q imbalance: diag(1+eps, 1-eps) * [[cos d, -sin d], [-sin d, cos d]] applied
// to (Re y, Im y).
Complex apply_iq_imbalance(Complex y, double epsilon, double delta);

// Noise variance (total, complex) for a given SNR in dB; 0 when snr_db is +inf.
double noise_variance(double snr_db);

ReceivedSample transmit(Label label, const Constellation& constellation, const ChannelState& state,
                        double snr_db, Rng& rng);

// One channel state shared by all demonstrations and test samples. Labels are
// drawn uniformly at random.
TaskDataset generate_task(Rng& rng, std::size_t n_shots, std::size_t n_test,
                          const Constellation& constellation, const ImbalanceConfig& cfg);

// Line-delimited JSON: one record per sample with re, im, label, split,
// task_id, seed and the channel state.
void write_task_jsonl(std::ostream& out, const TaskDataset& task, const std::string& task_id);

struct NamedTask {
  std::string task_id;
  TaskDataset task;
};
std::vector<NamedTask> read_tasks_jsonl(std::istream& in);

}  // namespace lmic
