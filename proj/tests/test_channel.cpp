#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "doctest.h"
#include "lmic/channel.hpp"

using namespace lmic;

namespace {

// Expanded scalar form of the imbalance matrix product.
Complex iq_scalar(Complex y, double eps, double delta) {
  const double a = y.real(), b = y.imag();
  return {(1.0 + eps) * (std::cos(delta) * a - std::sin(delta) * b),
          (1.0 - eps) * (-std::sin(delta) * a + std::cos(delta) * b)};
}

}  // namespace

TEST_CASE("single ring gives unit-modulus PSK") {
  const auto c = make_constellation({{8, 1.0, std::nullopt}});
  REQUIRE(c.k == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(std::abs(c.points[i]) == doctest::Approx(1.0).epsilon(1e-12));
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(i) / 8.0;
    CHECK(std::abs(c.points[i] - std::polar(1.0, angle)) < 1e-12);
  }
}

TEST_CASE("default 8-APSK has unit average energy and distinct points") {
  const auto c = default_constellation();
  REQUIRE(c.k == 8);
  double energy = 0.0;
  for (const auto& p : c.points) energy += std::norm(p);
  CHECK(std::fabs(energy / 8.0 - 1.0) < 1e-12);
  // (4*1 + 4*4)/8 = 2.5 before scaling
  const double s = 1.0 / std::sqrt(2.5);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::fabs(std::abs(c.points[i]) - s) < 1e-12);
  for (std::size_t i = 4; i < 8; ++i) CHECK(std::fabs(std::abs(c.points[i]) - 2.0 * s) < 1e-12);
  CHECK(std::fabs(std::arg(c.points[0]) - std::numbers::pi / 4.0) < 1e-12);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = i + 1; j < 8; ++j) CHECK(std::abs(c.points[i] - c.points[j]) > 1e-6);
}

TEST_CASE("constellation rejects bad ring specs") {
  CHECK_THROWS_AS(make_constellation({}), std::invalid_argument);
  CHECK_THROWS_AS(make_constellation({{4, 0.0, std::nullopt}}), std::invalid_argument);
  CHECK_THROWS_AS(make_constellation({{4, -1.0, std::nullopt}}), std::invalid_argument);
  CHECK_THROWS_AS(make_constellation({{4, 2.0, std::nullopt}, {4, 1.0, std::nullopt}}), std::invalid_argument);
  CHECK_THROWS_AS(make_constellation({{0, 1.0, std::nullopt}}), std::invalid_argument);
}

TEST_CASE("IQ imbalance analytic cases") {
  CHECK(std::abs(apply_iq_imbalance({0.3, -0.7}, 0.0, 0.0) - Complex(0.3, -0.7)) < 1e-12);
  CHECK(std::abs(apply_iq_imbalance({1.0, 0.0}, 0.1, 0.0) - Complex(1.1, 0.0)) < 1e-12);
  CHECK(std::abs(apply_iq_imbalance({1.0, 0.0}, 0.0, std::numbers::pi / 2) - Complex(0.0, -1.0)) < 1e-12);
}

TEST_CASE("IQ imbalance is linear and matches the scalar form") {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const Complex y1{rng.uniform(-3, 3), rng.uniform(-3, 3)}, y2{rng.uniform(-3, 3), rng.uniform(-3, 3)};
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    const double eps = rng.uniform(0, 0.15), delta = rng.uniform(0, 0.3);
    const auto lhs = apply_iq_imbalance(a * y1 + b * y2, eps, delta);
    const auto rhs = a * apply_iq_imbalance(y1, eps, delta) + b * apply_iq_imbalance(y2, eps, delta);
    CHECK(std::abs(lhs - rhs) < 1e-12);
    CHECK(std::abs(apply_iq_imbalance(y1, eps, delta) - iq_scalar(y1, eps, delta)) < 1e-12);
    const double psi = rng.uniform(0, 2 * std::numbers::pi);
    CHECK(std::fabs(std::abs(std::polar(1.0, psi) * y1) - std::abs(y1)) < 1e-12);
  }
}

TEST_CASE("channel state sampling") {
  Rng rng(3);
  ImbalanceConfig cfg;
  cfg.epsilon_scale = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto s = sample_channel_state(rng, cfg);
    CHECK(s.epsilon == 0.0);
    CHECK(s.psi >= 0.0);
    CHECK(s.psi < 2 * std::numbers::pi);
    CHECK(s.delta >= 0.0);
    CHECK(s.delta <= cfg.delta_scale);
  }
}

TEST_CASE("noiseless transmit returns the constellation point") {
  const auto c = default_constellation();
  Rng rng(1);
  for (Label l = 0; l < 8; ++l) {
    const auto s = transmit(l, c, ChannelState{}, std::numeric_limits<double>::infinity(), rng);
    CHECK(s.y == l);
    CHECK(s.x == c.points[l]);
  }
  CHECK_THROWS_AS(transmit(8, c, ChannelState{}, 5.0, rng), std::out_of_range);
  CHECK(noise_variance(std::numeric_limits<double>::infinity()) == 0.0);
  CHECK(noise_variance(0.0) == doctest::Approx(1.0));
}

TEST_CASE("transmit is deterministic for a fixed seed") {
  const auto c = default_constellation();
  Rng a(42), b(42);
  ChannelState st{0.4, 0.1, 0.2};
  for (Label l = 0; l < 8; ++l) CHECK(transmit(l, c, st, 5.0, a).x == transmit(l, c, st, 5.0, b).x);
}

TEST_CASE("generate_task shapes and shared state") {
  const auto c = default_constellation();
  Rng rng(5);
  const auto t = generate_task(rng, 32, 100, c, ImbalanceConfig{});
  CHECK(t.demos.size() == 32);
  CHECK(t.test.size() == 100);
  Rng rng4(5);
  CHECK(generate_task(rng4, 4, 100, c, ImbalanceConfig{}).demos.size() == 4);

  Rng r1(100), r2(101);
  const auto t1 = generate_task(r1, 4, 10, c, ImbalanceConfig{});
  const auto t2 = generate_task(r2, 4, 10, c, ImbalanceConfig{});
  CHECK(t1.state.psi != t2.state.psi);
}

TEST_CASE("label histogram is uniform") {
  const auto c = default_constellation();
  Rng rng(9);
  const std::size_t n = 100000;
  const auto t = generate_task(rng, n, 1, c, ImbalanceConfig{});
  std::vector<std::size_t> counts(8, 0);
  for (const auto& s : t.demos) ++counts[s.y];
  const double mean = n / 8.0, sigma = std::sqrt(n * (1.0 / 8) * (7.0 / 8));
  for (auto cnt : counts) CHECK(std::fabs(static_cast<double>(cnt) - mean) < 3 * sigma);
}

TEST_CASE("task JSONL round trip") {
  const auto c = default_constellation();
  Rng rng(77);
  const auto t = generate_task(rng, 5, 7, c, ImbalanceConfig{});
  std::stringstream ss;
  write_task_jsonl(ss, t, "task_a");
  const auto back = read_tasks_jsonl(ss);
  REQUIRE(back.size() == 1);
  CHECK(back[0].task_id == "task_a");
  REQUIRE(back[0].task.demos.size() == 5);
  REQUIRE(back[0].task.test.size() == 7);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(back[0].task.demos[i].x == t.demos[i].x);
    CHECK(back[0].task.demos[i].y == t.demos[i].y);
  }
  CHECK(back[0].task.state.psi == t.state.psi);
}

TEST_CASE("beta and gamma sample moments") {
  Rng rng(123);
  const int n = 200000;
  double s = 0.0, ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.beta(5, 2);
    s += x;
    ss += x * x;
  }
  const double mean = s / n, var = ss / n - mean * mean;
  CHECK(mean == doctest::Approx(5.0 / 7.0).epsilon(0.005));
  CHECK(var == doctest::Approx(10.0 / (49.0 * 8.0)).epsilon(0.02));
  for (int i = 0; i < 1000; ++i) CHECK(rng.index(3) < 3);
}
