#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>

#include "doctest.h"
#include "lmic/experiment.hpp"

using namespace lmic;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.shots = {4, 8};
  cfg.seeds = {0, 1};
  cfg.n_test = 30;
  cfg.train.epochs = 20;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("lmic_test_" + name);
  fs::remove_all(dir);
  return dir;
}

bool same_record(const RunRecord& a, const RunRecord& b) {
  if (a.cell.key() != b.cell.key() || a.ok != b.ok || a.error != b.error) return false;
  if (a.accuracy != b.accuracy || a.ece != b.ece || a.mean_entropy != b.mean_entropy) return false;
  if (a.demo_hash != b.demo_hash || a.predictions != b.predictions || a.labels != b.labels) return false;
  if (a.probs.size() != b.probs.size()) return false;
  for (std::size_t i = 0; i < a.probs.size(); ++i)
    if (a.probs[i].probs != b.probs[i].probs) return false;
  return true;
}

// Records every prompt it sees, then answers through the mock.
class SpyBackend final : public CompletionBackend {
 public:
  std::string id() const override { return "spy"; }
  TokenLogprobs complete(const std::string& prompt) const override {
    {
      std::lock_guard lock(mu_);
      prompts_.push_back(prompt);
    }
    return mock_.complete(prompt);
  }
  std::vector<std::string> prompts() const {
    std::lock_guard lock(mu_);
    return prompts_;
  }

 private:
  MockBackend mock_;
  mutable std::mutex mu_;
  mutable std::vector<std::string> prompts_;
};

// Fails on content-free prompts only.
class FlakyBackend final : public CompletionBackend {
 public:
  std::string id() const override { return "flaky"; }
  TokenLogprobs complete(const std::string& prompt) const override {
    if (prompt.find("N/A") != std::string::npos) throw BackendError("simulated outage");
    return mock_.complete(prompt);
  }

 private:
  MockBackend mock_;
};

}  // namespace

TEST_CASE("method names") {
  for (Method m : all_methods()) CHECK(method_from_string(to_string(m)) == m);
  CHECK(method_title(Method::vanilla) == "Vanilla ICL");
  CHECK(method_title(Method::dnn6) == "DNN-6");
  CHECK(dnn_depth(Method::dnn5) == 5);
  CHECK_FALSE(dnn_depth(Method::conc).has_value());
  CHECK_THROWS_AS(method_from_string("svm"), std::invalid_argument);
}

TEST_CASE("config JSON round trip and hash") {
  ExperimentConfig cfg = small_config();
  cfg.channel.snr_db = std::numeric_limits<double>::infinity();
  cfg.linc.init = LincInit::zero_a_zero_b;
  const auto j = config_to_json(cfg);
  const auto back = config_from_json(j);
  CHECK(config_to_json(back) == j);
  CHECK(config_hash(back) == config_hash(cfg));

  // Field order in the file does not matter.
  const std::string a = R"({"shots":[8,16],"n_test":50,"seeds":[0,1,2]})";
  const std::string b = R"({"seeds":[0,1,2],"n_test":50,"shots":[8,16]})";
  CHECK(config_hash(config_from_json(nlohmann::json::parse(a))) ==
        config_hash(config_from_json(nlohmann::json::parse(b))));

  auto moved = cfg;
  moved.output_dir = "elsewhere";
  moved.workers = 3;
  CHECK(config_hash(moved) == config_hash(cfg));
  moved.n_test = 31;
  CHECK(config_hash(moved) != config_hash(cfg));

  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"shotz":[4]})")), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"shots":"four"})")), std::invalid_argument);
}

TEST_CASE("config validation") {
  const auto& reg = template_registry();
  auto cfg = small_config();
  CHECK_NOTHROW(cfg.validate(reg));
  cfg.shots.clear();
  CHECK_THROWS_AS(cfg.validate(reg), std::invalid_argument);
  cfg = small_config();
  cfg.seeds.clear();
  CHECK_THROWS_AS(cfg.validate(reg), std::invalid_argument);
  cfg = small_config();
  cfg.template_ids = {"format9"};
  CHECK_THROWS(cfg.validate(reg));
  cfg = small_config();
  cfg.rings = {{4, 1.0, std::nullopt}};
  CHECK_THROWS_AS(cfg.validate(reg), std::invalid_argument);
}

TEST_CASE("guessing is at chance") {
  auto cfg = small_config();
  cfg.n_test = 10000;
  cfg.methods = {Method::guessing};
  const auto ctx = make_context(cfg);
  const auto r = run_cell(ctx, Method::guessing, 8, 0, "-");
  REQUIRE(r.ok);
  CHECK(std::fabs(r.accuracy - 0.125) < 3 * std::sqrt(0.125 * 0.875 / 10000.0));
  CHECK(r.mean_entropy == 3.0);
}

TEST_CASE("all methods in a cell share the task") {
  auto cfg = small_config();
  auto spy = std::make_shared<SpyBackend>();
  const auto ctx = make_context(cfg, spy);
  const auto records = run_cell_group(ctx, 8, 1, cfg.methods, cfg.template_ids);
  REQUIRE(records.size() == all_methods().size());
  for (const auto& r : records) {
    CHECK(r.ok);
    CHECK(r.demo_hash == records.front().demo_hash);
    CHECK(r.labels == records.front().labels);
  }
  // Test and content-free prompts carry byte-identical demonstration prefixes.
  const auto task = make_cell_task(ctx, 8, 1);
  CHECK(hash_samples(task.demos) == records.front().demo_hash);
  const auto prefix = content_free_prompt(find_template(ctx.templates, "format1"), task.demos, "",
                                          cfg.quantization)
                          .text;
  const auto cut = prefix.rfind('\n') + 1;
  std::size_t full_context = 0;
  for (const auto& p : spy->prompts())
    if (p.compare(0, cut, prefix, 0, cut) == 0) ++full_context;
  CHECK(full_context == cfg.n_test + cfg.cf_texts.size());
  // vanilla and ConC were scored from one set of test queries
  CHECK(spy->prompts().size() == cfg.n_test + cfg.cf_texts.size() + 8);
}

TEST_CASE("cells are reproducible") {
  const auto ctx = make_context(small_config());
  const auto a = run_cell_group(ctx, 4, 0, ctx.config.methods, ctx.config.template_ids);
  const auto b = run_cell_group(ctx, 4, 0, ctx.config.methods, ctx.config.template_ids);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(same_record(a[i], b[i]));
}

TEST_CASE("failures are recorded per cell") {
  auto cfg = small_config();
  cfg.shots = {1, 4};
  cfg.seeds = {0};
  const auto ctx = make_context(cfg, std::make_shared<FlakyBackend>());
  const auto report = run_grid(ctx);
  std::size_t failed = 0;
  for (const auto& r : report.records) {
    if (r.cell.method == Method::conc) {
      CHECK_FALSE(r.ok);
      CHECK(r.error.find("method=conc") != std::string::npos);
      CHECK(r.error.find("simulated outage") != std::string::npos);
    }
    if (r.cell.method == Method::linc && r.cell.shots == 1) CHECK_FALSE(r.ok);
    if (r.cell.method == Method::vanilla || r.cell.method == Method::guessing) CHECK(r.ok);
    failed += r.ok ? 0 : 1;
  }
  CHECK(failed == 3);
  const auto dir = scratch_dir("failures");
  CHECK_NOTHROW(write_report(report, dir));
  fs::remove_all(dir);
}

TEST_CASE("parallel grid equals the serial grid") {
  auto cfg = small_config();
  cfg.workers = 4;
  const auto ctx = make_context(cfg);
  const auto par = run_grid(ctx), ser = run_grid_serial(ctx);
  REQUIRE(par.records.size() == ser.records.size());
  REQUIRE(par.records.size() == 2 * 2 * all_methods().size());
  for (std::size_t i = 0; i < par.records.size(); ++i) CHECK(same_record(par.records[i], ser.records[i]));
}

TEST_CASE("aggregates and report files") {
  const auto ctx = make_context(small_config());
  const auto report = run_grid(ctx);
  const auto rows = aggregate(report);
  CHECK(rows.size() == 2 * all_methods().size());
  for (const auto& row : rows) {
    std::vector<double> acc;
    for (const auto& r : report.records)
      if (r.cell.method == row.method && r.cell.shots == row.shots) acc.push_back(r.accuracy);
    REQUIRE(acc.size() == 2);
    CHECK(row.mean_accuracy == (acc[0] + acc[1]) / 2);
    CHECK(std::fabs(row.std_accuracy - std::fabs(acc[0] - acc[1]) / std::sqrt(2.0)) < 1e-15);
  }

  const auto dir = scratch_dir("report");
  write_report(report, dir);
  std::istringstream table(slurp(dir / "accuracy_table.csv"));
  std::string line;
  std::getline(table, line);
  CHECK(line == "method,4,8");
  std::size_t n_rows = 0;
  while (std::getline(table, line)) ++n_rows;
  CHECK(n_rows == all_methods().size());
  CHECK(slurp(dir / "ece_table.csv").rfind("template_id,shots,Vanilla ICL,ConC,LinC\n", 0) == 0);

  // Re-aggregating from stored records is bit-exact and idempotent.
  const auto loaded = load_report(dir);
  REQUIRE(loaded.records.size() == report.records.size());
  for (std::size_t i = 0; i < loaded.records.size(); ++i) CHECK(same_record(loaded.records[i], report.records[i]));
  const auto dir2 = scratch_dir("report2");
  write_report(loaded, dir2);
  for (const char* f : {"accuracy_table.csv", "accuracy_std.csv", "ece_table.csv", "entropy_hist.csv", "cells.csv",
                        "records.jsonl", "probs.jsonl", "summary.json", "config.json"})
    CHECK_MESSAGE(slurp(dir / f) == slurp(dir2 / f), f);
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("box statistics") {
  const auto b = box_stats({4, 1, 3, 2});
  CHECK(b.min == 1);
  CHECK(b.max == 4);
  CHECK(b.q1 == 1.75);
  CHECK(b.median == 2.5);
  CHECK(b.q3 == 3.25);
  CHECK(b.iqr == 1.5);
  CHECK(b.mean == 2.5);
  CHECK(b.variance == 1.25);
  CHECK(box_stats({7}).median == 7);
  CHECK_THROWS_AS(box_stats({}), std::invalid_argument);
}

TEST_CASE("template sweep") {
  auto cfg = small_config();
  cfg.seeds = {0};
  cfg.n_test = 20;
  const auto ctx = make_context(cfg);
  const auto sweep = template_sweep(ctx, 8);
  CHECK(sweep.rows.size() == 10 * 3);
  REQUIRE(sweep.summary.size() == 3);
  for (const auto& [m, b] : sweep.summary) {
    CHECK(is_llm_method(m));
    CHECK(b.min <= b.q1);
    CHECK(b.q1 <= b.median);
    CHECK(b.median <= b.q3);
    CHECK(b.q3 <= b.max);
    CHECK(b.variance >= 0);
  }
  const auto dir = scratch_dir("sweep");
  write_sweep(sweep, dir);
  CHECK(fs::exists(dir / "sweep_box.csv"));
  CHECK(fs::exists(dir / "sweep_templates.csv"));
  fs::remove_all(dir);
}

TEST_CASE("remote backends fail fast") {
  auto cfg = small_config();
  cfg.backend.base_url = "http://127.0.0.1:9/v1";
  cfg.backend.api_key_env = "LMIC_TEST_SURELY_UNSET_KEY";
  ::unsetenv("LMIC_TEST_SURELY_UNSET_KEY");
  CHECK_THROWS_WITH_AS(make_context(cfg), doctest::Contains("LMIC_TEST_SURELY_UNSET_KEY"), std::runtime_error);

  ::setenv("LMIC_TEST_KEY", "k", 1);
  cfg.backend.api_key_env = "LMIC_TEST_KEY";
  cfg.max_backend_calls = 10;
  CHECK_THROWS_WITH_AS(make_context(cfg), doctest::Contains("max_backend_calls"), std::invalid_argument);

  cfg.methods = {Method::guessing, Method::dnn4};
  CHECK(estimate_backend_calls(cfg) == 0);
  CHECK_NOTHROW(make_context(cfg));
}

TEST_CASE("call estimate matches the calls issued") {
  auto cfg = small_config();
  auto spy = std::make_shared<SpyBackend>();
  const auto ctx = make_context(cfg, spy);
  run_grid_serial(ctx);
  CHECK(spy->prompts().size() == estimate_backend_calls(cfg));
}
