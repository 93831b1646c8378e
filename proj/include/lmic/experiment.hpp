#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lmic/calibration.hpp"
#include "lmic/channel.hpp"
#include "lmic/llm_client.hpp"
#include "lmic/metrics.hpp"
#include "lmic/mlp.hpp"
#include "lmic/mock_backend.hpp"
#include "lmic/prompting.hpp"

namespace lmic {

enum class Method { vanilla, conc, linc, dnn4, dnn5, dnn6, dnn7, guessing };

std::string to_string(Method m);
Method method_from_string(std::string_view s);
const std::vector<Method>& all_methods();
bool is_llm_method(Method m);
std::optional<int> dnn_depth(Method m);
// Row label used in the accuracy tables ("Guessing", "DNN-4", "ConC", ...).
std::string method_title(Method m);

struct ExperimentConfig {
  std::vector<std::size_t> shots{4, 5, 6, 8, 16, 24, 32};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::uint64_t master_seed = 20240501;
  std::size_t n_test = 100;
  BackendConfig backend;
  MockConfig mock;
  std::vector<Method> methods = all_methods();
  std::vector<std::string> template_ids{"format1"};
  std::string templates_file;  // optional JSON template set replacing the registry
  std::vector<std::string> cf_texts = default_content_free_texts();
  ImbalanceConfig channel;
  std::vector<Ring> rings = default_ring_spec();
  QuantizationConfig quantization;
  LinCConfig linc;
  TrainConfig train;
  std::size_t ece_bins = 10;
  std::size_t entropy_bins = 10;
  std::size_t max_backend_calls = 200000;  // enforced for non-mock backends; 0 disables
  int workers = 0;                          // grid worker threads; 0 = OpenMP default
  std::size_t sweep_shots = 8;
  std::string output_dir = "results";

  // Throws std::invalid_argument on an invalid configuration.
  void validate(const std::vector<PromptTemplate>& templates) const;
};

nlohmann::json config_to_json(const ExperimentConfig& cfg);
// Fields absent from `j` keep their defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config_file(const std::filesystem::path& path);
// FNV-1a over the canonical (key-sorted) JSON of every field that can change
// results; output_dir and workers are excluded.
std::string config_hash(const ExperimentConfig& cfg);

std::vector<PromptTemplate> resolve_templates(const ExperimentConfig& cfg);

// Shared, read-only state for one experiment.
struct ExperimentContext {
  ExperimentConfig config;
  std::vector<PromptTemplate> templates;
  Constellation constellation;
  std::shared_ptr<const CompletionBackend> backend;  // null when no LLM method is requested
  std::string config_hash;
};

// Validates, builds the backend (failing fast on a missing API key) and checks
// the call budget.
ExperimentContext make_context(const ExperimentConfig& cfg);
ExperimentContext make_context(const ExperimentConfig& cfg, std::shared_ptr<const CompletionBackend> backend);

// Completion calls a run would issue.
std::size_t estimate_backend_calls(const ExperimentConfig& cfg);

struct CellId {
  Method method = Method::vanilla;
  std::size_t shots = 0;
  std::uint64_t seed = 0;
  std::string template_id;  // "-" for methods that do not use a prompt

  std::string key() const;
};

struct RunRecord {
  CellId cell;
  bool ok = true;
  std::string error;
  double accuracy = 0.0;
  double ece = 0.0;
  double mean_entropy = 0.0;
  std::size_t n_test = 0;
  std::string demo_hash;
  double wall_ms = 0.0;
  std::string config_hash;
  std::optional<CalibParams> calib;
  std::vector<LabelProbs> probs;
  std::vector<Label> predictions;
  std::vector<Label> labels;
};

// Seed of the task drawn for (shots, seed); every method of the cell shares it.
std::uint64_t task_seed(const ExperimentConfig& cfg, std::size_t shots, std::uint64_t seed);
TaskDataset make_cell_task(const ExperimentContext& ctx, std::size_t shots, std::uint64_t seed);
std::string hash_samples(std::span<const ReceivedSample> samples);

// All requested methods (and templates, for LLM methods) on the task of one
// (shots, seed) cell. Method failures become records with ok == false.
std::vector<RunRecord> run_cell_group(const ExperimentContext& ctx, std::size_t shots, std::uint64_t seed,
                                      const std::vector<Method>& methods,
                                      const std::vector<std::string>& template_ids);

RunRecord run_cell(const ExperimentContext& ctx, Method method, std::size_t shots, std::uint64_t seed,
                   const std::string& template_id);

// Recomputes accuracy, ECE and entropy from the stored per-sample data.
void compute_metrics(RunRecord& rec, std::size_t ece_bins);

struct Report {
  ExperimentConfig config;
  std::string config_hash;
  std::vector<RunRecord> records;
};

// Cells (shots x seeds) run on an OpenMP worker pool; records come back in
// cell order so the thread count never changes the output.
Report run_grid(const ExperimentContext& ctx);
Report run_grid_serial(const ExperimentContext& ctx);

struct AggregateRow {
  Method method = Method::vanilla;
  std::string template_id;
  std::size_t shots = 0;
  std::size_t n = 0;
  std::size_t failed = 0;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  double mean_ece = 0.0;
  double std_ece = 0.0;
  double mean_entropy = 0.0;
};

std::vector<AggregateRow> aggregate(const Report& report);

struct BoxStats {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
  double iqr = 0.0, mean = 0.0, variance = 0.0;
};
// Linear-interpolation quantiles; variance is the population variance.
BoxStats box_stats(std::vector<double> values);

struct TemplateSweep {
  Report report;
  // template x method mean accuracy over seeds
  struct Row {
    std::string template_id;
    Method method;
    double accuracy;
  };
  std::vector<Row> rows;
  std::vector<std::pair<Method, BoxStats>> summary;
};

// vanilla / ConC / LinC over every configured template (or the whole template
// set when fewer than two are configured) at `shots`.
TemplateSweep template_sweep(const ExperimentContext& ctx, std::size_t shots);

// Persistence. write_report emits records.jsonl, probs.jsonl (per-sample
// sidecar), config.json, cells.csv, accuracy_table.csv, accuracy_std.csv,
// ece_table.csv, entropy_hist.csv and summary.json into `dir`.
void write_report(const Report& report, const std::filesystem::path& dir);
void write_sweep(const TemplateSweep& sweep, const std::filesystem::path& dir);
// Rebuilds a report from records.jsonl + probs.jsonl, recomputing all metrics.
Report load_report(const std::filesystem::path& dir);

}  // namespace lmic
