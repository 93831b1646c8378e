// lmic: command-line front end for the demodulation experiments.
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "lmic/experiment.hpp"

using namespace lmic;

namespace {

struct CommonOptions {
  std::string config_path;
  std::string backend;
  std::string model;
  std::vector<std::size_t> shots;
  std::optional<std::size_t> seeds;
  std::optional<std::uint64_t> master_seed;
  std::vector<std::string> methods;
  std::vector<std::string> templates;
  std::optional<std::size_t> n_test;
  std::string output;
  std::optional<std::size_t> max_calls;
  std::string api_key_env;
  std::string replay_log;
  std::optional<int> workers;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--backend", o.backend, "\"mock\", an OpenAI-compatible base URL, or replay:<log.jsonl>");
  cmd->add_option("--model", o.model, "model name sent to the backend");
  cmd->add_option("--shots", o.shots, "shot counts")->delimiter(',');
  cmd->add_option("--seeds", o.seeds, "number of seeds (runs seeds 0..N-1)");
  cmd->add_option("--seed", o.master_seed, "master seed");
  cmd->add_option("--methods", o.methods, "vanilla,conc,linc,dnn4,dnn5,dnn6,dnn7,guessing")->delimiter(',');
  cmd->add_option("--templates", o.templates, "template ids")->delimiter(',');
  cmd->add_option("--n-test", o.n_test, "test points per cell");
  cmd->add_option("--output", o.output, "output directory");
  cmd->add_option("--max-calls", o.max_calls, "cap on backend calls for remote backends (0 disables)");
  cmd->add_option("--api-key-env", o.api_key_env, "environment variable holding the API key");
  cmd->add_option("--replay-log", o.replay_log, "append every backend request/response to this JSONL file");
  cmd->add_option("--workers", o.workers, "grid worker threads (0 = OpenMP default)");
}

ExperimentConfig resolve_config(const CommonOptions& o) {
  ExperimentConfig cfg = o.config_path.empty() ? ExperimentConfig{} : load_config_file(o.config_path);
  if (!o.backend.empty()) {
    cfg.backend.base_url = o.backend;
    if (o.backend != "mock" && o.model.empty() && cfg.backend.model == "mock")
      throw std::invalid_argument("--model is required with a non-mock backend");
  }
  if (!o.model.empty()) cfg.backend.model = o.model;
  if (!o.shots.empty()) cfg.shots = o.shots;
  if (o.seeds) {
    cfg.seeds.clear();
    for (std::uint64_t s = 0; s < *o.seeds; ++s) cfg.seeds.push_back(s);
  }
  if (o.master_seed) cfg.master_seed = *o.master_seed;
  if (!o.methods.empty()) {
    cfg.methods.clear();
    for (const auto& m : o.methods) cfg.methods.push_back(method_from_string(m));
  }
  if (!o.templates.empty()) cfg.template_ids = o.templates;
  if (o.n_test) cfg.n_test = *o.n_test;
  if (!o.output.empty()) cfg.output_dir = o.output;
  if (o.max_calls) cfg.max_backend_calls = *o.max_calls;
  if (!o.api_key_env.empty()) cfg.backend.api_key_env = o.api_key_env;
  if (!o.replay_log.empty()) cfg.backend.replay_log = o.replay_log;
  if (o.workers) cfg.workers = *o.workers;
  return cfg;
}

void print_failures(const Report& report) {
  std::size_t failed = 0;
  for (const auto& r : report.records)
    if (!r.ok) {
      if (failed < 10) std::cerr << "warning: " << r.error << '\n';
      ++failed;
    }
  if (failed > 10) std::cerr << "warning: " << failed - 10 << " more failed cells\n";
}

void print_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::cout << in.rdbuf();
}

int cmd_generate(const CommonOptions& o) {
  auto cfg = resolve_config(o);
  cfg.validate(resolve_templates(cfg));
  const auto constellation = make_constellation(cfg.rings);
  std::filesystem::create_directories(cfg.output_dir);
  const auto path = std::filesystem::path(cfg.output_dir) / "tasks.jsonl";
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  std::size_t n = 0;
  for (auto shots : cfg.shots)
    for (auto seed : cfg.seeds) {
      Rng rng(task_seed(cfg, shots, seed));
      const auto task = generate_task(rng, shots, cfg.n_test, constellation, cfg.channel);
      write_task_jsonl(out, task, "shots" + std::to_string(shots) + "_seed" + std::to_string(seed));
      ++n;
    }
  std::cout << "wrote " << n << " tasks to " << path.string() << '\n';
  return 0;
}

int cmd_run(const CommonOptions& o, bool dry_run) {
  const auto cfg = resolve_config(o);
  if (dry_run) {
    cfg.validate(resolve_templates(cfg));
    std::cout << "cells: " << cfg.shots.size() * cfg.seeds.size() << " (shots x seeds)\n"
              << "estimated backend calls: " << estimate_backend_calls(cfg) << '\n'
              << "config hash: " << config_hash(cfg) << '\n';
    return 0;
  }
  const auto ctx = make_context(cfg);
  const auto report = run_grid(ctx);
  write_report(report, cfg.output_dir);
  print_failures(report);
  print_table(std::filesystem::path(cfg.output_dir) / "accuracy_table.csv");
  std::cout << "results in " << cfg.output_dir << '\n';
  return 0;
}

int cmd_sweep(const CommonOptions& o, std::optional<std::size_t> shots, bool dry_run) {
  auto cfg = resolve_config(o);
  const std::size_t sweep_shots = shots.value_or(cfg.sweep_shots);
  if (dry_run) {
    auto probe = cfg;
    probe.shots = {sweep_shots};
    probe.methods = {Method::vanilla, Method::conc, Method::linc};
    if (probe.template_ids.size() < 2) {
      probe.template_ids.clear();
      for (const auto& t : resolve_templates(cfg)) probe.template_ids.push_back(t.id);
    }
    std::cout << "estimated backend calls: " << estimate_backend_calls(probe) << '\n';
    return 0;
  }
  cfg.methods = {Method::vanilla, Method::conc, Method::linc};
  const auto ctx = make_context(cfg);
  const auto sweep = template_sweep(ctx, sweep_shots);
  write_sweep(sweep, cfg.output_dir);
  print_failures(sweep.report);
  print_table(std::filesystem::path(cfg.output_dir) / "sweep_box.csv");
  return 0;
}

MockServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

int cmd_serve(const std::string& bind, const std::string& config_path) {
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw std::invalid_argument("--bind expects host:port");
  const std::string host = bind.substr(0, colon);
  const int port = std::stoi(bind.substr(colon + 1));
  ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config_file(config_path);
  cfg.mock.validate();
  MockServer server(cfg.mock, resolve_templates(cfg));
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cerr << "mock completions server on http://" << host << ':' << port << "/v1\n";
  server.run(host, port);
  g_server = nullptr;
  return 0;
}

int cmd_report(const std::string& dir) {
  const auto report = load_report(dir);
  write_report(report, dir);
  print_table(std::filesystem::path(dir) / "accuracy_table.csv");
  return 0;
}

int cmd_templates(const std::string& out_path) {
  const auto json = templates_to_json(template_registry());
  if (out_path.empty()) {
    std::cout << json << '\n';
    return 0;
  }
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write '" + out_path + "'");
  out << json << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"In-context learning demodulation experiments"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  CommonOptions gen_opts, run_opts, sweep_opts;
  bool run_dry = false, sweep_dry = false;
  std::optional<std::size_t> sweep_shots;
  std::string bind = "127.0.0.1:8080", serve_config, report_dir, templates_out;

  auto* gen = app.add_subcommand("generate", "write the (shots, seed) datasets as JSONL");
  add_common(gen, gen_opts);
  auto* run = app.add_subcommand("run", "run the method x shots x seeds grid");
  add_common(run, run_opts);
  run->add_flag("--dry-run", run_dry, "validate and print the call estimate without running");
  auto* sweep = app.add_subcommand("sweep-templates", "vanilla/ConC/LinC across prompt templates");
  add_common(sweep, sweep_opts);
  sweep->add_option("--sweep-shots", sweep_shots, "shot count for the sweep (default 8)");
  sweep->add_flag("--dry-run", sweep_dry, "print the call estimate without running");
  auto* serve = app.add_subcommand("serve-mock", "serve the mock backend over HTTP");
  serve->add_option("--bind", bind, "host:port");
  serve->add_option("--config", serve_config, "JSON config file (mock section)")->check(CLI::ExistingFile);
  auto* rep = app.add_subcommand("report", "recompute tables from stored records");
  rep->add_option("dir", report_dir, "results directory")->required();
  auto* tpl = app.add_subcommand("templates", "export the prompt template registry as JSON");
  tpl->add_option("--output", templates_out, "output file (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_generate(gen_opts);
    if (*run) return cmd_run(run_opts, run_dry);
    if (*sweep) return cmd_sweep(sweep_opts, sweep_shots, sweep_dry);
    if (*serve) return cmd_serve(bind, serve_config);
    if (*rep) return cmd_report(report_dir);
    if (*tpl) return cmd_templates(templates_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
