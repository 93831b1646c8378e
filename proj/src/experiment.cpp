#include "lmic/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

#include <omp.h>

namespace lmic {

namespace {

using json = nlohmann::json;

const std::vector<std::pair<Method, std::string>>& method_names() {
  static const std::vector<std::pair<Method, std::string>> names{
      {Method::vanilla, "vanilla"}, {Method::conc, "conc"}, {Method::linc, "linc"},
      {Method::dnn4, "dnn4"},       {Method::dnn5, "dnn5"}, {Method::dnn6, "dnn6"},
      {Method::dnn7, "dnn7"},       {Method::guessing, "guessing"}};
  return names;
}

json snr_to_json(double snr_db) {
  if (std::isinf(snr_db)) return snr_db > 0 ? json("inf") : json("-inf");
  return snr_db;
}

double snr_from_json(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    throw std::invalid_argument("channel.snr_db: expected a number or \"inf\"");
  }
  return j.get<double>();
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

LabelProbs uniform_probs(std::size_t k, const std::string& source) {
  LabelProbs p;
  p.probs.assign(k, 1.0 / static_cast<double>(k));
  p.source = source;
  return p;
}

RunRecord failed_record(CellId cell, const std::string& what) {
  RunRecord r;
  r.ok = false;
  r.error = "cell method=" + to_string(cell.method) + " shots=" + std::to_string(cell.shots) +
            " seed=" + std::to_string(cell.seed) + " template=" + cell.template_id + ": " + what;
  r.cell = std::move(cell);
  return r;
}

}  // namespace

std::string to_string(Method m) {
  for (const auto& [method, name] : method_names())
    if (method == m) return name;
  return "?";
}

Method method_from_string(std::string_view s) {
  for (const auto& [method, name] : method_names())
    if (name == s) return method;
  throw std::invalid_argument("unknown method '" + std::string(s) + "'");
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> all{Method::guessing, Method::dnn4, Method::dnn5, Method::dnn6,
                                       Method::dnn7,     Method::vanilla, Method::conc, Method::linc};
  return all;
}

bool is_llm_method(Method m) { return m == Method::vanilla || m == Method::conc || m == Method::linc; }

std::optional<int> dnn_depth(Method m) {
  switch (m) {
    case Method::dnn4: return 4;
    case Method::dnn5: return 5;
    case Method::dnn6: return 6;
    case Method::dnn7: return 7;
    default: return std::nullopt;
  }
}

std::string method_title(Method m) {
  switch (m) {
    case Method::vanilla: return "Vanilla ICL";
    case Method::conc: return "ConC";
    case Method::linc: return "LinC";
    case Method::guessing: return "Guessing";
    default: return "DNN-" + std::to_string(*dnn_depth(m));
  }
}

void ExperimentConfig::validate(const std::vector<PromptTemplate>& templates) const {
  if (shots.empty()) throw std::invalid_argument("config: shots must be non-empty");
  if (seeds.empty()) throw std::invalid_argument("config: seeds must be non-empty");
  if (methods.empty()) throw std::invalid_argument("config: methods must be non-empty");
  if (n_test < 1) throw std::invalid_argument("config: n_test must be >= 1");
  for (auto s : shots)
    if (s < 1) throw std::invalid_argument("config: shot counts must be >= 1");
  if (std::set<std::size_t>(shots.begin(), shots.end()).size() != shots.size())
    throw std::invalid_argument("config: duplicate shot counts");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw std::invalid_argument("config: duplicate seeds");
  if (template_ids.empty()) throw std::invalid_argument("config: template_ids must be non-empty");
  for (const auto& id : template_ids) find_template(templates, id);
  if (cf_texts.empty()) throw std::invalid_argument("config: cf_texts must be non-empty");
  if (ece_bins < 1 || entropy_bins < 1) throw std::invalid_argument("config: bin counts must be >= 1");
  const auto k = make_constellation(rings).k;
  for (const auto& t : templates)
    if (t.k() != k)
      throw std::invalid_argument("config: template '" + t.id + "' has " + std::to_string(t.k()) +
                                  " labels but the constellation has " + std::to_string(k));
  channel.validate();
  quantization.validate();
  linc.validate();
  train.validate();
  backend.validate();
  mock.validate();
}

json config_to_json(const ExperimentConfig& c) {
  json rings = json::array();
  for (const auto& r : c.rings) {
    json jr = {{"size", r.size}, {"radius", r.radius}};
    if (r.phase) jr["phase"] = *r.phase;
    rings.push_back(jr);
  }
  std::vector<std::string> methods;
  for (auto m : c.methods) methods.push_back(to_string(m));
  return {
      {"shots", c.shots},
      {"seeds", c.seeds},
      {"master_seed", c.master_seed},
      {"n_test", c.n_test},
      {"backend",
       {{"base_url", c.backend.base_url},
        {"api_key_env", c.backend.api_key_env},
        {"model", c.backend.model},
        {"top_logprobs", c.backend.top_logprobs},
        {"timeout_s", c.backend.timeout_s},
        {"max_parallel", c.backend.max_parallel},
        {"retries", c.backend.retries},
        {"retry_backoff_ms", c.backend.retry_backoff_ms},
        {"replay_log", c.backend.replay_log}}},
      {"mock",
       {{"temperature", c.mock.temperature},
        {"unit_scale", c.mock.unit_scale},
        {"missing_penalty", c.mock.missing_penalty},
        {"template_bias", c.mock.template_bias},
        {"model", c.mock.model}}},
      {"methods", methods},
      {"template_ids", c.template_ids},
      {"templates_file", c.templates_file},
      {"cf_texts", c.cf_texts},
      {"channel",
       {{"epsilon_scale", c.channel.epsilon_scale},
        {"delta_scale", c.channel.delta_scale},
        {"beta_a", c.channel.beta_a},
        {"beta_b", c.channel.beta_b},
        {"snr_db", snr_to_json(c.channel.snr_db)}}},
      {"constellation", {{"rings", rings}}},
      {"quantization", {{"scale", c.quantization.scale}, {"decimals", c.quantization.decimals}}},
      {"linc",
       {{"learning_rate", c.linc.learning_rate},
        {"epochs", c.linc.epochs},
        {"init", c.linc.init == LincInit::identity_a_zero_b ? "identity" : "zero"}}},
      {"train",
       {{"learning_rate", c.train.learning_rate},
        {"epochs", c.train.epochs},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"adam_eps", c.train.adam_eps}}},
      {"ece_bins", c.ece_bins},
      {"entropy_bins", c.entropy_bins},
      {"max_backend_calls", c.max_backend_calls},
      {"workers", c.workers},
      {"sweep_shots", c.sweep_shots},
      {"output_dir", c.output_dir},
  };
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
  static const std::set<std::string> known{
      "shots",   "seeds", "master_seed", "n_test",    "backend",   "mock",          "methods",
      "template_ids", "templates_file", "cf_texts", "channel", "constellation", "quantization", "linc",
      "train",   "ece_bins", "entropy_bins", "max_backend_calls", "workers", "sweep_shots", "output_dir"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw std::invalid_argument("config: unknown field '" + key + "'");
  try {
    read_opt(j, "shots", c.shots);
    read_opt(j, "seeds", c.seeds);
    read_opt(j, "master_seed", c.master_seed);
    read_opt(j, "n_test", c.n_test);
    if (j.contains("backend")) {
      const auto& b = j.at("backend");
      read_opt(b, "base_url", c.backend.base_url);
      read_opt(b, "api_key_env", c.backend.api_key_env);
      read_opt(b, "model", c.backend.model);
      read_opt(b, "top_logprobs", c.backend.top_logprobs);
      read_opt(b, "timeout_s", c.backend.timeout_s);
      read_opt(b, "max_parallel", c.backend.max_parallel);
      read_opt(b, "retries", c.backend.retries);
      read_opt(b, "retry_backoff_ms", c.backend.retry_backoff_ms);
      read_opt(b, "replay_log", c.backend.replay_log);
    }
    if (j.contains("mock")) {
      const auto& m = j.at("mock");
      read_opt(m, "temperature", c.mock.temperature);
      read_opt(m, "unit_scale", c.mock.unit_scale);
      read_opt(m, "missing_penalty", c.mock.missing_penalty);
      read_opt(m, "template_bias", c.mock.template_bias);
      read_opt(m, "model", c.mock.model);
    }
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& m : j.at("methods")) c.methods.push_back(method_from_string(m.get<std::string>()));
    }
    read_opt(j, "template_ids", c.template_ids);
    read_opt(j, "templates_file", c.templates_file);
    read_opt(j, "cf_texts", c.cf_texts);
    if (j.contains("channel")) {
      const auto& ch = j.at("channel");
      read_opt(ch, "epsilon_scale", c.channel.epsilon_scale);
      read_opt(ch, "delta_scale", c.channel.delta_scale);
      if (ch.contains("delta_scale_deg"))
        c.channel.delta_scale = ch.at("delta_scale_deg").get<double>() * std::numbers::pi / 180.0;
      read_opt(ch, "beta_a", c.channel.beta_a);
      read_opt(ch, "beta_b", c.channel.beta_b);
      if (ch.contains("snr_db")) c.channel.snr_db = snr_from_json(ch.at("snr_db"));
    }
    if (j.contains("constellation")) {
      c.rings.clear();
      for (const auto& r : j.at("constellation").at("rings")) {
        Ring ring{r.at("size").get<std::size_t>(), r.at("radius").get<double>(), std::nullopt};
        if (r.contains("phase")) ring.phase = r.at("phase").get<double>();
        c.rings.push_back(ring);
      }
    }
    if (j.contains("quantization")) {
      read_opt(j.at("quantization"), "scale", c.quantization.scale);
      read_opt(j.at("quantization"), "decimals", c.quantization.decimals);
    }
    if (j.contains("linc")) {
      const auto& l = j.at("linc");
      read_opt(l, "learning_rate", c.linc.learning_rate);
      read_opt(l, "epochs", c.linc.epochs);
      if (l.contains("init")) {
        const auto init = l.at("init").get<std::string>();
        if (init == "identity")
          c.linc.init = LincInit::identity_a_zero_b;
        else if (init == "zero")
          c.linc.init = LincInit::zero_a_zero_b;
        else
          throw std::invalid_argument("config: linc.init must be \"identity\" or \"zero\"");
      }
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      read_opt(t, "learning_rate", c.train.learning_rate);
      read_opt(t, "epochs", c.train.epochs);
      read_opt(t, "beta1", c.train.beta1);
      read_opt(t, "beta2", c.train.beta2);
      read_opt(t, "adam_eps", c.train.adam_eps);
    }
    read_opt(j, "ece_bins", c.ece_bins);
    read_opt(j, "entropy_bins", c.entropy_bins);
    read_opt(j, "max_backend_calls", c.max_backend_calls);
    read_opt(j, "workers", c.workers);
    read_opt(j, "sweep_shots", c.sweep_shots);
    read_opt(j, "output_dir", c.output_dir);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  return c;
}

ExperimentConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config file '" + path.string() + "': " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const ExperimentConfig& cfg) {
  auto j = config_to_json(cfg);
  j.erase("output_dir");
  j.erase("workers");
  j["backend"].erase("replay_log");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

std::vector<PromptTemplate> resolve_templates(const ExperimentConfig& cfg) {
  if (cfg.templates_file.empty()) return template_registry();
  std::ifstream in(cfg.templates_file);
  if (!in) throw std::runtime_error("cannot open templates file '" + cfg.templates_file + "'");
  return load_templates_json(in);
}

std::size_t estimate_backend_calls(const ExperimentConfig& cfg) {
  const bool vanilla_or_conc = std::ranges::any_of(cfg.methods, [](Method m) { return is_llm_method(m); });
  const bool conc = std::ranges::find(cfg.methods, Method::conc) != cfg.methods.end();
  const bool linc = std::ranges::find(cfg.methods, Method::linc) != cfg.methods.end();
  if (!vanilla_or_conc) return 0;
  std::size_t per_seed = 0;
  for (auto shots : cfg.shots) {
    per_seed += cfg.n_test;
    if (conc) per_seed += cfg.cf_texts.size();
    if (linc && shots >= 2) per_seed += shots;
  }
  return per_seed * cfg.seeds.size() * cfg.template_ids.size();
}

ExperimentContext make_context(const ExperimentConfig& cfg, std::shared_ptr<const CompletionBackend> backend) {
  ExperimentContext ctx;
  ctx.templates = resolve_templates(cfg);
  cfg.validate(ctx.templates);
  ctx.config = cfg;
  ctx.constellation = make_constellation(cfg.rings);
  ctx.config_hash = config_hash(cfg);
  const bool needs_llm = std::ranges::any_of(cfg.methods, [](Method m) { return is_llm_method(m); });
  if (needs_llm) {
    if (!backend) backend = make_backend(cfg.backend, cfg.mock, ctx.templates);
    if (!cfg.backend.is_mock() && cfg.max_backend_calls > 0) {
      const auto estimate = estimate_backend_calls(cfg);
      if (estimate > cfg.max_backend_calls)
        throw std::invalid_argument("run needs an estimated " + std::to_string(estimate) +
                                    " backend calls, above max_backend_calls=" +
                                    std::to_string(cfg.max_backend_calls));
      backend = std::make_shared<CountingBackend>(backend, cfg.max_backend_calls);
    }
    ctx.backend = std::move(backend);
  }
  return ctx;
}

ExperimentContext make_context(const ExperimentConfig& cfg) { return make_context(cfg, nullptr); }

std::string CellId::key() const {
  return to_string(method) + "|" + std::to_string(shots) + "|" + std::to_string(seed) + "|" + template_id;
}

std::uint64_t task_seed(const ExperimentConfig& cfg, std::size_t shots, std::uint64_t seed) {
  return derive_seed(cfg.master_seed, static_cast<std::uint64_t>(shots), seed);
}

TaskDataset make_cell_task(const ExperimentContext& ctx, std::size_t shots, std::uint64_t seed) {
  Rng rng(task_seed(ctx.config, shots, seed));
  return generate_task(rng, shots, ctx.config.n_test, ctx.constellation, ctx.config.channel);
}

std::string hash_samples(std::span<const ReceivedSample> samples) {
  std::string bytes;
  for (const auto& s : samples) {
    const double parts[2] = {s.x.real(), s.x.imag()};
    const auto label = static_cast<std::uint64_t>(s.y);
    bytes.append(reinterpret_cast<const char*>(parts), sizeof parts);
    bytes.append(reinterpret_cast<const char*>(&label), sizeof label);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

void compute_metrics(RunRecord& rec, std::size_t ece_bins) {
  rec.n_test = rec.labels.size();
  rec.accuracy = accuracy(rec.predictions, rec.labels);
  rec.ece = ece(rec.probs, rec.predictions, rec.labels, ece_bins).value;
  double h = 0.0;
  for (const auto& p : rec.probs) h += entropy_bits(p.probs);
  rec.mean_entropy = h / static_cast<double>(rec.probs.size());
}

std::vector<RunRecord> run_cell_group(const ExperimentContext& ctx, std::size_t shots, std::uint64_t seed,
                                      const std::vector<Method>& methods,
                                      const std::vector<std::string>& template_ids) {
  const auto& cfg = ctx.config;
  const TaskDataset task = make_cell_task(ctx, shots, seed);
  const std::string demo_hash = hash_samples(task.demos);
  const std::size_t k = ctx.constellation.k;
  std::vector<Label> labels;
  for (const auto& s : task.test) labels.push_back(s.y);
  const std::uint64_t cell_seed = task_seed(cfg, shots, seed);

  auto finish = [&](RunRecord& r, std::chrono::steady_clock::time_point start) {
    r.labels = labels;
    r.demo_hash = demo_hash;
    r.config_hash = ctx.config_hash;
    compute_metrics(r, cfg.ece_bins);
    r.wall_ms = elapsed_ms(start);
  };

  // Raw test-set label distributions per template, shared by vanilla, ConC and LinC.
  struct Queried {
    std::vector<LabelProbs> probs;
    std::string error;
    double ms = 0.0;
  };
  std::map<std::string, Queried> queried;
  auto test_probs = [&](const PromptTemplate& t) -> const Queried& {
    auto it = queried.find(t.id);
    if (it != queried.end()) return it->second;
    Queried q;
    const auto start = std::chrono::steady_clock::now();
    try {
      std::vector<Prompt> prompts;
      prompts.reserve(task.test.size());
      for (const auto& s : task.test) prompts.push_back(build_prompt(t, task.demos, s, cfg.quantization));
      q.probs = label_probabilities_batch(*ctx.backend, prompts, cfg.backend.max_parallel);
    } catch (const std::exception& e) {
      q.error = e.what();
    }
    q.ms = elapsed_ms(start);
    return queried.emplace(t.id, std::move(q)).first->second;
  };

  std::vector<RunRecord> out;
  for (Method method : methods) {
    if (!is_llm_method(method)) {
      CellId id{method, shots, seed, "-"};
      const auto start = std::chrono::steady_clock::now();
      try {
        RunRecord r;
        r.cell = id;
        if (method == Method::guessing) {
          Rng rng(derive_seed(cell_seed, "guessing"));
          for (std::size_t i = 0; i < task.test.size(); ++i) {
            r.predictions.push_back(rng.index(k));
            r.probs.push_back(uniform_probs(k, "guessing"));
          }
        } else {
          const int depth = *dnn_depth(method);
          auto model = build_mlp(depth, derive_seed(cell_seed, "dnn" + std::to_string(depth)), k);
          auto trained = train(std::move(model), task.demos, cfg.train);
          auto eval = evaluate(trained.model, task.test);
          r.probs = std::move(eval.probs);
          r.predictions = std::move(eval.predictions);
        }
        finish(r, start);
        out.push_back(std::move(r));
      } catch (const std::exception& e) {
        out.push_back(failed_record(id, e.what()));
      }
      continue;
    }

    for (const auto& tid : template_ids) {
      CellId id{method, shots, seed, tid};
      try {
        const auto& t = find_template(ctx.templates, tid);
        if (!ctx.backend) throw std::logic_error("no backend configured");
        const auto& q = test_probs(t);
        if (!q.error.empty()) throw BackendError(q.error);
        const auto start = std::chrono::steady_clock::now();
        RunRecord r;
        r.cell = id;
        CalibParams params = CalibParams::identity(k, CalibMethod::vanilla);
        if (method == Method::conc) {
          const auto p_cf = conc_content_free_probs(*ctx.backend, t, task.demos, cfg.cf_texts, cfg.quantization,
                                                    cfg.backend.max_parallel);
          params = conc_params(p_cf);
        } else if (method == Method::linc) {
          const auto probe = linc_probe_set(*ctx.backend, t, task.demos, cfg.quantization, cfg.backend.max_parallel);
          params = linc_fit(probe, cfg.linc);
        }
        for (const auto& p : q.probs) {
          r.probs.push_back(apply_calibration(params, p));
          r.predictions.push_back(predict(r.probs.back().probs));
        }
        if (method != Method::vanilla) r.calib = std::move(params);
        finish(r, start);
        if (method == Method::vanilla) r.wall_ms += q.ms;
        out.push_back(std::move(r));
      } catch (const std::exception& e) {
        out.push_back(failed_record(id, e.what()));
      }
    }
  }
  return out;
}

RunRecord run_cell(const ExperimentContext& ctx, Method method, std::size_t shots, std::uint64_t seed,
                   const std::string& template_id) {
  auto records = run_cell_group(ctx, shots, seed, {method}, {template_id});
  return std::move(records.front());
}

namespace {

struct GroupCoord {
  std::size_t shots;
  std::uint64_t seed;
};

std::vector<GroupCoord> grid_groups(const ExperimentConfig& cfg) {
  std::vector<GroupCoord> groups;
  for (auto shots : cfg.shots)
    for (auto seed : cfg.seeds) groups.push_back({shots, seed});
  return groups;
}

std::vector<RunRecord> run_group_guarded(const ExperimentContext& ctx, const GroupCoord& g) {
  try {
    return run_cell_group(ctx, g.shots, g.seed, ctx.config.methods, ctx.config.template_ids);
  } catch (const std::exception& e) {
    std::vector<RunRecord> failed;
    for (auto m : ctx.config.methods) failed.push_back(failed_record({m, g.shots, g.seed, "-"}, e.what()));
    return failed;
  }
}

Report assemble(const ExperimentContext& ctx, std::vector<std::vector<RunRecord>> parts) {
  Report report;
  report.config = ctx.config;
  report.config_hash = ctx.config_hash;
  for (auto& part : parts)
    for (auto& r : part) report.records.push_back(std::move(r));
  return report;
}

}  // namespace

Report run_grid(const ExperimentContext& ctx) {
  const auto groups = grid_groups(ctx.config);
  std::vector<std::vector<RunRecord>> parts(groups.size());
  const int threads = ctx.config.workers > 0 ? ctx.config.workers : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (std::ptrdiff_t g = 0; g < static_cast<std::ptrdiff_t>(groups.size()); ++g)
    parts[static_cast<std::size_t>(g)] = run_group_guarded(ctx, groups[static_cast<std::size_t>(g)]);
  return assemble(ctx, std::move(parts));
}

Report run_grid_serial(const ExperimentContext& ctx) {
  const auto groups = grid_groups(ctx.config);
  std::vector<std::vector<RunRecord>> parts;
  for (const auto& g : groups) parts.push_back(run_group_guarded(ctx, g));
  return assemble(ctx, std::move(parts));
}

std::vector<AggregateRow> aggregate(const Report& report) {
  struct Acc {
    std::vector<double> acc, ece, entropy;
    std::size_t failed = 0;
  };
  auto order = [](Method m) {
    return static_cast<std::size_t>(std::ranges::find(all_methods(), m) - all_methods().begin());
  };
  std::map<std::tuple<std::size_t, std::string, std::size_t>, Acc> groups;
  for (const auto& r : report.records) {
    auto& g = groups[{order(r.cell.method), r.cell.template_id, r.cell.shots}];
    if (!r.ok) {
      ++g.failed;
      continue;
    }
    g.acc.push_back(r.accuracy);
    g.ece.push_back(r.ece);
    g.entropy.push_back(r.mean_entropy);
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  auto stdev = [&](const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
  };
  std::vector<AggregateRow> rows;
  for (const auto& [key, g] : groups) {
    AggregateRow row;
    row.method = all_methods()[std::get<0>(key)];
    row.template_id = std::get<1>(key);
    row.shots = std::get<2>(key);
    row.n = g.acc.size();
    row.failed = g.failed;
    row.mean_accuracy = mean(g.acc);
    row.std_accuracy = stdev(g.acc);
    row.mean_ece = mean(g.ece);
    row.std_ece = stdev(g.ece);
    row.mean_entropy = mean(g.entropy);
    rows.push_back(row);
  }
  return rows;
}

BoxStats box_stats(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("box_stats: no values");
  std::ranges::sort(values);
  auto quantile = [&](double q) {
    const double h = (static_cast<double>(values.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  BoxStats b;
  b.min = values.front();
  b.max = values.back();
  b.q1 = quantile(0.25);
  b.median = quantile(0.5);
  b.q3 = quantile(0.75);
  b.iqr = b.q3 - b.q1;
  double s = 0.0;
  for (double v : values) s += v;
  b.mean = s / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - b.mean) * (v - b.mean);
  b.variance = ss / static_cast<double>(values.size());
  return b;
}

TemplateSweep template_sweep(const ExperimentContext& ctx, std::size_t shots) {
  ExperimentContext sweep_ctx = ctx;
  auto& cfg = sweep_ctx.config;
  cfg.shots = {shots};
  cfg.methods = {Method::vanilla, Method::conc, Method::linc};
  if (cfg.template_ids.size() < 2) {
    cfg.template_ids.clear();
    for (const auto& t : sweep_ctx.templates) cfg.template_ids.push_back(t.id);
  }
  if (cfg.template_ids.size() < 2) throw std::invalid_argument("template sweep needs at least two templates");
  sweep_ctx.config_hash = config_hash(cfg);
  if (!sweep_ctx.backend) sweep_ctx = make_context(cfg);

  TemplateSweep sweep;
  sweep.report = run_grid(sweep_ctx);
  for (Method m : cfg.methods) {
    std::vector<double> per_template;
    for (const auto& tid : cfg.template_ids) {
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& r : sweep.report.records)
        if (r.ok && r.cell.method == m && r.cell.template_id == tid) {
          sum += r.accuracy;
          ++n;
        }
      const double acc = n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
      sweep.rows.push_back({tid, m, acc});
      if (n) per_template.push_back(acc);
    }
    if (!per_template.empty()) sweep.summary.emplace_back(m, box_stats(per_template));
  }
  return sweep;
}

}  // namespace lmic
