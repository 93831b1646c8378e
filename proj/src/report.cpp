#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "lmic/experiment.hpp"

namespace lmic {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string full(double v) { return fmt("%.17g", v); }

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  return out;
}

json record_to_json(const RunRecord& r) {
  json j = {{"method", to_string(r.cell.method)},
            {"shots", r.cell.shots},
            {"seed", r.cell.seed},
            {"template_id", r.cell.template_id},
            {"ok", r.ok},
            {"error", r.error},
            {"accuracy", r.accuracy},
            {"ece", r.ece},
            {"mean_entropy", r.mean_entropy},
            {"n_test", r.n_test},
            {"demo_hash", r.demo_hash},
            {"config_hash", r.config_hash},
            {"wall_ms", r.wall_ms}};
  if (r.calib)
    j["calib"] = {{"method", std::string(to_string(r.calib->method))},
                  {"k", r.calib->k},
                  {"a", r.calib->a},
                  {"b", r.calib->b}};
  return j;
}

json probs_to_json(const RunRecord& r) {
  json probs = json::array(), coverage = json::array(), source = json::array();
  for (const auto& p : r.probs) {
    probs.push_back(p.probs);
    coverage.push_back(p.coverage);
    source.push_back(p.source);
  }
  return {{"key", r.cell.key()},   {"labels", r.labels},     {"predictions", r.predictions},
          {"probs", probs},        {"coverage", coverage},   {"source", source}};
}

bool has_multiple_templates(const Report& report) { return report.config.template_ids.size() > 1; }

std::string row_title(const Report& report, Method m, const std::string& template_id) {
  auto title = method_title(m);
  if (is_llm_method(m) && has_multiple_templates(report)) title += " [" + template_id + "]";
  return title;
}

// (method, template) row keys in table order.
std::vector<std::pair<Method, std::string>> table_rows(const Report& report) {
  std::vector<std::pair<Method, std::string>> rows;
  for (Method m : all_methods()) {
    if (std::ranges::find(report.config.methods, m) == report.config.methods.end()) continue;
    if (is_llm_method(m))
      for (const auto& t : report.config.template_ids) rows.emplace_back(m, t);
    else
      rows.emplace_back(m, "-");
  }
  return rows;
}

void write_table(const Report& report, const std::vector<AggregateRow>& agg, const fs::path& path, bool std_dev) {
  std::map<std::tuple<Method, std::string, std::size_t>, const AggregateRow*> index;
  for (const auto& row : agg) index[{row.method, row.template_id, row.shots}] = &row;
  auto out = open_out(path);
  out << "method";
  for (auto s : report.config.shots) out << ',' << s;
  out << '\n';
  for (const auto& [m, t] : table_rows(report)) {
    out << csv_quote(row_title(report, m, t));
    for (auto s : report.config.shots) {
      auto it = index.find({m, t, s});
      if (it == index.end() || it->second->n == 0) {
        out << ",NA";
        continue;
      }
      const double v = std_dev ? it->second->std_accuracy : it->second->mean_accuracy;
      out << ',' << fmt("%.2f", 100.0 * v);
    }
    out << '\n';
  }
}

void write_ece_table(const Report& report, const std::vector<AggregateRow>& agg, const fs::path& path) {
  std::map<std::tuple<Method, std::string, std::size_t>, const AggregateRow*> index;
  for (const auto& row : agg) index[{row.method, row.template_id, row.shots}] = &row;
  auto out = open_out(path);
  out << "template_id,shots,Vanilla ICL,ConC,LinC\n";
  for (const auto& t : report.config.template_ids)
    for (auto s : report.config.shots) {
      out << t << ',' << s;
      for (Method m : {Method::vanilla, Method::conc, Method::linc}) {
        auto it = index.find({m, t, s});
        if (it == index.end() || it->second->n == 0)
          out << ",NA";
        else
          out << ',' << fmt("%.4f", it->second->mean_ece);
      }
      out << '\n';
    }
}

void write_entropy_table(const Report& report, const fs::path& path) {
  std::map<std::tuple<Method, std::string, std::size_t>, std::vector<LabelProbs>> pooled;
  for (const auto& r : report.records)
    if (r.ok) {
      auto& v = pooled[{r.cell.method, r.cell.template_id, r.cell.shots}];
      v.insert(v.end(), r.probs.begin(), r.probs.end());
    }
  auto out = open_out(path);
  out << "method,template_id,shots,bin_lower,bin_upper,count\n";
  for (const auto& [m, t] : table_rows(report))
    for (auto s : report.config.shots) {
      auto it = pooled.find({m, t, s});
      if (it == pooled.end() || it->second.empty()) continue;
      const auto hist = entropy_histogram(it->second, report.config.entropy_bins);
      for (std::size_t b = 0; b < hist.counts.size(); ++b)
        out << to_string(m) << ',' << t << ',' << s << ',' << fmt("%.6f", hist.edges[b]) << ','
            << fmt("%.6f", hist.edges[b + 1]) << ',' << hist.counts[b] << '\n';
    }
}

}  // namespace

void write_report(const Report& report, const fs::path& dir) {
  fs::create_directories(dir);
  {
    auto j = config_to_json(report.config);
    j["config_hash"] = report.config_hash;
    open_out(dir / "config.json") << j.dump(2) << '\n';
  }
  {
    auto rec = open_out(dir / "records.jsonl");
    auto probs = open_out(dir / "probs.jsonl");
    for (const auto& r : report.records) {
      rec << record_to_json(r).dump() << '\n';
      probs << probs_to_json(r).dump() << '\n';
    }
  }
  {
    auto out = open_out(dir / "cells.csv");
    out << "method,template_id,shots,seed,ok,accuracy,ece,mean_entropy,n_test,demo_hash,config_hash,error,wall_ms\n";
    for (const auto& r : report.records)
      out << to_string(r.cell.method) << ',' << r.cell.template_id << ',' << r.cell.shots << ',' << r.cell.seed
          << ',' << (r.ok ? 1 : 0) << ',' << full(r.accuracy) << ',' << full(r.ece) << ',' << full(r.mean_entropy)
          << ',' << r.n_test << ',' << r.demo_hash << ',' << r.config_hash << ',' << csv_quote(r.error) << ','
          << fmt("%.3f", r.wall_ms) << '\n';
  }
  const auto agg = aggregate(report);
  write_table(report, agg, dir / "accuracy_table.csv", false);
  write_table(report, agg, dir / "accuracy_std.csv", true);
  write_ece_table(report, agg, dir / "ece_table.csv");
  write_entropy_table(report, dir / "entropy_hist.csv");
  {
    json rows = json::array(), errors = json::array();
    std::size_t failed = 0;
    for (const auto& r : report.records)
      if (!r.ok) {
        ++failed;
        errors.push_back(r.error);
      }
    for (const auto& a : agg)
      rows.push_back({{"method", to_string(a.method)},
                      {"template_id", a.template_id},
                      {"shots", a.shots},
                      {"n", a.n},
                      {"failed", a.failed},
                      {"mean_accuracy", a.mean_accuracy},
                      {"std_accuracy", a.std_accuracy},
                      {"mean_ece", a.mean_ece},
                      {"std_ece", a.std_ece},
                      {"mean_entropy", a.mean_entropy}});
    json summary = {{"config_hash", report.config_hash},
                    {"n_records", report.records.size()},
                    {"n_failed", failed},
                    {"aggregates", rows},
                    {"errors", errors}};
    open_out(dir / "summary.json") << summary.dump(2) << '\n';
  }
}

void write_sweep(const TemplateSweep& sweep, const fs::path& dir) {
  write_report(sweep.report, dir);
  {
    auto out = open_out(dir / "sweep_templates.csv");
    out << "template_id,method,accuracy\n";
    for (const auto& row : sweep.rows)
      out << row.template_id << ',' << to_string(row.method) << ',' << full(row.accuracy) << '\n';
  }
  auto out = open_out(dir / "sweep_box.csv");
  out << "method,min,q1,median,q3,max,iqr,mean,variance\n";
  for (const auto& [m, b] : sweep.summary)
    out << to_string(m) << ',' << full(b.min) << ',' << full(b.q1) << ',' << full(b.median) << ',' << full(b.q3)
        << ',' << full(b.max) << ',' << full(b.iqr) << ',' << full(b.mean) << ',' << full(b.variance) << '\n';
}

Report load_report(const fs::path& dir) {
  std::ifstream cfg_in(dir / "config.json");
  if (!cfg_in) throw std::runtime_error("no config.json in '" + dir.string() + "'");
  auto cfg_json = json::parse(cfg_in);
  Report report;
  report.config_hash = cfg_json.value("config_hash", "");
  cfg_json.erase("config_hash");
  report.config = config_from_json(cfg_json);

  std::ifstream rec_in(dir / "records.jsonl"), probs_in(dir / "probs.jsonl");
  if (!rec_in || !probs_in) throw std::runtime_error("missing records.jsonl or probs.jsonl in '" + dir.string() + "'");
  std::string rec_line, probs_line;
  std::size_t line_no = 0;
  while (std::getline(rec_in, rec_line)) {
    ++line_no;
    if (rec_line.empty()) continue;
    if (!std::getline(probs_in, probs_line))
      throw std::runtime_error("probs.jsonl is shorter than records.jsonl");
    const auto j = json::parse(rec_line);
    const auto p = json::parse(probs_line);
    RunRecord r;
    r.cell.method = method_from_string(j.at("method").get<std::string>());
    r.cell.shots = j.at("shots").get<std::size_t>();
    r.cell.seed = j.at("seed").get<std::uint64_t>();
    r.cell.template_id = j.at("template_id").get<std::string>();
    if (p.at("key").get<std::string>() != r.cell.key())
      throw std::runtime_error("records.jsonl line " + std::to_string(line_no) + " does not match probs.jsonl");
    r.ok = j.at("ok").get<bool>();
    r.error = j.at("error").get<std::string>();
    r.demo_hash = j.at("demo_hash").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.wall_ms = j.at("wall_ms").get<double>();
    if (j.contains("calib")) {
      const auto& c = j.at("calib");
      CalibParams params;
      params.method = calib_method_from_string(c.at("method").get<std::string>());
      params.k = c.at("k").get<std::size_t>();
      params.a = c.at("a").get<std::vector<double>>();
      params.b = c.at("b").get<std::vector<double>>();
      r.calib = std::move(params);
    }
    r.labels = p.at("labels").get<std::vector<Label>>();
    r.predictions = p.at("predictions").get<std::vector<Label>>();
    const auto& probs = p.at("probs");
    for (std::size_t i = 0; i < probs.size(); ++i) {
      LabelProbs lp;
      lp.probs = probs[i].get<std::vector<double>>();
      lp.coverage = p.at("coverage")[i].get<double>();
      lp.source = p.at("source")[i].get<std::string>();
      r.probs.push_back(std::move(lp));
    }
    if (r.ok) compute_metrics(r, report.config.ece_bins);
    report.records.push_back(std::move(r));
  }
  return report;
}

}  // namespace lmic
