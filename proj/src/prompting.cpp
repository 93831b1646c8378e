#include "lmic/prompting.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace lmic {

namespace {

struct Segment {
  bool placeholder = false;
  std::string text;  // literal text, or placeholder name without braces
};

std::vector<Segment> tokenize(std::string_view pattern) {
  std::vector<Segment> out;
  std::string literal;
  std::size_t i = 0;
  while (i < pattern.size()) {
    if (pattern[i] == '{') {
      const auto close = pattern.find('}', i + 1);
      if (close != std::string_view::npos) {
        const auto name = pattern.substr(i + 1, close - i - 1);
        const bool ident = !name.empty() && name.find_first_not_of("abcdefghijklmnopqrstuvwxyz_") ==
                                                std::string_view::npos;
        if (ident) {
          if (!literal.empty()) out.push_back({false, std::move(literal)});
          literal.clear();
          out.push_back({true, std::string(name)});
          i = close + 1;
          continue;
        }
      }
    }
    literal.push_back(pattern[i]);
    ++i;
  }
  if (!literal.empty()) out.push_back({false, std::move(literal)});
  return out;
}

bool has_placeholder(std::string_view pattern, std::string_view name) {
  for (const auto& seg : tokenize(pattern))
    if (seg.placeholder && seg.text == name) return true;
  return false;
}

std::string join_prompt(const PromptTemplate& t, std::span<const ReceivedSample> demos,
                        const std::string& query_re, const std::string& query_im, const QuantizationConfig& q) {
  std::string text;
  if (!t.header.empty()) {
    text += t.header;
    text += t.separator;
  }
  for (std::size_t i = 0; i < demos.size(); ++i) {
    text += render_demonstration(t, i + 1, demos[i], q);
    text += t.separator;
  }
  text += substitute(t.query_pattern, {{"re", query_re}, {"im", query_im}});
  return text;
}

}  // namespace

void PromptTemplate::validate() const {
  if (id.empty()) throw std::invalid_argument("template: empty id");
  for (const char* name : {"index", "re", "im", "label"})
    if (!has_placeholder(demo_pattern, name))
      throw std::invalid_argument("template '" + id + "': demo_pattern lacks {" + name + "}");
  for (const char* name : {"re", "im"})
    if (!has_placeholder(query_pattern, name))
      throw std::invalid_argument("template '" + id + "': query_pattern lacks {" + name + "}");
  if (has_placeholder(query_pattern, "label"))
    throw std::invalid_argument("template '" + id + "': query_pattern must end before the label");
  if (query_pattern.empty() || std::isspace(static_cast<unsigned char>(query_pattern.back())))
    throw std::invalid_argument("template '" + id + "': query_pattern must not end in whitespace");
  for (std::string_view pattern : {std::string_view(demo_pattern), std::string_view(query_pattern)}) {
    const auto segs = tokenize(pattern);
    for (std::size_t i = 1; i < segs.size(); ++i)
      if (segs[i].placeholder && segs[i - 1].placeholder)
        throw std::invalid_argument("template '" + id + "': adjacent placeholders are ambiguous");
  }
  if (separator.empty()) throw std::invalid_argument("template '" + id + "': empty separator");
  if (label_verbalizer.empty()) throw std::invalid_argument("template '" + id + "': empty verbalizer");
  std::set<std::string> seen;
  for (const auto& tok : label_verbalizer) {
    if (tok.empty() || tok.find_first_of(" \t\n") != std::string::npos)
      throw std::invalid_argument("template '" + id + "': label tokens must be non-empty without whitespace");
    if (!seen.insert(tok).second)
      throw std::invalid_argument("template '" + id + "': label verbalizer is not injective");
  }
}

std::optional<Label> PromptTemplate::label_of(std::string_view token) const {
  for (std::size_t i = 0; i < label_verbalizer.size(); ++i)
    if (label_verbalizer[i] == token) return i;
  return std::nullopt;
}

void QuantizationConfig::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw std::invalid_argument("quantization: scale must be > 0");
  if (decimals < 0 || decimals > 12) throw std::invalid_argument("quantization: decimals must be in [0, 12]");
}

std::vector<std::string> identity_verbalizer(std::size_t k) {
  std::vector<std::string> v;
  v.reserve(k);
  for (std::size_t i = 0; i < k; ++i) v.push_back(std::to_string(i));
  return v;
}

std::string format_value(double v, const QuantizationConfig& q) {
  if (!std::isfinite(v)) throw std::invalid_argument("format_value: non-finite input");
  const double scaled = v * q.scale * std::pow(10.0, q.decimals);
  if (!(std::fabs(scaled) < 9.0e18)) throw std::invalid_argument("format_value: value out of range");
  const long long n = std::llround(scaled);
  const bool negative = n < 0;
  std::string digits = std::to_string(negative ? -n : n);
  if (q.decimals > 0) {
    const auto d = static_cast<std::size_t>(q.decimals);
    if (digits.size() <= d) digits.insert(0, d + 1 - digits.size(), '0');
    digits.insert(digits.size() - d, 1, '.');
  }
  return (negative ? "-" : "") + digits;
}

std::optional<double> parse_number(std::string_view text) {
  if (text.empty() || text.find_first_not_of("-.0123456789") != std::string_view::npos) return std::nullopt;
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

std::string substitute(std::string_view pattern, const std::map<std::string, std::string>& fields) {
  std::string out;
  for (const auto& seg : tokenize(pattern)) {
    if (!seg.placeholder) {
      out += seg.text;
      continue;
    }
    const auto it = fields.find(seg.text);
    out += it != fields.end() ? it->second : "{" + seg.text + "}";
  }
  return out;
}

std::optional<std::map<std::string, std::string>> match_pattern(std::string_view pattern,
                                                                std::string_view text) {
  const auto segs = tokenize(pattern);
  std::map<std::string, std::string> captures;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const auto& seg = segs[i];
    if (!seg.placeholder) {
      if (text.substr(pos, seg.text.size()) != seg.text) return std::nullopt;
      pos += seg.text.size();
      continue;
    }
    std::size_t end = text.size();
    if (i + 1 < segs.size()) {
      end = text.find(segs[i + 1].text, pos);
      if (end == std::string_view::npos) return std::nullopt;
    }
    std::string value(text.substr(pos, end - pos));
    auto [it, inserted] = captures.emplace(seg.text, value);
    if (!inserted && it->second != value) return std::nullopt;
    pos = end;
  }
  if (pos != text.size()) return std::nullopt;
  return captures;
}

std::string render_demonstration(const PromptTemplate& t, std::size_t index, const ReceivedSample& s,
                                 const QuantizationConfig& q) {
  if (s.y >= t.k()) throw std::out_of_range("render_demonstration: label outside verbalizer");
  for (const char* name : {"index", "re", "im", "label"})
    if (!has_placeholder(t.demo_pattern, name))
      throw std::invalid_argument(std::string("render_demonstration: pattern lacks {") + name + "}");
  return substitute(t.demo_pattern, {{"index", std::to_string(index)},
                                     {"re", format_value(s.x.real(), q)},
                                     {"im", format_value(s.x.imag(), q)},
                                     {"label", t.label_verbalizer[s.y]}});
}

Prompt build_prompt(const PromptTemplate& t, std::span<const ReceivedSample> demos,
                    const ReceivedSample& query, const QuantizationConfig& q) {
  if (demos.empty()) throw std::invalid_argument("build_prompt: no demonstrations");
  return {join_prompt(t, demos, format_value(query.x.real(), q), format_value(query.x.imag(), q), q),
          t.label_verbalizer, t.id};
}

Prompt content_free_prompt(const PromptTemplate& t, std::span<const ReceivedSample> demos,
                           std::string_view cf_text, const QuantizationConfig& q) {
  if (demos.empty()) throw std::invalid_argument("content_free_prompt: no demonstrations");
  const std::string cf(cf_text);
  return {join_prompt(t, demos, cf, cf, q), t.label_verbalizer, t.id};
}

std::optional<ParsedPrompt> parse_prompt(const PromptTemplate& t, std::string_view text) {
  if (!t.header.empty()) {
    const std::string lead = t.header + t.separator;
    if (text.substr(0, lead.size()) != lead) return std::nullopt;
    text.remove_prefix(lead.size());
  }
  std::vector<std::string_view> parts;
  for (;;) {
    const auto cut = text.find(t.separator);
    if (cut == std::string_view::npos) {
      parts.push_back(text);
      break;
    }
    parts.push_back(text.substr(0, cut));
    text.remove_prefix(cut + t.separator.size());
  }
  ParsedPrompt parsed;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    const auto fields = match_pattern(t.demo_pattern, parts[i]);
    if (!fields) return std::nullopt;
    const auto label = t.label_of(fields->at("label"));
    if (!label) return std::nullopt;
    std::size_t index = 0;
    const auto& idx = fields->at("index");
    const auto [ptr, ec] = std::from_chars(idx.data(), idx.data() + idx.size(), index);
    if (ec != std::errc() || ptr != idx.data() + idx.size()) return std::nullopt;
    parsed.demos.push_back({index, fields->at("re"), fields->at("im"), *label});
  }
  const auto query = match_pattern(t.query_pattern, parts.back());
  if (!query) return std::nullopt;
  parsed.query_re = query->at("re");
  parsed.query_im = query->at("im");
  return parsed;
}

const std::vector<PromptTemplate>& template_registry() {
  static const std::vector<PromptTemplate> registry = [] {
    const std::string classes = "[0, 1, 2, 3, 4, 5, 6, 7]";
    auto make = [](std::string id, std::string header, const std::string& answer) {
      PromptTemplate t;
      t.id = std::move(id);
      t.header = std::move(header);
      t.demo_pattern = "Signal {index}'s real part is {re} and imaginary part is {im}. " + answer + ": {label}";
      t.query_pattern = "Test Signal's real part is {re} and imaginary part is {im}. " + answer + ":";
      t.label_verbalizer = identity_verbalizer(8);
      return t;
    };
    std::vector<PromptTemplate> r{
        make("format1", "8APSK signals are as follows:", "Actual Signal"),
        make("format2", "8APSK signals are as follows:", "Actual Constellation"),
        make("format3",
             "8APSK signals are as follows. Classify the signals based on the true set of classes " + classes + ".",
             "Actual Signal"),
        make("format4",
             "Based on the 8APSK signals shown below, predict the Test Signal's output class from the set of "
             "classes " + classes + ":",
             "Actual Signal"),
        make("nonformat5", "8APSK signals are as follows:", "Actual Class"),
        make("nonformat6", "Received 8APSK signals and their classes:", "Actual Signal"),
        make("nonformat7", "Here are some 8APSK signals:", "Actual Constellation"),
        make("nonformat8", "Each 8APSK signal below belongs to one of the classes " + classes + ".",
             "Actual Class"),
        make("nonformat9", "The following 8APSK signals were received:", "Actual Class"),
        make("nonformat10", "Based on the 8APSK signals shown below, predict the class of the Test Signal:",
             "Actual Constellation"),
    };
    for (const auto& t : r) t.validate();
    return r;
  }();
  return registry;
}

const PromptTemplate& find_template(std::span<const PromptTemplate> templates, std::string_view id) {
  for (const auto& t : templates)
    if (t.id == id) return t;
  throw std::invalid_argument("unknown template id '" + std::string(id) + "'");
}

std::vector<PromptTemplate> load_templates_json(std::istream& in) {
  const auto doc = nlohmann::json::parse(in);
  const auto& arr = doc.is_object() ? doc.at("templates") : doc;
  std::vector<PromptTemplate> out;
  std::set<std::string> ids;
  for (const auto& item : arr) {
    PromptTemplate t;
    t.id = item.at("id").get<std::string>();
    t.header = item.value("header", std::string{});
    t.demo_pattern = item.at("demo_pattern").get<std::string>();
    t.query_pattern = item.at("query_pattern").get<std::string>();
    t.separator = item.value("separator", std::string("\n"));
    t.label_verbalizer = item.contains("label_verbalizer")
                             ? item.at("label_verbalizer").get<std::vector<std::string>>()
                             : identity_verbalizer(item.value("k", std::size_t{8}));
    t.validate();
    if (!ids.insert(t.id).second) throw std::invalid_argument("duplicate template id '" + t.id + "'");
    out.push_back(std::move(t));
  }
  return out;
}

std::string templates_to_json(std::span<const PromptTemplate> templates) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& t : templates)
    arr.push_back({{"id", t.id},
                   {"header", t.header},
                   {"demo_pattern", t.demo_pattern},
                   {"query_pattern", t.query_pattern},
                   {"label_verbalizer", t.label_verbalizer},
                   {"separator", t.separator}});
  return nlohmann::json{{"templates", arr}}.dump(2);
}

}  // namespace lmic
