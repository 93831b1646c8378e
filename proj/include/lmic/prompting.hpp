#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lmic/channel.hpp"

namespace lmic {

// Text rendering of demonstrations and queries. Patterns use the placeholders
// {index}, {re}, {im} and {label}.
struct PromptTemplate {
  std::string id;
  std::string header;
  std::string demo_pattern;
  std::string query_pattern;
  std::vector<std::string> label_verbalizer;  // label -> token text
  std::string separator = "\n";

  std::size_t k() const { return label_verbalizer.size(); }
  // Throws std::invalid_argument when a pattern is missing a placeholder, two
  // placeholders touch, or the verbalizer is not injective.
  void validate() const;
  // Inverse of label_verbalizer.
  std::optional<Label> label_of(std::string_view token) const;
};

struct QuantizationConfig {
  double scale = 10.0;
  int decimals = 0;

  void validate() const;
};

struct Prompt {
  std::string text;
  std::vector<std::string> label_tokens;
  std::string template_id;
};

std::vector<std::string> identity_verbalizer(std::size_t k);

// round(v * scale) to `decimals` places, half away from zero, without exponent
// notation; negative zero renders as zero.
std::string format_value(double v, const QuantizationConfig& q);
// Parses a plain decimal number as rendered by format_value.
std::optional<double> parse_number(std::string_view text);

// Fills placeholders in `pattern`. Unknown placeholders are left untouched.
std::string substitute(std::string_view pattern, const std::map<std::string, std::string>& fields);
// Matches `text` against `pattern`, returning the placeholder captures.
std::optional<std::map<std::string, std::string>> match_pattern(std::string_view pattern,
                                                                std::string_view text);

std::string render_demonstration(const PromptTemplate& t, std::size_t index, const ReceivedSample& s,
                                 const QuantizationConfig& q);

// header, demonstrations (numbered from 1) and the query line joined by the
// separator. The text stops where the label token is expected.
Prompt build_prompt(const PromptTemplate& t, std::span<const ReceivedSample> demos,
                    const ReceivedSample& query, const QuantizationConfig& q);

// Same as build_prompt with both query value slots replaced by `cf_text`.
Prompt content_free_prompt(const PromptTemplate& t, std::span<const ReceivedSample> demos,
                           std::string_view cf_text, const QuantizationConfig& q);

inline const std::vector<std::string>& default_content_free_texts() {
  static const std::vector<std::string> texts{"N/A", "", "[MASK]"};
  return texts;
}

struct ParsedDemo {
  std::size_t index = 0;
  std::string re;
  std::string im;
  Label label = 0;
};

struct ParsedPrompt {
  std::vector<ParsedDemo> demos;
  std::string query_re;
  std::string query_im;
};

// Reverses build_prompt / content_free_prompt for one template.
std::optional<ParsedPrompt> parse_prompt(const PromptTemplate& t, std::string_view text);

// Four reference templates (ids "format1".."format4") followed by six phrasing
// variants (ids prefixed "nonformat").
const std::vector<PromptTemplate>& template_registry();
const PromptTemplate& find_template(std::span<const PromptTemplate> templates, std::string_view id);

std::vector<PromptTemplate> load_templates_json(std::istream& in);
std::string templates_to_json(std::span<const PromptTemplate> templates);

}  // namespace lmic
