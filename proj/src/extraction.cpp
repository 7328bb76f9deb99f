#include "demopos/extraction.hpp"

#include <algorithm>
#include <cctype>

#include <nlohmann/json.hpp>

namespace demopos {
namespace {

using nlohmann::json;

bool is_ascii_punct(char c) {
  unsigned char u = static_cast<unsigned char>(c);
  return u < 128 && std::ispunct(u);
}

std::string letter_label(std::size_t index) {
  return std::string(1, static_cast<char>('A' + index));
}

/// Locates the first balanced {...} region, honoring quoted strings.
std::optional<std::string> first_balanced_object(std::string_view text) {
  std::size_t start = text.find('{');
  if (start == std::string_view::npos) return std::nullopt;
  int depth = 0;
  char quote = 0;
  bool escaped = false;
  for (std::size_t i = start; i < text.size(); ++i) {
    char c = text[i];
    if (quote) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == quote) {
        quote = 0;
      }
      continue;
    }
    if (c == '"' || c == '\'') {
      quote = c;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) {
        return std::string(text.substr(start, i - start + 1));
      }
    }
  }
  return std::nullopt;
}

std::optional<std::string> json_value_to_string(const json& value) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number() || value.is_boolean()) return value.dump();
  return std::nullopt;
}

/// Tolerant scan for an answer key inside a near-JSON region: accepts single
/// quotes and unquoted keys, reads the value up to the next ',' or '}'.
std::optional<std::string> answer_from_tolerant_scan(const std::string& region) {
  for (std::size_t i = 0; i + 6 <= region.size(); ++i) {
    if (lower_ascii(region.substr(i, 6)) != "answer") continue;
    if (i > 0) {
      char before = region[i - 1];
      if (std::isalnum(static_cast<unsigned char>(before)) || before == '_') continue;
    }
    std::size_t pos = i + 6;
    while (pos < region.size() && (region[pos] == '"' || region[pos] == '\'' ||
                                   std::isspace(static_cast<unsigned char>(region[pos])))) {
      ++pos;
    }
    if (pos >= region.size() || region[pos] != ':') continue;
    ++pos;
    while (pos < region.size() && std::isspace(static_cast<unsigned char>(region[pos]))) ++pos;
    if (pos >= region.size()) return std::nullopt;
    if (region[pos] == '"' || region[pos] == '\'') {
      char quote = region[pos++];
      std::string value;
      bool escaped = false;
      for (; pos < region.size(); ++pos) {
        char c = region[pos];
        if (escaped) {
          value.push_back(c);
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == quote) {
          return value;
        } else {
          value.push_back(c);
        }
      }
      return value;  // unterminated string: keep what we saw
    }
    std::size_t end = pos;
    while (end < region.size() && region[end] != ',' && region[end] != '}') ++end;
    return trim(region.substr(pos, end - pos));
  }
  return std::nullopt;
}

std::optional<std::string> json_answer_candidate(const std::string& raw) {
  auto region = first_balanced_object(raw);
  if (!region) return std::nullopt;
  json j = json::parse(*region, nullptr, false);
  if (!j.is_discarded() && j.is_object()) {
    for (const auto& [key, value] : j.items()) {
      if (lower_ascii(key) == "answer") {
        return json_value_to_string(value);
      }
    }
    return std::nullopt;
  }
  return answer_from_tolerant_scan(*region);
}

/// Remainder of the last line carrying an "Answer:" or "Solution:" prefix.
std::optional<std::string> prefix_candidate(const std::string& raw) {
  static const std::string_view kPrefixes[] = {"answer:", "solution:"};
  std::string lowered = lower_ascii(raw);
  std::vector<std::size_t> hits;
  for (std::string_view prefix : kPrefixes) {
    std::size_t pos = 0;
    while ((pos = lowered.find(prefix, pos)) != std::string::npos) {
      hits.push_back(pos + prefix.size());
      pos += prefix.size();
    }
  }
  std::sort(hits.begin(), hits.end(), std::greater<>());
  for (std::size_t begin : hits) {
    std::size_t end = raw.find('\n', begin);
    if (end == std::string::npos) end = raw.size();
    std::string candidate = trim(raw.substr(begin, end - begin));
    if (!normalize(candidate).empty()) return candidate;
  }
  return std::nullopt;
}

struct LabelMatch {
  std::string label;
  bool fuzzy = false;
};

/// Best edit similarity of a reference string against the whole candidate or
/// any single candidate token, so "it is busness" can still reach
/// "Business".
double candidate_similarity(const std::string& reference, const std::string& candidate) {
  double best = edit_similarity(reference, candidate);
  for (const std::string& token : split_whitespace(candidate)) {
    best = std::max(best, edit_similarity(reference, token));
  }
  return best;
}

/// Resolves a normalized candidate against the task's labels: exact first,
/// then fuzzy at >= 0.8 similarity. For MCQ the candidate may be a letter or
/// an option text; the resolved label is always the letter.
std::optional<LabelMatch> resolve_label(const std::string& candidate,
                                        const ExtractionContext& ctx) {
  if (candidate.empty()) return std::nullopt;
  if (ctx.kind == TaskKind::kMultipleChoice) {
    auto letter_for_option = [&](std::size_t i) {
      return i < ctx.labels.size() ? ctx.labels[i] : letter_label(i);
    };
    for (const std::string& label : ctx.labels) {
      if (normalize(label) == candidate) return LabelMatch{label};
    }
    for (std::size_t i = 0; i < ctx.options.size(); ++i) {
      if (normalize(ctx.options[i]) == candidate) return LabelMatch{letter_for_option(i)};
    }
    std::size_t best = 0;
    double best_sim = 0.0;
    for (std::size_t i = 0; i < ctx.options.size(); ++i) {
      double sim = candidate_similarity(normalize(ctx.options[i]), candidate);
      if (sim > best_sim) {
        best_sim = sim;
        best = i;
      }
    }
    if (best_sim >= 0.8) return LabelMatch{letter_for_option(best), true};
    return std::nullopt;
  }
  for (const std::string& label : ctx.labels) {
    if (normalize(label) == candidate) return LabelMatch{label};
  }
  std::size_t best = 0;
  double best_sim = 0.0;
  for (std::size_t i = 0; i < ctx.labels.size(); ++i) {
    double sim = candidate_similarity(normalize(ctx.labels[i]), candidate);
    if (sim > best_sim) {
      best_sim = sim;
      best = i;
    }
  }
  if (!ctx.labels.empty() && best_sim >= 0.8) return LabelMatch{ctx.labels[best], true};
  return std::nullopt;
}

ExtractedAnswer from_candidate(const std::string& candidate, ExtractMethod method,
                               const ExtractionContext& ctx) {
  std::string value = normalize(candidate);
  if (!is_label_constrained(ctx.kind)) {
    return ExtractedAnswer{value, method, std::nullopt};
  }
  if (auto match = resolve_label(value, ctx)) {
    return ExtractedAnswer{normalize(match->label), method, match->label};
  }
  return ExtractedAnswer{value, ExtractMethod::kOther, std::nullopt};
}

/// Standalone option letter: a token that is the letter alone or the letter
/// followed by ')', '.' or ':'. Avoids matching letters inside words.
std::optional<std::string> standalone_letter(const std::string& normalized,
                                             const ExtractionContext& ctx) {
  std::vector<char> letters;
  for (const std::string& label : ctx.labels) {
    if (label.size() == 1 && std::isalpha(static_cast<unsigned char>(label[0]))) {
      letters.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(label[0]))));
    }
  }
  if (letters.empty()) return std::nullopt;
  for (const std::string& token : split_whitespace(normalized)) {
    if (token.size() > 2) continue;
    char first = token[0];
    if (std::find(letters.begin(), letters.end(), first) == letters.end()) continue;
    if (token.size() == 1 || token[1] == ')' || token[1] == '.' || token[1] == ':') {
      return std::string(1, first);
    }
  }
  return std::nullopt;
}

}  // namespace

std::string to_string(ExtractMethod method) {
  switch (method) {
    case ExtractMethod::kJsonField: return "json_field";
    case ExtractMethod::kMcqLetter: return "mcq_letter";
    case ExtractMethod::kMcqText: return "mcq_text";
    case ExtractMethod::kAnswerPrefix: return "answer_prefix";
    case ExtractMethod::kFuzzy: return "fuzzy";
    case ExtractMethod::kExact: return "exact";
    case ExtractMethod::kOther: return "other";
  }
  throw Error("unknown extraction method");
}

ExtractMethod extract_method_from_string(const std::string& name) {
  if (name == "json_field") return ExtractMethod::kJsonField;
  if (name == "mcq_letter") return ExtractMethod::kMcqLetter;
  if (name == "mcq_text") return ExtractMethod::kMcqText;
  if (name == "answer_prefix") return ExtractMethod::kAnswerPrefix;
  if (name == "fuzzy") return ExtractMethod::kFuzzy;
  if (name == "exact") return ExtractMethod::kExact;
  if (name == "other") return ExtractMethod::kOther;
  throw SchemaError("unknown extraction method: " + name);
}

std::string normalize(std::string_view text) {
  std::string collapsed;
  collapsed.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    unsigned char u = static_cast<unsigned char>(c);
    if (u < 128 && std::isspace(u)) {
      pending_space = !collapsed.empty();
      continue;
    }
    if (pending_space) {
      collapsed.push_back(' ');
      pending_space = false;
    }
    collapsed.push_back(static_cast<char>(u < 128 ? std::tolower(u) : u));
  }
  std::size_t begin = 0;
  std::size_t end = collapsed.size();
  while (begin < end && (collapsed[begin] == ' ' || is_ascii_punct(collapsed[begin]))) ++begin;
  while (end > begin && (collapsed[end - 1] == ' ' || is_ascii_punct(collapsed[end - 1]))) --end;
  return collapsed.substr(begin, end - begin);
}

double edit_similarity(std::string_view a, std::string_view b) {
  if (a.empty() && b.empty()) return 1.0;
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::vector<std::size_t> prev(m + 1), curr(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    curr[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      curr[j] = std::min({prev[j] + 1, curr[j - 1] + 1, sub});
    }
    std::swap(prev, curr);
  }
  double dist = static_cast<double>(prev[m]);
  return 1.0 - dist / static_cast<double>(std::max(n, m));
}

ExtractionContext ExtractionContext::for_task(const TaskSpec& task, const QueryInstance& query) {
  return ExtractionContext{task.kind, task.label_set, query.options};
}

ExtractedAnswer extract(const ModelResponse& raw, const ExtractionContext& ctx) {
  if (raw.finish_reason == FinishReason::kError) {
    return ExtractedAnswer{"", ExtractMethod::kOther, std::nullopt};
  }
  const std::string& text = raw.raw_text;

  if (auto candidate = json_answer_candidate(text)) {
    return from_candidate(*candidate, ExtractMethod::kJsonField, ctx);
  }

  const std::string whole = normalize(text);
  if (ctx.kind == TaskKind::kMultipleChoice) {
    if (auto letter = standalone_letter(whole, ctx)) {
      for (const std::string& label : ctx.labels) {
        if (label.size() == 1 && normalize(label) == *letter) {
          return ExtractedAnswer{*letter, ExtractMethod::kMcqLetter, label};
        }
      }
    }
    for (std::size_t i = 0; i < ctx.options.size(); ++i) {
      if (normalize(ctx.options[i]) == whole && !whole.empty()) {
        std::string label = i < ctx.labels.size() ? ctx.labels[i] : letter_label(i);
        return ExtractedAnswer{whole, ExtractMethod::kMcqText, label};
      }
    }
  }

  if (auto candidate = prefix_candidate(text)) {
    return from_candidate(*candidate, ExtractMethod::kAnswerPrefix, ctx);
  }

  if (is_label_constrained(ctx.kind)) {
    if (auto match = resolve_label(whole, ctx)) {
      ExtractMethod method = match->fuzzy ? ExtractMethod::kFuzzy : ExtractMethod::kExact;
      return ExtractedAnswer{normalize(match->label), method, match->label};
    }
  }
  return ExtractedAnswer{whole, ExtractMethod::kOther, std::nullopt};
}

ExtractedAnswer extract_numeric(const ModelResponse& raw) {
  if (raw.finish_reason == FinishReason::kError) {
    return ExtractedAnswer{"", ExtractMethod::kOther, std::nullopt};
  }
  const std::string& text = raw.raw_text;
  std::string candidate;
  ExtractMethod method = ExtractMethod::kOther;
  if (auto json_candidate = json_answer_candidate(text)) {
    candidate = *json_candidate;
    method = ExtractMethod::kJsonField;
  } else if (auto prefixed = prefix_candidate(text)) {
    candidate = *prefixed;
    method = ExtractMethod::kAnswerPrefix;
  } else {
    candidate = text;
  }

  // Last number in the candidate, allowing thousands separators.
  std::optional<std::string> number;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    char c = candidate[i];
    bool starts_number = std::isdigit(static_cast<unsigned char>(c));
    bool starts_minus = c == '-' && i + 1 < candidate.size() &&
                        std::isdigit(static_cast<unsigned char>(candidate[i + 1])) &&
                        (i == 0 || !std::isalnum(static_cast<unsigned char>(candidate[i - 1])));
    if (!starts_number && !starts_minus) continue;
    std::size_t j = i + (starts_minus ? 1 : 0);
    while (j < candidate.size() && (std::isdigit(static_cast<unsigned char>(candidate[j])) ||
                                    candidate[j] == ',')) {
      ++j;
    }
    if (j + 1 < candidate.size() && candidate[j] == '.' &&
        std::isdigit(static_cast<unsigned char>(candidate[j + 1]))) {
      ++j;
      while (j < candidate.size() && std::isdigit(static_cast<unsigned char>(candidate[j]))) ++j;
    }
    number = candidate.substr(i, j - i);
    i = j - 1;
  }
  if (!number) {
    return ExtractedAnswer{normalize(candidate), ExtractMethod::kOther, std::nullopt};
  }

  std::string cleaned;
  for (char c : *number) {
    if (c != ',') cleaned.push_back(c);
  }
  if (cleaned.find('.') != std::string::npos) {
    while (!cleaned.empty() && cleaned.back() == '0') cleaned.pop_back();
    if (!cleaned.empty() && cleaned.back() == '.') cleaned.pop_back();
  }
  return ExtractedAnswer{cleaned, method, std::nullopt};
}

}  // namespace demopos
