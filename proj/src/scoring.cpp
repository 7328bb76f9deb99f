#include "demopos/scoring.hpp"

#include <algorithm>
#include <cctype>
#include <map>

namespace demopos {
namespace {

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c));
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), curr(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      if (a[i - 1] == b[j - 1]) {
        curr[j] = prev[j - 1] + 1;
      } else {
        curr[j] = std::max(prev[j], curr[j - 1]);
      }
    }
    std::swap(prev, curr);
  }
  return prev[b.size()];
}

double ngram_f1(const std::vector<std::string>& pred, const std::vector<std::string>& ref,
                std::size_t n) {
  auto ngrams = [n](const std::vector<std::string>& tokens) {
    std::map<std::string, std::size_t> counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
      std::string key = tokens[i];
      for (std::size_t j = 1; j < n; ++j) {
        key += '\x1f';
        key += tokens[i + j];
      }
      ++counts[key];
    }
    return counts;
  };
  auto pred_counts = ngrams(pred);
  auto ref_counts = ngrams(ref);
  std::size_t pred_total = 0, ref_total = 0;
  for (const auto& [key, c] : pred_counts) pred_total += c;
  for (const auto& [key, c] : ref_counts) ref_total += c;
  if (pred_total == 0 && ref_total == 0) {
    // Too short to form an n-gram on either side: score identity of the
    // token sequences so identical inputs still rate 1.
    return pred == ref ? 1.0 : 0.0;
  }
  if (pred_total == 0 || ref_total == 0) return 0.0;
  // Clipped counts: each n-gram contributes at most its reference count.
  std::size_t overlap = 0;
  for (const auto& [key, c] : pred_counts) {
    auto it = ref_counts.find(key);
    if (it != ref_counts.end()) overlap += std::min(c, it->second);
  }
  return 2.0 * static_cast<double>(overlap) / static_cast<double>(pred_total + ref_total);
}

}  // namespace

int score_label(const ExtractedAnswer& extracted, const std::vector<std::string>& gold) {
  for (const std::string& g : gold) {
    std::string ng = normalize(g);
    if (normalize(extracted.value) == ng) return 1;
    if (extracted.matched_label && normalize(*extracted.matched_label) == ng) return 1;
  }
  return 0;
}

std::string squad_normalize(std::string_view text) {
  std::string stripped;
  stripped.reserve(text.size());
  for (char c : text) {
    unsigned char u = static_cast<unsigned char>(c);
    if (u < 128 && std::ispunct(u)) continue;
    stripped.push_back(static_cast<char>(u < 128 ? std::tolower(u) : u));
  }
  std::vector<std::string> tokens = split_whitespace(stripped);
  std::vector<std::string> kept;
  for (std::string& token : tokens) {
    if (token == "a" || token == "an" || token == "the") continue;
    kept.push_back(std::move(token));
  }
  return join(kept, " ");
}

double token_f1(const std::string& pred, const std::string& gold) {
  std::vector<std::string> pred_tokens = split_whitespace(squad_normalize(pred));
  std::vector<std::string> gold_tokens = split_whitespace(squad_normalize(gold));
  if (pred_tokens.empty() && gold_tokens.empty()) return 1.0;
  if (pred_tokens.empty() || gold_tokens.empty()) return 0.0;
  std::map<std::string, std::size_t> gold_counts;
  for (const std::string& t : gold_tokens) ++gold_counts[t];
  std::size_t overlap = 0;
  for (const std::string& t : pred_tokens) {
    auto it = gold_counts.find(t);
    if (it != gold_counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  return 2.0 * static_cast<double>(overlap) /
         static_cast<double>(pred_tokens.size() + gold_tokens.size());
}

double token_f1_multi(const std::string& pred, const std::vector<std::string>& golds) {
  double best = 0.0;
  for (const std::string& gold : golds) best = std::max(best, token_f1(pred, gold));
  return best;
}

int exact_match(const std::string& pred, const std::string& gold) {
  return squad_normalize(pred) == squad_normalize(gold) ? 1 : 0;
}

int exact_match_multi(const std::string& pred, const std::vector<std::string>& golds) {
  for (const std::string& gold : golds) {
    if (exact_match(pred, gold)) return 1;
  }
  return 0;
}

std::vector<std::string> rouge_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  for (const std::string& raw : split_whitespace(normalize(text))) {
    std::string token = normalize(raw);
    if (!token.empty()) tokens.push_back(std::move(token));
  }
  return tokens;
}

RougeScores rouge(const std::string& pred, const std::string& ref) {
  std::vector<std::string> p = rouge_tokens(pred);
  std::vector<std::string> r = rouge_tokens(ref);
  RougeScores scores;
  if (p.empty() && r.empty()) {
    scores.rouge1 = scores.rouge2 = scores.rougeL = 1.0;
    return scores;
  }
  if (p.empty() || r.empty()) {
    return scores;
  }
  scores.rouge1 = ngram_f1(p, r, 1);
  scores.rouge2 = ngram_f1(p, r, 2);
  std::size_t lcs = lcs_length(p, r);
  scores.rougeL = 2.0 * static_cast<double>(lcs) / static_cast<double>(p.size() + r.size());
  return scores;
}

int count_syllables(const std::string& word) {
  std::string letters;
  for (char c : word) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      letters.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (letters.empty()) return 0;
  auto is_vowel = [](char c) {
    return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u' || c == 'y';
  };
  int groups = 0;
  bool in_group = false;
  for (char c : letters) {
    if (is_vowel(c)) {
      if (!in_group) ++groups;
      in_group = true;
    } else {
      in_group = false;
    }
  }
  // Silent trailing e ("make"), but keep the syllable in "-le" endings
  // ("table").
  if (groups > 1 && letters.back() == 'e' && !is_vowel(letters[letters.size() - 2]) &&
      letters[letters.size() - 2] != 'l') {
    --groups;
  }
  return std::max(groups, 1);
}

ReadabilityScores readability(const std::string& text) {
  std::vector<std::string> words;
  for (const std::string& token : split_whitespace(text)) {
    if (std::any_of(token.begin(), token.end(), is_word_char)) words.push_back(token);
  }
  if (words.empty()) {
    throw Error("readability requires non-empty text");
  }

  int sentences = 0;
  bool segment_has_word = false;
  for (char c : text) {
    if (c == '.' || c == '!' || c == '?') {
      if (segment_has_word) ++sentences;
      segment_has_word = false;
    } else if (is_word_char(c)) {
      segment_has_word = true;
    }
  }
  if (segment_has_word) ++sentences;
  sentences = std::max(sentences, 1);

  std::size_t letters = 0;
  long syllables = 0;
  long complex_words = 0;
  for (const std::string& word : words) {
    for (char c : word) {
      if (is_word_char(c)) ++letters;
    }
    int s = count_syllables(word);
    syllables += s;
    if (s >= 3) ++complex_words;
  }

  const double w = static_cast<double>(words.size());
  const double s = static_cast<double>(sentences);
  ReadabilityScores out;
  // Coleman-Liau: 0.0588 L - 0.296 S - 15.8, with L/S per 100 words.
  out.coleman_liau = 0.0588 * (100.0 * static_cast<double>(letters) / w) -
                     0.296 * (100.0 * s / w) - 15.8;
  // Flesch-Kincaid grade level.
  out.flesch_kincaid = 0.39 * (w / s) + 11.8 * (static_cast<double>(syllables) / w) - 15.59;
  // Gunning-Fog index; complex = three or more syllables.
  out.gunning_fog = 0.4 * (w / s + 100.0 * static_cast<double>(complex_words) / w);
  return out;
}

ScoreVector score(const ExtractedAnswer& extracted, const QueryInstance& query, TaskKind kind,
                  const std::string& raw_text) {
  ScoreVector scores;
  switch (kind) {
    case TaskKind::kClassification:
    case TaskKind::kMultipleChoice:
      scores.accuracy = score_label(extracted, query.gold);
      break;
    case TaskKind::kExtractiveQa:
      scores.exact_match = exact_match_multi(extracted.value, query.gold);
      scores.token_f1 = token_f1_multi(extracted.value, query.gold);
      break;
    case TaskKind::kMathWord: {
      // Numeric string equality fills the EM slot; token F1 is reported over
      // the final-answer strings.
      auto canonical = [](const std::string& s) {
        std::string c;
        for (char ch : s) {
          if (ch != ',') c.push_back(ch);
        }
        if (c.find('.') != std::string::npos) {
          while (!c.empty() && c.back() == '0') c.pop_back();
          if (!c.empty() && c.back() == '.') c.pop_back();
        }
        return trim(c);
      };
      int em = 0;
      for (const std::string& gold : query.gold) {
        if (!extracted.value.empty() && extracted.value == canonical(gold)) em = 1;
      }
      scores.exact_match = em;
      scores.token_f1 = token_f1_multi(extracted.value, query.gold);
      break;
    }
    case TaskKind::kSummarization: {
      RougeScores r = rouge(extracted.value, query.gold.front());
      scores.rouge1 = r.rouge1;
      scores.rouge2 = r.rouge2;
      scores.rougeL = r.rougeL;
      break;
    }
  }
  if (!split_whitespace(raw_text).empty()) {
    scores.readability = readability(raw_text);
  }
  return scores;
}

}  // namespace demopos
