#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "demopos/corpus.hpp"
#include "demopos/extraction.hpp"

namespace demopos {

struct ReadabilityScores {
  double coleman_liau = 0.0;
  double flesch_kincaid = 0.0;
  double gunning_fog = 0.0;
};

struct RougeScores {
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rougeL = 0.0;
};

/// Which fields are populated depends on the task kind: accuracy for
/// classification/MCQ, EM + F1 for QA and math, ROUGE for summarization.
/// Readability is auxiliary and computed for any non-empty output.
struct ScoreVector {
  std::optional<int> accuracy;
  std::optional<int> exact_match;
  std::optional<double> token_f1;
  std::optional<double> rouge1;
  std::optional<double> rouge2;
  std::optional<double> rougeL;
  std::optional<ReadabilityScores> readability;
};

/// 1 iff the normalized extracted value (or its matched label) equals any
/// normalized gold answer.
int score_label(const ExtractedAnswer& extracted, const std::vector<std::string>& gold);

/// SQuAD answer normalization: lowercase, drop punctuation, drop the
/// articles a/an/the, collapse whitespace.
std::string squad_normalize(std::string_view text);

/// Token-bag F1 over SQuAD-normalized whitespace tokens. Both empty -> 1,
/// one empty -> 0.
double token_f1(const std::string& pred, const std::string& gold);
double token_f1_multi(const std::string& pred, const std::vector<std::string>& golds);

int exact_match(const std::string& pred, const std::string& gold);
int exact_match_multi(const std::string& pred, const std::vector<std::string>& golds);

/// Tokens used by the ROUGE metrics: normalize, split on whitespace, strip
/// per-token boundary punctuation.
std::vector<std::string> rouge_tokens(std::string_view text);

/// ROUGE-1/2 with clipped n-gram counts, ROUGE-L from token LCS. F1 values
/// are computed as 2*overlap/(|pred|+|ref|). Identical inputs score 1 even
/// when too short to form an n-gram; empty vs non-empty scores 0.
RougeScores rouge(const std::string& pred, const std::string& ref);

int count_syllables(const std::string& word);

/// Coleman-Liau, Flesch-Kincaid grade, and Gunning-Fog over heuristic
/// sentence/word/syllable counts. Throws on empty text.
ReadabilityScores readability(const std::string& text);

/// Per-kind dispatch filling the fields listed on ScoreVector.
ScoreVector score(const ExtractedAnswer& extracted, const QueryInstance& query, TaskKind kind,
                  const std::string& raw_text);

}  // namespace demopos
