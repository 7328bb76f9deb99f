#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "demopos/corpus.hpp"
#include "demopos/gateway.hpp"

namespace demopos {

enum class ExtractMethod {
  kJsonField,
  kMcqLetter,
  kMcqText,
  kAnswerPrefix,
  kFuzzy,
  kExact,
  kOther,
};

std::string to_string(ExtractMethod method);
ExtractMethod extract_method_from_string(const std::string& name);

struct ExtractedAnswer {
  /// Always the post-normalization string.
  std::string value;
  ExtractMethod method = ExtractMethod::kOther;
  /// For label-constrained tasks, the label (as spelled in the label set)
  /// that the output resolved to. Absent exactly when method is kOther.
  std::optional<std::string> matched_label;
};

/// Lowercases, collapses whitespace, and strips leading/trailing punctuation.
/// Internal hyphens and slashes survive ("Sci/Tech." -> "sci/tech"). Total on
/// arbitrary bytes and idempotent.
std::string normalize(std::string_view text);

/// 1 - levenshtein(a, b) / max(|a|, |b|); 1.0 when both are empty.
double edit_similarity(std::string_view a, std::string_view b);

/// Everything extraction needs to know about the task. labels holds class
/// names for classification and option letters for multiple choice; options
/// holds the current query's option texts (MCQ only).
struct ExtractionContext {
  TaskKind kind = TaskKind::kExtractiveQa;
  std::vector<std::string> labels;
  std::vector<std::string> options;

  static ExtractionContext for_task(const TaskSpec& task, const QueryInstance& query);
};

/// Multi-step answer pipeline, first succeeding step wins:
///   1. normalize;
///   2. first balanced JSON-like object, "answer" key (case-insensitive);
///   3. MCQ heuristics: standalone option letter, exact option-text match;
///   4. "Answer:" / "Solution:" prefix, remainder of the line;
///   5. the cleaned string, matched exactly then fuzzily (>= 0.8 edit
///      similarity) against the label set, else method kOther.
/// Total: never throws, failure is encoded as kOther.
ExtractedAnswer extract(const ModelResponse& raw, const ExtractionContext& ctx);

/// Math-task variant: runs the pipeline, then keeps the last number in the
/// candidate, stripping thousands separators and trailing ".0".
ExtractedAnswer extract_numeric(const ModelResponse& raw);

}  // namespace demopos
