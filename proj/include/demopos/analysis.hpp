#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "demopos/prompting.hpp"
#include "demopos/scoring.hpp"

namespace demopos {

/// One (query, layout) evaluation. Skipped records (over-length prompts) are
/// excluded from every aggregate and flip count.
struct EvalRecord {
  std::string query_id;
  PromptLayout layout = PromptLayout::kZeroShot;
  std::string raw_text;
  ExtractedAnswer extracted;
  ScoreVector scores;
  bool skipped = false;
};

nlohmann::json record_to_json(const EvalRecord& record);
EvalRecord record_from_json(const nlohmann::json& j);

/// Threshold of the free-form flip rule (ROUGE-L delta).
inline constexpr double kFlipThreshold = 0.05;

/// Metric under a layout minus the same metric zero-shot.
double accuracy_change(double metric_pos, double metric_zero);

/// The answer string used for flip detection: the matched label when present,
/// else the normalized extracted value.
std::string canonical_answer(const EvalRecord& record);

/// Fraction of aligned, non-skipped query pairs whose answers differ between
/// the two record sets. Label/QA/math tasks compare canonical answers;
/// summarization applies the ROUGE-L flip rule. Throws when the query sets
/// are not aligned.
double prediction_change(const std::vector<EvalRecord>& base, const std::vector<EvalRecord>& alt,
                         TaskKind kind);

/// Flip iff |rougeL_base - rougeL_alt| > 0.05, strictly. Comparison carries a
/// 1e-9 slack so a delta of exactly 0.05 never counts as a flip despite
/// binary rounding of the inputs.
bool freeform_flip(double rougeL_base, double rougeL_alt);

struct TransitionCounts {
  long n = 0;
  long improved = 0;
  long regressed = 0;
  long changed = 0;
  long net = 0;  // improved - regressed
  long base_correct = 0;
  long alt_correct = 0;
  double improved_pct = 0.0;
  double regressed_pct = 0.0;
  double changed_pct = 0.0;
};

/// Correct/incorrect bookkeeping between two aligned record sets. correctness
/// maps a record to 0/1; changed counts canonical-answer flips.
TransitionCounts transitions(const std::vector<EvalRecord>& base,
                             const std::vector<EvalRecord>& alt,
                             const std::function<int(const EvalRecord&)>& correctness);

/// Summarization variant: improved/regressed/changed are score movements
/// beyond the flip threshold instead of binary correctness transitions.
TransitionCounts score_delta_transitions(const std::vector<EvalRecord>& base,
                                         const std::vector<EvalRecord>& alt,
                                         double threshold = kFlipThreshold);

struct WinTieLoss {
  PromptLayout layout = PromptLayout::kSsp;
  int wins = 0;
  int ties = 0;
  int losses = 0;
};

/// Win if delta > epsilon, loss if delta < -epsilon, else tie.
WinTieLoss win_tie_loss(const std::map<std::string, double>& per_task_delta, double epsilon,
                        PromptLayout layout);

/// Sankey-ready export of a transition table: correct/incorrect nodes on both
/// sides, four links with counts.
nlohmann::json transitions_to_sankey(const TransitionCounts& counts, PromptLayout base,
                                     PromptLayout alt);

}  // namespace demopos
