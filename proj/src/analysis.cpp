#include "demopos/analysis.hpp"

#include <algorithm>
#include <cmath>

namespace demopos {
namespace {

using nlohmann::json;

/// Pairs of non-skipped records aligned by query id, in query-id order.
std::vector<std::pair<const EvalRecord*, const EvalRecord*>> align(
    const std::vector<EvalRecord>& base, const std::vector<EvalRecord>& alt) {
  std::map<std::string, const EvalRecord*> base_by_id;
  std::map<std::string, const EvalRecord*> alt_by_id;
  for (const EvalRecord& r : base) base_by_id[r.query_id] = &r;
  for (const EvalRecord& r : alt) alt_by_id[r.query_id] = &r;
  if (base_by_id.size() != base.size() || alt_by_id.size() != alt.size()) {
    throw Error("duplicate query ids in record set");
  }
  if (base_by_id.size() != alt_by_id.size()) {
    throw Error("alignment failure: record sets have different sizes");
  }
  std::vector<std::pair<const EvalRecord*, const EvalRecord*>> pairs;
  for (const auto& [id, record] : base_by_id) {
    auto it = alt_by_id.find(id);
    if (it == alt_by_id.end()) {
      throw Error("alignment failure: query " + id + " missing from one side");
    }
    if (record->skipped || it->second->skipped) continue;
    pairs.emplace_back(record, it->second);
  }
  return pairs;
}

json score_vector_to_json(const ScoreVector& s) {
  json j = json::object();
  if (s.accuracy) j["accuracy"] = *s.accuracy;
  if (s.exact_match) j["exact_match"] = *s.exact_match;
  if (s.token_f1) j["token_f1"] = *s.token_f1;
  if (s.rouge1) j["rouge1"] = *s.rouge1;
  if (s.rouge2) j["rouge2"] = *s.rouge2;
  if (s.rougeL) j["rougeL"] = *s.rougeL;
  if (s.readability) {
    j["readability"] = {{"coleman_liau", s.readability->coleman_liau},
                        {"flesch_kincaid", s.readability->flesch_kincaid},
                        {"gunning_fog", s.readability->gunning_fog}};
  }
  return j;
}

ScoreVector score_vector_from_json(const json& j) {
  ScoreVector s;
  if (j.contains("accuracy")) s.accuracy = j.at("accuracy").get<int>();
  if (j.contains("exact_match")) s.exact_match = j.at("exact_match").get<int>();
  if (j.contains("token_f1")) s.token_f1 = j.at("token_f1").get<double>();
  if (j.contains("rouge1")) s.rouge1 = j.at("rouge1").get<double>();
  if (j.contains("rouge2")) s.rouge2 = j.at("rouge2").get<double>();
  if (j.contains("rougeL")) s.rougeL = j.at("rougeL").get<double>();
  if (j.contains("readability")) {
    const json& r = j.at("readability");
    s.readability = ReadabilityScores{r.at("coleman_liau").get<double>(),
                                      r.at("flesch_kincaid").get<double>(),
                                      r.at("gunning_fog").get<double>()};
  }
  return s;
}

}  // namespace

json record_to_json(const EvalRecord& record) {
  json j = {{"query_id", record.query_id},
            {"layout", to_string(record.layout)},
            {"raw_text", record.raw_text},
            {"extracted",
             {{"value", record.extracted.value}, {"method", to_string(record.extracted.method)}}},
            {"scores", score_vector_to_json(record.scores)},
            {"skipped", record.skipped}};
  if (record.extracted.matched_label) {
    j["extracted"]["matched_label"] = *record.extracted.matched_label;
  }
  return j;
}

EvalRecord record_from_json(const json& j) {
  EvalRecord record;
  record.query_id = j.at("query_id").get<std::string>();
  record.layout = layout_from_string(j.at("layout").get<std::string>());
  record.raw_text = j.at("raw_text").get<std::string>();
  const json& e = j.at("extracted");
  record.extracted.value = e.at("value").get<std::string>();
  record.extracted.method = extract_method_from_string(e.at("method").get<std::string>());
  if (e.contains("matched_label")) {
    record.extracted.matched_label = e.at("matched_label").get<std::string>();
  }
  record.scores = score_vector_from_json(j.at("scores"));
  record.skipped = j.at("skipped").get<bool>();
  return record;
}

double accuracy_change(double metric_pos, double metric_zero) {
  return metric_pos - metric_zero;
}

std::string canonical_answer(const EvalRecord& record) {
  if (record.extracted.matched_label) return normalize(*record.extracted.matched_label);
  return record.extracted.value;
}

bool freeform_flip(double rougeL_base, double rougeL_alt) {
  return std::fabs(rougeL_base - rougeL_alt) > kFlipThreshold + 1e-9;
}

double prediction_change(const std::vector<EvalRecord>& base, const std::vector<EvalRecord>& alt,
                         TaskKind kind) {
  auto pairs = align(base, alt);
  if (pairs.empty()) return 0.0;
  long flips = 0;
  for (const auto& [b, a] : pairs) {
    if (kind == TaskKind::kSummarization) {
      if (freeform_flip(b->scores.rougeL.value_or(0.0), a->scores.rougeL.value_or(0.0))) ++flips;
    } else if (canonical_answer(*b) != canonical_answer(*a)) {
      ++flips;
    }
  }
  return static_cast<double>(flips) / static_cast<double>(pairs.size());
}

TransitionCounts transitions(const std::vector<EvalRecord>& base,
                             const std::vector<EvalRecord>& alt,
                             const std::function<int(const EvalRecord&)>& correctness) {
  auto pairs = align(base, alt);
  TransitionCounts counts;
  counts.n = static_cast<long>(pairs.size());
  for (const auto& [b, a] : pairs) {
    int cb = correctness(*b);
    int ca = correctness(*a);
    counts.base_correct += cb;
    counts.alt_correct += ca;
    if (cb == 0 && ca == 1) ++counts.improved;
    if (cb == 1 && ca == 0) ++counts.regressed;
    if (canonical_answer(*b) != canonical_answer(*a)) ++counts.changed;
  }
  counts.net = counts.improved - counts.regressed;
  if (counts.n > 0) {
    counts.improved_pct = 100.0 * static_cast<double>(counts.improved) / counts.n;
    counts.regressed_pct = 100.0 * static_cast<double>(counts.regressed) / counts.n;
    counts.changed_pct = 100.0 * static_cast<double>(counts.changed) / counts.n;
  }
  return counts;
}

TransitionCounts score_delta_transitions(const std::vector<EvalRecord>& base,
                                         const std::vector<EvalRecord>& alt, double threshold) {
  auto pairs = align(base, alt);
  TransitionCounts counts;
  counts.n = static_cast<long>(pairs.size());
  for (const auto& [b, a] : pairs) {
    double delta = a->scores.rougeL.value_or(0.0) - b->scores.rougeL.value_or(0.0);
    if (delta > threshold + 1e-9) ++counts.improved;
    if (delta < -threshold - 1e-9) ++counts.regressed;
    if (std::fabs(delta) > threshold + 1e-9) ++counts.changed;
  }
  counts.net = counts.improved - counts.regressed;
  if (counts.n > 0) {
    counts.improved_pct = 100.0 * static_cast<double>(counts.improved) / counts.n;
    counts.regressed_pct = 100.0 * static_cast<double>(counts.regressed) / counts.n;
    counts.changed_pct = 100.0 * static_cast<double>(counts.changed) / counts.n;
  }
  return counts;
}

WinTieLoss win_tie_loss(const std::map<std::string, double>& per_task_delta, double epsilon,
                        PromptLayout layout) {
  if (epsilon < 0) {
    throw Error("win_tie_loss epsilon must be non-negative");
  }
  WinTieLoss out;
  out.layout = layout;
  for (const auto& [task, delta] : per_task_delta) {
    if (delta > epsilon) {
      ++out.wins;
    } else if (delta < -epsilon) {
      ++out.losses;
    } else {
      ++out.ties;
    }
  }
  return out;
}

nlohmann::json transitions_to_sankey(const TransitionCounts& counts, PromptLayout base,
                                     PromptLayout alt) {
  const std::string base_name = to_string(base);
  const std::string alt_name = to_string(alt);
  long cc = counts.base_correct - counts.regressed;
  long ii = counts.n - counts.base_correct - counts.improved;
  json nodes = json::array({{{"name", base_name + "_correct"}},
                            {{"name", base_name + "_incorrect"}},
                            {{"name", alt_name + "_correct"}},
                            {{"name", alt_name + "_incorrect"}}});
  json links = json::array({{{"source", 0}, {"target", 2}, {"value", cc}},
                            {{"source", 0}, {"target", 3}, {"value", counts.regressed}},
                            {{"source", 1}, {"target", 2}, {"value", counts.improved}},
                            {{"source", 1}, {"target", 3}, {"value", ii}}});
  return json{{"nodes", nodes}, {"links", links}};
}

}  // namespace demopos
