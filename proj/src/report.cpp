#include "demopos/report.hpp"

#include <algorithm>

namespace demopos {
namespace {

const std::vector<EvalRecord>* find_layout(const RecordSet& records, PromptLayout layout) {
  auto it = records.find(layout);
  return it == records.end() ? nullptr : &it->second;
}

std::string csv_cell(const std::optional<double>& value, int decimals = 4) {
  return value ? format_fixed(*value, decimals) : "";
}

}  // namespace

std::vector<std::string> metric_names(TaskKind kind) {
  switch (kind) {
    case TaskKind::kClassification:
    case TaskKind::kMultipleChoice:
      return {"accuracy"};
    case TaskKind::kExtractiveQa:
    case TaskKind::kMathWord:
      return {"exact_match", "token_f1"};
    case TaskKind::kSummarization:
      return {"rouge1", "rouge2", "rougeL"};
  }
  throw Error("unknown task kind");
}

std::string primary_metric(TaskKind kind) {
  switch (kind) {
    case TaskKind::kClassification:
    case TaskKind::kMultipleChoice:
      return "accuracy";
    case TaskKind::kExtractiveQa:
      return "token_f1";
    case TaskKind::kMathWord:
      return "exact_match";
    case TaskKind::kSummarization:
      return "rougeL";
  }
  throw Error("unknown task kind");
}

std::optional<double> metric_value(const ScoreVector& scores, const std::string& name) {
  if (name == "accuracy" && scores.accuracy) return static_cast<double>(*scores.accuracy);
  if (name == "exact_match" && scores.exact_match) return static_cast<double>(*scores.exact_match);
  if (name == "token_f1" && scores.token_f1) return *scores.token_f1;
  if (name == "rouge1" && scores.rouge1) return *scores.rouge1;
  if (name == "rouge2" && scores.rouge2) return *scores.rouge2;
  if (name == "rougeL" && scores.rougeL) return *scores.rougeL;
  if (scores.readability) {
    if (name == "coleman_liau") return scores.readability->coleman_liau;
    if (name == "flesch_kincaid") return scores.readability->flesch_kincaid;
    if (name == "gunning_fog") return scores.readability->gunning_fog;
  }
  return std::nullopt;
}

LayoutAggregate aggregate(const std::vector<EvalRecord>& records, TaskKind kind,
                          PromptLayout layout) {
  LayoutAggregate out;
  out.layout = layout;
  std::vector<std::string> names = metric_names(kind);
  names.insert(names.end(), {"coleman_liau", "flesch_kincaid", "gunning_fog"});
  std::map<std::string, std::pair<double, long>> sums;
  for (const EvalRecord& record : records) {
    if (record.skipped) {
      ++out.skipped;
      continue;
    }
    ++out.n;
    for (const std::string& name : names) {
      if (auto value = metric_value(record.scores, name)) {
        auto& [sum, count] = sums[name];
        sum += *value;
        ++count;
      }
    }
  }
  for (const auto& [name, sum_count] : sums) {
    if (sum_count.second > 0) {
      out.means[name] = sum_count.first / static_cast<double>(sum_count.second);
    }
  }
  return out;
}

int record_correctness(const EvalRecord& record, TaskKind kind) {
  switch (kind) {
    case TaskKind::kClassification:
    case TaskKind::kMultipleChoice:
      return record.scores.accuracy.value_or(0);
    case TaskKind::kExtractiveQa:
    case TaskKind::kMathWord:
      return record.scores.exact_match.value_or(0);
    case TaskKind::kSummarization:
      throw Error("summarization has no binary correctness");
  }
  throw Error("unknown task kind");
}

std::vector<PositionReport> position_reports(const RecordSet& records, TaskKind kind) {
  const std::vector<EvalRecord>* zero = find_layout(records, PromptLayout::kZeroShot);
  const std::vector<EvalRecord>* sum = find_layout(records, PromptLayout::kSum);
  const std::string primary = primary_metric(kind);

  std::optional<LayoutAggregate> zero_agg;
  if (zero) zero_agg = aggregate(*zero, kind, PromptLayout::kZeroShot);

  std::vector<PositionReport> rows;
  for (PromptLayout layout : kLayoutOrder) {
    const std::vector<EvalRecord>* layout_records = find_layout(records, layout);
    if (!layout_records) continue;
    LayoutAggregate agg = aggregate(*layout_records, kind, layout);
    for (const std::string& name : metric_names(kind)) {
      PositionReport row;
      row.layout = layout;
      row.metric_name = name;
      auto it = agg.means.find(name);
      row.metric_value = it == agg.means.end() ? 0.0 : it->second;
      if (zero_agg && layout != PromptLayout::kZeroShot) {
        auto zit = zero_agg->means.find(name);
        if (zit != zero_agg->means.end()) {
          row.accuracy_change = accuracy_change(row.metric_value, zit->second);
        }
      }
      if (name == primary && sum && layout != PromptLayout::kSum &&
          layout != PromptLayout::kZeroShot) {
        row.prediction_change = prediction_change(*sum, *layout_records, kind);
        TransitionCounts counts =
            kind == TaskKind::kSummarization
                ? score_delta_transitions(*sum, *layout_records)
                : transitions(*sum, *layout_records,
                              [kind](const EvalRecord& r) { return record_correctness(r, kind); });
        row.improved_pct = counts.improved_pct;
        row.regressed_pct = counts.regressed_pct;
        row.net_pred = counts.net;
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string task_report_csv(const RecordSet& records, TaskKind kind) {
  std::vector<std::string> names = metric_names(kind);
  const std::string primary = primary_metric(kind);

  std::string csv = "layout,n,skipped";
  for (const std::string& name : names) csv += "," + name;
  csv += ",coleman_liau,flesch_kincaid,gunning_fog";
  csv += ",delta_" + primary + "_vs_zero_shot,prediction_change_vs_sum,improved_pct,"
         "regressed_pct,net\n";

  std::vector<PositionReport> rows = position_reports(records, kind);
  auto row_for = [&](PromptLayout layout, const std::string& metric) -> const PositionReport* {
    for (const PositionReport& row : rows) {
      if (row.layout == layout && row.metric_name == metric) return &row;
    }
    return nullptr;
  };

  for (PromptLayout layout : kLayoutOrder) {
    const std::vector<EvalRecord>* layout_records = find_layout(records, layout);
    if (!layout_records) continue;
    LayoutAggregate agg = aggregate(*layout_records, kind, layout);
    csv += to_string(layout) + "," + std::to_string(agg.n) + "," + std::to_string(agg.skipped);
    for (const std::string& name : names) {
      auto it = agg.means.find(name);
      csv += ",";
      if (it != agg.means.end()) csv += format_fixed(it->second);
    }
    for (const char* name : {"coleman_liau", "flesch_kincaid", "gunning_fog"}) {
      auto it = agg.means.find(name);
      csv += ",";
      if (it != agg.means.end()) csv += format_fixed(it->second);
    }
    const PositionReport* row = row_for(layout, primary);
    csv += "," + (row ? csv_cell(row->accuracy_change) : "");
    csv += "," + (row ? csv_cell(row->prediction_change) : "");
    csv += "," + (row ? csv_cell(row->improved_pct, 2) : "");
    csv += "," + (row ? csv_cell(row->regressed_pct, 2) : "");
    csv += ",";
    if (row && row->net_pred) csv += std::to_string(*row->net_pred);
    csv += "\n";
  }
  return csv;
}

nlohmann::json transitions_json(const RecordSet& records, TaskKind kind,
                                const std::string& task_id) {
  nlohmann::json out = {{"task", task_id},
                        {"kind", to_string(kind)},
                        {"base", to_string(PromptLayout::kSum)},
                        {"comparisons", nlohmann::json::array()}};
  const std::vector<EvalRecord>* sum = find_layout(records, PromptLayout::kSum);
  if (!sum) return out;
  for (PromptLayout layout : kIclLayouts) {
    if (layout == PromptLayout::kSum) continue;
    const std::vector<EvalRecord>* alt = find_layout(records, layout);
    if (!alt) continue;
    nlohmann::json entry = {{"layout", to_string(layout)}};
    if (kind == TaskKind::kSummarization) {
      TransitionCounts counts = score_delta_transitions(*sum, *alt);
      entry["n"] = counts.n;
      entry["improved"] = counts.improved;
      entry["regressed"] = counts.regressed;
      entry["changed"] = counts.changed;
      entry["net"] = counts.net;
    } else {
      TransitionCounts counts = transitions(
          *sum, *alt, [kind](const EvalRecord& r) { return record_correctness(r, kind); });
      entry["n"] = counts.n;
      entry["improved"] = counts.improved;
      entry["regressed"] = counts.regressed;
      entry["changed"] = counts.changed;
      entry["net"] = counts.net;
      entry["sankey"] = transitions_to_sankey(counts, PromptLayout::kSum, layout);
    }
    out["comparisons"].push_back(std::move(entry));
  }
  return out;
}

std::string win_tie_loss_csv(const std::vector<WinTieLoss>& rows) {
  std::string csv = "layout,wins,ties,losses\n";
  for (const WinTieLoss& row : rows) {
    csv += to_string(row.layout) + "," + std::to_string(row.wins) + "," +
           std::to_string(row.ties) + "," + std::to_string(row.losses) + "\n";
  }
  return csv;
}

std::string stats_csv(const std::vector<StatTestResult>& results) {
  std::string csv = "comparison,delta,w,r,p_raw,p_adj,n_effective,significant,degenerate\n";
  for (const StatTestResult& r : results) {
    csv += r.comparison + "," + format_fixed(r.mean_diff);
    if (r.degenerate) {
      csv += ",,,,,";
      csv += std::to_string(r.n_effective);
      csv += ",false,true\n";
      continue;
    }
    csv += "," + format_fixed(r.w_statistic) + "," + format_fixed(r.effect_size) + "," +
           format_fixed(r.p_raw) + "," + format_fixed(r.p_adjusted) + "," +
           std::to_string(r.n_effective) + "," + (r.significant ? "true" : "false") + ",false\n";
  }
  return csv;
}

}  // namespace demopos
