#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "demopos/analysis.hpp"
#include "demopos/stats.hpp"

namespace demopos {

/// Records of one (model, task, seed), keyed by layout.
using RecordSet = std::map<PromptLayout, std::vector<EvalRecord>>;

/// Metrics reported for a kind, in column order.
std::vector<std::string> metric_names(TaskKind kind);

/// The metric driving deltas, win-tie-loss, and stats for a kind.
std::string primary_metric(TaskKind kind);

std::optional<double> metric_value(const ScoreVector& scores, const std::string& name);

struct LayoutAggregate {
  PromptLayout layout = PromptLayout::kZeroShot;
  long n = 0;        // non-skipped records
  long skipped = 0;
  std::map<std::string, double> means;
};

LayoutAggregate aggregate(const std::vector<EvalRecord>& records, TaskKind kind,
                          PromptLayout layout);

/// Per-record 0/1 correctness used in transition accounting: accuracy for
/// label tasks, exact match for QA and math. Summarization has no binary
/// correctness and uses score_delta_transitions instead.
int record_correctness(const EvalRecord& record, TaskKind kind);

/// One report row per (layout, metric). accuracy_change compares against the
/// zero-shot aggregate; prediction_change and the transition columns compare
/// against the default sum layout and sit on the primary-metric row.
struct PositionReport {
  PromptLayout layout = PromptLayout::kZeroShot;
  std::string metric_name;
  double metric_value = 0.0;
  std::optional<double> accuracy_change;
  std::optional<double> prediction_change;
  std::optional<double> improved_pct;
  std::optional<double> regressed_pct;
  std::optional<long> net_pred;
};

std::vector<PositionReport> position_reports(const RecordSet& records, TaskKind kind);

/// Layout x metric matrix with skip counts and delta columns.
std::string task_report_csv(const RecordSet& records, TaskKind kind);

/// Sankey-ready transition export against the sum baseline.
nlohmann::json transitions_json(const RecordSet& records, TaskKind kind,
                                const std::string& task_id);

std::string win_tie_loss_csv(const std::vector<WinTieLoss>& rows);

std::string stats_csv(const std::vector<StatTestResult>& results);

}  // namespace demopos
