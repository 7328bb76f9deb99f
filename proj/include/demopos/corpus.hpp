#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "demopos/util.hpp"

namespace demopos {

enum class TaskKind {
  kClassification,
  kMultipleChoice,
  kExtractiveQa,
  kMathWord,
  kSummarization,
};

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& name);

/// Classification and multiple-choice tasks carry a closed label set.
bool is_label_constrained(TaskKind kind);

struct DemoExample {
  std::string input_text;
  std::string gold;
};

struct QueryInstance {
  std::string query_id;
  std::string input_text;
  /// One or more acceptable answers. Multiple-choice queries carry both the
  /// option letter and the option text so either form scores as correct.
  std::vector<std::string> gold;
  /// Option texts in letter order; empty for non-MCQ kinds.
  std::vector<std::string> options;
};

struct TaskSpec {
  std::string task_id;
  TaskKind kind = TaskKind::kClassification;
  std::string system_prompt;
  std::vector<std::string> label_set;
  std::vector<DemoExample> demo_pool;
  std::vector<QueryInstance> queries;
};

/// One manifest entry: where a task's splits and system prompt live.
struct TaskSource {
  std::string task_id;
  TaskKind kind = TaskKind::kClassification;
  std::string train_path;
  std::string test_path;
  std::string system_prompt_path;
  std::vector<std::string> label_set;
  std::optional<int> max_new_tokens;
};

struct SamplePlan {
  std::uint32_t seed = 42;
  std::size_t n_queries = 200;
  std::size_t n_demos = 5;
};

/// Parses one task-file line. The same schema backs demos and queries; the
/// line number is only used for error reporting.
QueryInstance parse_query_line(const std::string& line, TaskKind kind,
                               const std::vector<std::string>& label_set, int line_no);
DemoExample parse_demo_line(const std::string& line, TaskKind kind,
                            const std::vector<std::string>& label_set, int line_no);

/// Loads and validates both splits plus the system prompt.
TaskSpec load_task(const TaskSource& source);

/// Draws plan.n_queries queries and plan.n_demos demos without replacement
/// using std::mt19937 over a rejection-sampled Fisher-Yates shuffle, so the
/// same (task, plan) yields the identical sample on every platform. Demos
/// whose input text collides with a sampled query are skipped.
TaskSpec sample(const TaskSpec& task, const SamplePlan& plan);

/// Deterministic full shuffle of [0, n) for the given seed.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint32_t seed);

nlohmann::json task_to_json(const TaskSpec& task);
TaskSpec task_from_json(const nlohmann::json& j);

TaskSource task_source_from_json(const nlohmann::json& j);
nlohmann::json task_source_to_json(const TaskSource& source);

}  // namespace demopos
