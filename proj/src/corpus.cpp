#include "demopos/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <random>
#include <unordered_set>

namespace demopos {
namespace {

using nlohmann::json;

std::string letter_for(std::size_t index) {
  return std::string(1, static_cast<char>('A' + index));
}

json parse_json_line(const std::string& line, int line_no) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw SchemaError("line " + std::to_string(line_no) + ": not a JSON object");
  }
  return j;
}

std::string require_string(const json& j, const char* field, int line_no) {
  if (!j.contains(field) || !j.at(field).is_string()) {
    throw SchemaError("line " + std::to_string(line_no) + ": missing or non-string field \"" +
                      field + "\"");
  }
  std::string value = j.at(field).get<std::string>();
  if (value.empty()) {
    throw SchemaError("line " + std::to_string(line_no) + ": empty field \"" + field + "\"");
  }
  return value;
}

std::vector<std::string> require_string_array(const json& j, const char* field, int line_no) {
  if (!j.contains(field) || !j.at(field).is_array() || j.at(field).empty()) {
    throw SchemaError("line " + std::to_string(line_no) + ": missing or empty array field \"" +
                      field + "\"");
  }
  std::vector<std::string> out;
  for (const auto& item : j.at(field)) {
    if (!item.is_string() || item.get<std::string>().empty()) {
      throw SchemaError("line " + std::to_string(line_no) + ": field \"" + field +
                        "\" must contain non-empty strings");
    }
    out.push_back(item.get<std::string>());
  }
  return out;
}

struct ParsedItem {
  std::string input_text;
  std::vector<std::string> gold;
  std::vector<std::string> options;
};

ParsedItem parse_item(const std::string& line, TaskKind kind,
                      const std::vector<std::string>& label_set, int line_no) {
  json j = parse_json_line(line, line_no);
  ParsedItem item;
  switch (kind) {
    case TaskKind::kClassification: {
      item.input_text = require_string(j, "text", line_no);
      std::string label = require_string(j, "label", line_no);
      if (!label_set.empty() &&
          std::find(label_set.begin(), label_set.end(), label) == label_set.end()) {
        throw SchemaError("line " + std::to_string(line_no) + ": field \"label\" value \"" +
                          label + "\" not in label set");
      }
      item.gold = {label};
      break;
    }
    case TaskKind::kMultipleChoice: {
      std::string question = require_string(j, "question", line_no);
      item.options = require_string_array(j, "options", line_no);
      if (item.options.size() > 26) {
        throw SchemaError("line " + std::to_string(line_no) + ": more than 26 options");
      }
      std::string answer = require_string(j, "answer", line_no);
      // Answer may be an option letter or the option text.
      std::optional<std::size_t> index;
      if (answer.size() == 1) {
        char c = static_cast<char>(std::toupper(static_cast<unsigned char>(answer[0])));
        if (c >= 'A' && static_cast<std::size_t>(c - 'A') < item.options.size()) {
          index = static_cast<std::size_t>(c - 'A');
        }
      }
      if (!index) {
        for (std::size_t i = 0; i < item.options.size(); ++i) {
          if (item.options[i] == answer) {
            index = i;
            break;
          }
        }
      }
      if (!index) {
        throw SchemaError("line " + std::to_string(line_no) +
                          ": field \"answer\" matches neither an option letter nor an option "
                          "text");
      }
      std::string rendered = question;
      for (std::size_t i = 0; i < item.options.size(); ++i) {
        rendered += "\n" + letter_for(i) + ") " + item.options[i];
      }
      item.input_text = rendered;
      item.gold = {letter_for(*index), item.options[*index]};
      break;
    }
    case TaskKind::kExtractiveQa: {
      std::string context = require_string(j, "context", line_no);
      std::string question = require_string(j, "question", line_no);
      item.input_text = context + "\n" + question;
      item.gold = require_string_array(j, "answers", line_no);
      break;
    }
    case TaskKind::kMathWord: {
      item.input_text = require_string(j, "question", line_no);
      item.gold = {require_string(j, "answer", line_no)};
      break;
    }
    case TaskKind::kSummarization: {
      item.input_text = require_string(j, "document", line_no);
      item.gold = {require_string(j, "summary", line_no)};
      break;
    }
  }
  return item;
}

std::uint32_t bounded_uniform(std::mt19937& rng, std::uint32_t n) {
  // Rejection sampling over raw 32-bit draws. std::mt19937's output sequence
  // is fully specified by the standard, so this stays identical across
  // platforms where std::uniform_int_distribution would not.
  const std::uint64_t span = 0x100000000ULL;
  const std::uint64_t limit = span - span % n;
  std::uint32_t x;
  do {
    x = static_cast<std::uint32_t>(rng());
  } while (x >= limit);
  return x % n;
}

}  // namespace

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kClassification: return "classification";
    case TaskKind::kMultipleChoice: return "multiple_choice";
    case TaskKind::kExtractiveQa: return "extractive_qa";
    case TaskKind::kMathWord: return "math_word";
    case TaskKind::kSummarization: return "summarization";
  }
  throw Error("unknown task kind");
}

TaskKind task_kind_from_string(const std::string& name) {
  if (name == "classification") return TaskKind::kClassification;
  if (name == "multiple_choice") return TaskKind::kMultipleChoice;
  if (name == "extractive_qa") return TaskKind::kExtractiveQa;
  if (name == "math_word") return TaskKind::kMathWord;
  if (name == "summarization") return TaskKind::kSummarization;
  throw SchemaError("unknown task kind: " + name);
}

bool is_label_constrained(TaskKind kind) {
  return kind == TaskKind::kClassification || kind == TaskKind::kMultipleChoice;
}

QueryInstance parse_query_line(const std::string& line, TaskKind kind,
                               const std::vector<std::string>& label_set, int line_no) {
  ParsedItem item = parse_item(line, kind, label_set, line_no);
  QueryInstance query;
  char buf[16];
  std::snprintf(buf, sizeof(buf), "q%05d", line_no);
  query.query_id = buf;
  query.input_text = std::move(item.input_text);
  query.gold = std::move(item.gold);
  query.options = std::move(item.options);
  return query;
}

DemoExample parse_demo_line(const std::string& line, TaskKind kind,
                            const std::vector<std::string>& label_set, int line_no) {
  ParsedItem item = parse_item(line, kind, label_set, line_no);
  return DemoExample{std::move(item.input_text), item.gold.front()};
}

TaskSpec load_task(const TaskSource& source) {
  if (source.task_id.empty()) {
    throw SchemaError("task manifest entry has empty task_id");
  }
  if (is_label_constrained(source.kind) && source.label_set.empty()) {
    throw SchemaError(source.task_id + ": label_set required for " + to_string(source.kind));
  }
  if (!is_label_constrained(source.kind) && !source.label_set.empty()) {
    throw SchemaError(source.task_id + ": label_set not allowed for " + to_string(source.kind));
  }

  TaskSpec task;
  task.task_id = source.task_id;
  task.kind = source.kind;
  task.label_set = source.label_set;
  task.system_prompt = trim(read_file(source.system_prompt_path));
  if (task.system_prompt.empty()) {
    throw SchemaError(source.task_id + ": empty system prompt file " + source.system_prompt_path);
  }

  int line_no = 0;
  for (const std::string& line : read_lines(source.train_path)) {
    ++line_no;
    if (trim(line).empty()) continue;
    task.demo_pool.push_back(parse_demo_line(line, source.kind, source.label_set, line_no));
  }
  line_no = 0;
  std::unordered_set<std::string> seen_ids;
  for (const std::string& line : read_lines(source.test_path)) {
    ++line_no;
    if (trim(line).empty()) continue;
    QueryInstance query = parse_query_line(line, source.kind, source.label_set, line_no);
    if (!seen_ids.insert(query.query_id).second) {
      throw SchemaError(source.task_id + ": duplicate query id " + query.query_id);
    }
    task.queries.push_back(std::move(query));
  }
  if (task.demo_pool.empty()) {
    throw SchemaError(source.task_id + ": empty demo pool (" + source.train_path + ")");
  }
  if (task.queries.empty()) {
    throw SchemaError(source.task_id + ": empty query set (" + source.test_path + ")");
  }
  return task;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint32_t seed) {
  std::vector<std::size_t> indices(n);
  for (std::size_t i = 0; i < n; ++i) indices[i] = i;
  std::mt19937 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = bounded_uniform(rng, static_cast<std::uint32_t>(i));
    std::swap(indices[i - 1], indices[j]);
  }
  return indices;
}

TaskSpec sample(const TaskSpec& task, const SamplePlan& plan) {
  if (plan.n_queries == 0 || plan.n_queries > task.queries.size()) {
    throw Error(task.task_id + ": cannot sample " + std::to_string(plan.n_queries) +
                " queries from a pool of " + std::to_string(task.queries.size()));
  }
  if (plan.n_demos == 0 || plan.n_demos > task.demo_pool.size()) {
    throw Error(task.task_id + ": cannot sample " + std::to_string(plan.n_demos) +
                " demos from a pool of " + std::to_string(task.demo_pool.size()));
  }

  TaskSpec out;
  out.task_id = task.task_id;
  out.kind = task.kind;
  out.system_prompt = task.system_prompt;
  out.label_set = task.label_set;

  std::vector<std::size_t> query_order = shuffled_indices(task.queries.size(), plan.seed);
  std::unordered_set<std::string> query_texts;
  for (std::size_t i = 0; i < plan.n_queries; ++i) {
    const QueryInstance& q = task.queries[query_order[i]];
    out.queries.push_back(q);
    query_texts.insert(q.input_text);
  }

  // Demos stay disjoint from the sampled queries even when both roles are
  // backed by the same file.
  std::vector<std::size_t> demo_order = shuffled_indices(task.demo_pool.size(), plan.seed);
  for (std::size_t idx : demo_order) {
    if (out.demo_pool.size() == plan.n_demos) break;
    const DemoExample& demo = task.demo_pool[idx];
    if (query_texts.count(demo.input_text)) continue;
    out.demo_pool.push_back(demo);
  }
  if (out.demo_pool.size() < plan.n_demos) {
    throw Error(task.task_id + ": demo pool exhausted after excluding sampled queries");
  }
  return out;
}

nlohmann::json task_to_json(const TaskSpec& task) {
  json demos = json::array();
  for (const auto& d : task.demo_pool) {
    demos.push_back({{"input_text", d.input_text}, {"gold", d.gold}});
  }
  json queries = json::array();
  for (const auto& q : task.queries) {
    json entry = {{"query_id", q.query_id}, {"input_text", q.input_text}, {"gold", q.gold}};
    if (!q.options.empty()) entry["options"] = q.options;
    queries.push_back(std::move(entry));
  }
  json j = {{"task_id", task.task_id},
            {"kind", to_string(task.kind)},
            {"system_prompt", task.system_prompt},
            {"demo_pool", std::move(demos)},
            {"queries", std::move(queries)}};
  if (!task.label_set.empty()) j["label_set"] = task.label_set;
  return j;
}

TaskSpec task_from_json(const nlohmann::json& j) {
  TaskSpec task;
  task.task_id = j.at("task_id").get<std::string>();
  task.kind = task_kind_from_string(j.at("kind").get<std::string>());
  task.system_prompt = j.at("system_prompt").get<std::string>();
  if (j.contains("label_set")) task.label_set = j.at("label_set").get<std::vector<std::string>>();
  for (const auto& d : j.at("demo_pool")) {
    task.demo_pool.push_back(
        DemoExample{d.at("input_text").get<std::string>(), d.at("gold").get<std::string>()});
  }
  for (const auto& q : j.at("queries")) {
    QueryInstance query;
    query.query_id = q.at("query_id").get<std::string>();
    query.input_text = q.at("input_text").get<std::string>();
    query.gold = q.at("gold").get<std::vector<std::string>>();
    if (q.contains("options")) query.options = q.at("options").get<std::vector<std::string>>();
    task.queries.push_back(std::move(query));
  }
  return task;
}

TaskSource task_source_from_json(const nlohmann::json& j) {
  TaskSource source;
  source.task_id = j.at("task_id").get<std::string>();
  source.kind = task_kind_from_string(j.at("kind").get<std::string>());
  source.train_path = j.at("train_path").get<std::string>();
  source.test_path = j.at("test_path").get<std::string>();
  source.system_prompt_path = j.at("system_prompt_path").get<std::string>();
  if (j.contains("label_set")) {
    source.label_set = j.at("label_set").get<std::vector<std::string>>();
  }
  if (j.contains("max_new_tokens")) {
    source.max_new_tokens = j.at("max_new_tokens").get<int>();
  }
  return source;
}

nlohmann::json task_source_to_json(const TaskSource& source) {
  json j = {{"task_id", source.task_id},
            {"kind", to_string(source.kind)},
            {"train_path", source.train_path},
            {"test_path", source.test_path},
            {"system_prompt_path", source.system_prompt_path}};
  if (!source.label_set.empty()) j["label_set"] = source.label_set;
  if (source.max_new_tokens) j["max_new_tokens"] = *source.max_new_tokens;
  return j;
}

}  // namespace demopos
