#include "demopos/runner.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

namespace demopos {
namespace {

using nlohmann::json;

std::string sanitize_component(const std::string& name) {
  std::string out;
  for (char c : name) {
    bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-';
    out.push_back(ok ? c : '_');
  }
  return out.empty() ? "_" : out;
}

std::filesystem::path resolve_relative(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_absolute()) return path;
  return (base / path).lexically_normal();
}

void load_records_file(const std::filesystem::path& path,
                       std::map<std::pair<PromptLayout, std::string>, EvalRecord>& records) {
  if (!std::filesystem::exists(path)) return;
  for (const std::string& line : read_lines(path)) {
    if (trim(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) continue;  // torn tail of an interrupted append
    EvalRecord record = record_from_json(j);
    records[{record.layout, record.query_id}] = record;
  }
}

}  // namespace

struct AuditRunner::Cell {
  std::string model;
  std::size_t context_limit = 8192;
  TaskSource source;
  std::uint32_t seed = 0;
  TaskSpec sampled;
  DemoBlock demos;
  GenerationParams params;
  std::filesystem::path dir;
  std::map<std::pair<PromptLayout, std::string>, EvalRecord> records;
  std::vector<std::pair<PromptLayout, const QueryInstance*>> pending;
  std::unique_ptr<std::mutex> mutex = std::make_unique<std::mutex>();

  RecordSet record_set() const {
    RecordSet set;
    for (const auto& [key, record] : records) {
      set[key.first].push_back(record);
    }
    return set;
  }
};

RunConfig RunConfig::load(const std::filesystem::path& path) {
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ConfigError("malformed config file: " + path.string());
  }
  const std::filesystem::path base = std::filesystem::absolute(path).parent_path();

  RunConfig config;
  if (j.contains("endpoint")) {
    const json& e = j.at("endpoint");
    config.endpoint.base_url = e.value("base_url", "");
    config.endpoint.api_key_env = e.value("api_key_env", config.endpoint.api_key_env);
    config.endpoint.timeout_sec = e.value("timeout_sec", config.endpoint.timeout_sec);
  }
  if (!j.contains("models") || !j.at("models").is_array()) {
    throw ConfigError("config needs a models array");
  }
  for (const json& m : j.at("models")) {
    ModelConfig model;
    if (m.is_string()) {
      model.name = m.get<std::string>();
    } else {
      model.name = m.at("name").get<std::string>();
      model.context_limit = m.value("context_limit", model.context_limit);
    }
    config.models.push_back(std::move(model));
  }
  if (!j.contains("tasks") || !j.at("tasks").is_array()) {
    throw ConfigError("config needs a tasks array");
  }
  for (const json& t : j.at("tasks")) {
    TaskSource source = task_source_from_json(t);
    source.train_path = resolve_relative(base, source.train_path).string();
    source.test_path = resolve_relative(base, source.test_path).string();
    source.system_prompt_path = resolve_relative(base, source.system_prompt_path).string();
    config.tasks.push_back(std::move(source));
  }
  if (j.contains("layouts")) {
    config.layouts.clear();
    for (const json& l : j.at("layouts")) {
      config.layouts.push_back(layout_from_string(l.get<std::string>()));
    }
  }
  if (j.contains("seeds")) {
    config.seeds = j.at("seeds").get<std::vector<std::uint32_t>>();
  }
  if (j.contains("sample")) {
    config.n_queries = j.at("sample").value("n_queries", config.n_queries);
    config.n_demos = j.at("sample").value("n_demos", config.n_demos);
  }
  if (j.contains("generation")) {
    config.temperature = j.at("generation").value("temperature", config.temperature);
    config.top_p = j.at("generation").value("top_p", config.top_p);
  }
  config.jobs = j.value("jobs", config.jobs);
  config.wtl_epsilon = j.value("wtl_epsilon", config.wtl_epsilon);
  if (j.contains("offline_fixtures")) {
    config.offline_fixtures =
        resolve_relative(base, j.at("offline_fixtures").get<std::string>()).string();
  }
  config.validate();
  return config;
}

void RunConfig::validate() const {
  if (models.empty()) throw ConfigError("config needs at least one model");
  if (tasks.empty()) throw ConfigError("config needs at least one task");
  if (layouts.empty()) throw ConfigError("config needs at least one layout");
  if (seeds.empty()) throw ConfigError("config needs at least one seed");
  if (n_queries == 0 || n_demos == 0) throw ConfigError("sample counts must be positive");
  std::set<std::string> ids;
  for (const TaskSource& task : tasks) {
    if (!ids.insert(task.task_id).second) {
      throw ConfigError("duplicate task_id: " + task.task_id);
    }
  }
}

nlohmann::json RunConfig::canonical_json() const {
  json models_json = json::array();
  for (const ModelConfig& m : models) {
    models_json.push_back({{"name", m.name}, {"context_limit", m.context_limit}});
  }
  json tasks_json = json::array();
  for (const TaskSource& t : tasks) tasks_json.push_back(task_source_to_json(t));
  json layouts_json = json::array();
  for (PromptLayout l : layouts) layouts_json.push_back(to_string(l));
  return json{{"endpoint", {{"base_url", endpoint.base_url}}},
              {"models", models_json},
              {"tasks", tasks_json},
              {"layouts", layouts_json},
              {"seeds", seeds},
              {"sample", {{"n_queries", n_queries}, {"n_demos", n_demos}}},
              {"generation", {{"temperature", temperature}, {"top_p", top_p}}},
              {"offline_fixtures", offline_fixtures},
              {"wtl_epsilon", wtl_epsilon}};
}

std::string RunConfig::digest() const {
  return sha256_hex(canonical_json().dump());
}

AuditRunner::AuditRunner(RunConfig config, std::filesystem::path out_root, bool offline,
                         std::optional<int> jobs_override)
    : config_(std::move(config)), out_root_(std::move(out_root)), offline_(offline) {
  config_.validate();
  jobs_ = std::max(1, jobs_override.value_or(config_.jobs));
}

std::filesystem::path AuditRunner::run_dir() const {
  return out_root_ / ("run_" + config_.digest().substr(0, 12));
}

long AuditRunner::backend_calls() const {
  return gateway_ ? gateway_->backend_calls() : 0;
}

void AuditRunner::set_backend(std::shared_ptr<Backend> backend) {
  backend_ = std::move(backend);
}

std::vector<AuditRunner::Cell> AuditRunner::prepare_cells() {
  const std::filesystem::path dir = run_dir();
  std::filesystem::create_directories(dir);

  const std::string digest = config_.digest();
  const std::filesystem::path state_path = dir / "state.json";
  if (std::filesystem::exists(state_path)) {
    json state = json::parse(read_file(state_path), nullptr, false);
    if (state.is_discarded() || state.value("config_digest", "") != digest) {
      throw ConfigError("run directory " + dir.string() +
                        " was created with a different config; refusing to resume");
    }
  } else {
    write_file_atomic(state_path, json{{"config_digest", digest}}.dump(2) + "\n");
    write_file_atomic(dir / "config.json", config_.canonical_json().dump(2) + "\n");
  }

  std::map<std::string, TaskSpec> loaded;
  for (const TaskSource& source : config_.tasks) {
    loaded.emplace(source.task_id, load_task(source));
  }

  std::vector<Cell> cells;
  for (const ModelConfig& model : config_.models) {
    for (const TaskSource& source : config_.tasks) {
      for (std::uint32_t seed : config_.seeds) {
        Cell cell;
        cell.model = model.name;
        cell.context_limit = model.context_limit;
        cell.source = source;
        cell.seed = seed;
        cell.sampled = sample(loaded.at(source.task_id),
                              SamplePlan{seed, config_.n_queries, config_.n_demos});
        cell.demos = render_demos(cell.sampled.demo_pool, source.kind);
        cell.params.temperature = config_.temperature;
        cell.params.top_p = config_.top_p;
        cell.params.max_new_tokens =
            source.max_new_tokens.value_or(default_max_new_tokens(source.kind));
        cell.params.model_name = model.name;
        cell.dir = dir / sanitize_component(model.name) / sanitize_component(source.task_id) /
                   ("seed_" + std::to_string(seed));
        std::filesystem::create_directories(cell.dir);
        if (!std::filesystem::exists(cell.dir / "sampled_task.json")) {
          write_file_atomic(cell.dir / "sampled_task.json",
                            task_to_json(cell.sampled).dump(2) + "\n");
        }
        load_records_file(cell.dir / "records.jsonl", cell.records);
        load_records_file(cell.dir / "records.partial.jsonl", cell.records);
        for (PromptLayout layout : kLayoutOrder) {
          if (std::find(config_.layouts.begin(), config_.layouts.end(), layout) ==
              config_.layouts.end()) {
            continue;
          }
          for (const QueryInstance& query : cell.sampled.queries) {
            if (!cell.records.count({layout, query.query_id})) {
              cell.pending.emplace_back(layout, &query);
            }
          }
        }
        cells.push_back(std::move(cell));
      }
    }
  }
  return cells;
}

void AuditRunner::execute(std::vector<Cell>& cells) {
  struct Item {
    Cell* cell;
    std::size_t index;
  };
  std::vector<Item> items;
  for (Cell& cell : cells) {
    for (std::size_t i = 0; i < cell.pending.size(); ++i) {
      items.push_back(Item{&cell, i});
    }
  }
  if (items.empty()) return;

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex error_mutex;
  std::exception_ptr first_error;

  auto worker = [&]() {
    while (!failed.load()) {
      std::size_t i = next.fetch_add(1);
      if (i >= items.size()) return;
      Cell& cell = *items[i].cell;
      const auto& [layout, query] = cell.pending[items[i].index];
      try {
        ChatPrompt prompt = assemble(cell.sampled.system_prompt, cell.demos, *query, layout);
        ModelResponse response = gateway_->complete(prompt, cell.params, cell.context_limit);

        EvalRecord record;
        record.query_id = query->query_id;
        record.layout = layout;
        if (response.over_length()) {
          record.skipped = true;
        } else if (response.finish_reason == FinishReason::kError) {
          throw GatewayError("backend error: " + response.error);
        } else {
          record.raw_text = response.raw_text;
          record.extracted =
              cell.source.kind == TaskKind::kMathWord
                  ? extract_numeric(response)
                  : extract(response, ExtractionContext::for_task(cell.sampled, *query));
          record.scores = score(record.extracted, *query, cell.source.kind, record.raw_text);
        }

        std::lock_guard<std::mutex> lock(*cell.mutex);
        std::ofstream out(cell.dir / "records.partial.jsonl", std::ios::app);
        out << record_to_json(record).dump() << "\n";
        out.flush();
        cell.records[{layout, record.query_id}] = std::move(record);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  int n_threads = std::min<int>(jobs_, static_cast<int>(items.size()));
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

void AuditRunner::finalize(Cell& cell) {
  std::string out;
  for (const auto& [key, record] : cell.records) {
    out += record_to_json(record).dump();
    out += "\n";
  }
  write_file_atomic(cell.dir / "records.jsonl", out);
  std::filesystem::remove(cell.dir / "records.partial.jsonl");
}

void AuditRunner::emit_reports(const std::vector<Cell>& cells) {
  const std::filesystem::path dir = run_dir();
  const bool has_zero_shot = std::find(config_.layouts.begin(), config_.layouts.end(),
                                       PromptLayout::kZeroShot) != config_.layouts.end();

  // layout -> mean of the primary metric across seeds, per (model, task).
  // Seeds whose cell produced no scorable records do not dilute the mean.
  std::map<std::pair<std::string, std::string>, std::map<PromptLayout, std::pair<double, long>>>
      seed_sums;

  for (const Cell& cell : cells) {
    RecordSet set = cell.record_set();
    write_file_atomic(cell.dir / "report.csv", task_report_csv(set, cell.source.kind));
    write_file_atomic(cell.dir / "transitions.json",
                      transitions_json(set, cell.source.kind, cell.source.task_id).dump(2) + "\n");

    const std::string primary = primary_metric(cell.source.kind);
    for (const auto& [layout, records] : set) {
      LayoutAggregate agg = aggregate(records, cell.source.kind, layout);
      auto it = agg.means.find(primary);
      if (it != agg.means.end()) {
        auto& [sum, count] = seed_sums[{cell.model, cell.source.task_id}][layout];
        sum += it->second;
        ++count;
      }
    }
  }
  std::map<std::pair<std::string, std::string>, std::map<PromptLayout, double>> seed_means;
  for (const auto& [key, per_layout] : seed_sums) {
    for (const auto& [layout, sum_count] : per_layout) {
      seed_means[key][layout] = sum_count.first / static_cast<double>(sum_count.second);
    }
  }

  // Per-model win-tie-loss vs zero-shot across tasks.
  if (has_zero_shot) {
    for (const ModelConfig& model : config_.models) {
      std::vector<WinTieLoss> rows;
      for (PromptLayout layout : kIclLayouts) {
        if (std::find(config_.layouts.begin(), config_.layouts.end(), layout) ==
            config_.layouts.end()) {
          continue;
        }
        std::map<std::string, double> deltas;
        for (const TaskSource& task : config_.tasks) {
          const auto& per_layout = seed_means[{model.name, task.task_id}];
          auto lit = per_layout.find(layout);
          auto zit = per_layout.find(PromptLayout::kZeroShot);
          if (lit != per_layout.end() && zit != per_layout.end()) {
            deltas[task.task_id] = accuracy_change(lit->second, zit->second);
          }
        }
        rows.push_back(win_tie_loss(deltas, config_.wtl_epsilon, layout));
      }
      write_file_atomic(dir / sanitize_component(model.name) / "win_tie_loss.csv",
                        win_tie_loss_csv(rows));
    }
  }

  // Cross-model significance tests, one block per task.
  std::string stats;
  if (config_.models.size() < 2) {
    stats = "comparison,delta,w,r,p_raw,p_adj,n_effective,significant,degenerate\n";
    stats += "# skipped: paired tests require at least two models\n";
  } else {
    std::vector<StatTestResult> all;
    std::string notes;
    for (const TaskSource& task : config_.tasks) {
      MetricByModelLayout metrics;
      std::map<std::string, double> zero_shot;
      for (const ModelConfig& model : config_.models) {
        const auto& per_layout = seed_means[{model.name, task.task_id}];
        for (const auto& [layout, value] : per_layout) {
          if (layout == PromptLayout::kZeroShot) {
            zero_shot[model.name] = value;
          } else {
            metrics[{model.name, layout}] = value;
          }
        }
      }
      std::vector<PromptLayout> icl;
      for (PromptLayout layout : kIclLayouts) {
        if (std::find(config_.layouts.begin(), config_.layouts.end(), layout) !=
            config_.layouts.end()) {
          icl.push_back(layout);
        }
      }
      try {
        if (has_zero_shot && !icl.empty()) {
          for (StatTestResult result : baseline_tests(metrics, zero_shot, icl)) {
            result.comparison = task.task_id + ":" + result.comparison;
            all.push_back(std::move(result));
          }
        }
        if (icl.size() >= 2) {
          for (StatTestResult result : pairwise_positions(metrics, icl)) {
            result.comparison = task.task_id + ":" + result.comparison;
            all.push_back(std::move(result));
          }
        }
      } catch (const Error& e) {
        notes += "# " + task.task_id + ": tests skipped (" + std::string(e.what()) + ")\n";
      }
    }
    stats = stats_csv(all) + notes;
  }
  write_file_atomic(dir / "stats.csv", stats);

  // Per-cell skip tallies for the health section and the matrix footnotes.
  std::map<std::pair<std::string, std::string>, long> skips_by_cell;
  long skips = 0;
  for (const Cell& cell : cells) {
    for (const auto& [key, record] : cell.records) {
      if (record.skipped) {
        ++skips;
        ++skips_by_cell[{cell.model, cell.source.task_id}];
      }
    }
  }

  // Consolidated Markdown summary.
  std::string md = "# Demo-position audit\n\n";
  md += "- run: `" + config_.digest().substr(0, 12) + "`\n";
  md += "- seeds:";
  for (std::uint32_t seed : config_.seeds) md += " " + std::to_string(seed);
  md += "\n- layouts:";
  for (PromptLayout layout : config_.layouts) md += " " + to_string(layout);
  md += "\n";
  for (const ModelConfig& model : config_.models) {
    md += "\n## " + model.name + "\n";

    // Layout x task matrix of the seed-mean primary metric.
    md += "\nSeed-mean primary metric (layout x task):\n\n";
    md += "| layout |";
    for (const TaskSource& task : config_.tasks) {
      md += " " + task.task_id + " (" + primary_metric(task.kind) + ") |";
    }
    md += "\n|---|";
    for (std::size_t i = 0; i < config_.tasks.size(); ++i) md += "---|";
    md += "\n";
    for (PromptLayout layout : config_.layouts) {
      md += "| " + to_string(layout) + " |";
      for (const TaskSource& task : config_.tasks) {
        const auto& per_layout = seed_means[{model.name, task.task_id}];
        auto it = per_layout.find(layout);
        md += it == per_layout.end() ? " |" : " " + format_fixed(it->second) + " |";
      }
      md += "\n";
    }

    for (const TaskSource& task : config_.tasks) {
      md += "\n### " + task.task_id + " (" + to_string(task.kind) + ")\n\n";
      long cell_skips = skips_by_cell[{model.name, task.task_id}];
      if (cell_skips > 0) {
        md += "Skipped (over-length) completions: " + std::to_string(cell_skips) + "\n\n";
      }
      md += "| layout | " + primary_metric(task.kind) + " |";
      if (has_zero_shot) md += " delta vs zero-shot |";
      md += "\n|---|---|";
      if (has_zero_shot) md += "---|";
      md += "\n";
      const auto& per_layout = seed_means[{model.name, task.task_id}];
      for (PromptLayout layout : config_.layouts) {
        auto it = per_layout.find(layout);
        if (it == per_layout.end()) continue;
        md += "| " + to_string(layout) + " | " + format_fixed(it->second) + " |";
        if (has_zero_shot) {
          auto zit = per_layout.find(PromptLayout::kZeroShot);
          if (zit != per_layout.end() && layout != PromptLayout::kZeroShot) {
            md += " " + format_fixed(accuracy_change(it->second, zit->second)) + " |";
          } else {
            md += " |";
          }
        }
        md += "\n";
      }
    }
  }
  md += "\n## Run health\n\n";
  md += "- skipped (over-length) completions: " + std::to_string(skips) + "\n";
  md += "- statistics: see `stats.csv`";
  if (config_.models.size() < 2) md += " (skipped, fewer than two models)";
  md += "\n";
  write_file_atomic(dir / "summary.md", md);
}

std::filesystem::path AuditRunner::run() {
  if (!backend_) {
    if (offline_) {
      if (config_.offline_fixtures.empty()) {
        throw ConfigError("offline mode needs offline_fixtures in the config");
      }
      backend_ = ScriptedBackend::from_file(config_.offline_fixtures);
    } else {
      backend_ = std::make_shared<HttpBackend>(config_.endpoint);
    }
  }
  RetryPolicy retry;
  if (offline_) retry.base_delay = std::chrono::milliseconds(0);
  gateway_ = std::make_unique<Gateway>(backend_, out_root_ / "cache", retry);

  std::vector<Cell> cells = prepare_cells();
  execute(cells);
  for (Cell& cell : cells) finalize(cell);
  emit_reports(cells);
  return run_dir();
}

std::filesystem::path AuditRunner::write_reports() {
  std::vector<Cell> cells = prepare_cells();
  for (Cell& cell : cells) {
    if (!cell.pending.empty()) {
      throw Error("run is incomplete: " + std::to_string(cell.pending.size()) +
                  " evaluations missing under " + cell.dir.string());
    }
  }
  emit_reports(cells);
  return run_dir();
}

std::vector<ReferenceEntry> reference_from_run(const std::filesystem::path& run_dir,
                                               const std::string& model,
                                               const std::string& task_id, std::uint32_t seed,
                                               const Embedder& embedder) {
  const std::filesystem::path cell_dir =
      run_dir / sanitize_component(model) / sanitize_component(task_id) /
      ("seed_" + std::to_string(seed));
  TaskSpec sampled = task_from_json(json::parse(read_file(cell_dir / "sampled_task.json")));
  std::map<std::pair<PromptLayout, std::string>, EvalRecord> records;
  load_records_file(cell_dir / "records.jsonl", records);

  const std::string primary = primary_metric(sampled.kind);
  std::vector<QueryOutcome> outcomes;
  for (const QueryInstance& query : sampled.queries) {
    QueryOutcome outcome;
    outcome.query_id = query.query_id;
    outcome.text = query.input_text;
    bool skipped = false;
    for (PromptLayout layout : kIclLayouts) {
      auto it = records.find({layout, query.query_id});
      if (it == records.end()) {
        throw Error("query " + query.query_id + " has no record for layout " +
                    to_string(layout));
      }
      if (it->second.skipped) {
        skipped = true;
        break;
      }
      outcome.layout_scores[layout] = metric_value(it->second.scores, primary).value_or(0.0);
    }
    if (!skipped) outcomes.push_back(std::move(outcome));
  }
  return build_reference(outcomes, embedder);
}

}  // namespace demopos
