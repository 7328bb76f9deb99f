#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "demopos/calibrate.hpp"
#include "demopos/gateway.hpp"
#include "demopos/report.hpp"

namespace demopos {

struct ModelConfig {
  std::string name;
  std::size_t context_limit = 8192;
};

struct RunConfig {
  EndpointConfig endpoint;
  std::vector<ModelConfig> models;
  std::vector<TaskSource> tasks;
  std::vector<PromptLayout> layouts{kLayoutOrder.begin(), kLayoutOrder.end()};
  std::vector<std::uint32_t> seeds{42, 123, 456, 789, 1};
  std::size_t n_queries = 200;
  std::size_t n_demos = 5;
  double temperature = 0.0;
  double top_p = 1.0;
  int jobs = 4;
  double wtl_epsilon = 0.0;
  /// Scripted-backend fixture file; required in offline mode.
  std::string offline_fixtures;

  /// Reads the config file and resolves relative paths against its directory.
  static RunConfig load(const std::filesystem::path& path);

  /// Everything that determines run output. Concurrency and credential
  /// plumbing (jobs, timeout, api_key_env) stay out so they can change
  /// between resumes.
  nlohmann::json canonical_json() const;
  std::string digest() const;

  void validate() const;
};

/// End-to-end audit: sample -> assemble -> complete -> extract -> score ->
/// reports, resumable through the response cache and per-cell record ledgers.
class AuditRunner {
 public:
  AuditRunner(RunConfig config, std::filesystem::path out_root, bool offline,
              std::optional<int> jobs_override = std::nullopt);

  /// Runs (or resumes) the audit and writes the report bundle. Returns the
  /// run directory.
  std::filesystem::path run();

  /// Regenerates reports from persisted records without touching the backend.
  std::filesystem::path write_reports();

  std::filesystem::path run_dir() const;
  long backend_calls() const;

  /// Test hook: swap in a preconfigured backend before run().
  void set_backend(std::shared_ptr<Backend> backend);

 private:
  struct Cell;  // one (model, task, seed) work unit

  std::vector<Cell> prepare_cells();
  void execute(std::vector<Cell>& cells);
  void finalize(Cell& cell);
  void emit_reports(const std::vector<Cell>& cells);

  RunConfig config_;
  std::filesystem::path out_root_;
  bool offline_ = false;
  int jobs_ = 1;
  std::shared_ptr<Backend> backend_;
  std::unique_ptr<Gateway> gateway_;
};

/// Builds k-NN reference entries from one finished (model, task, seed) cell.
/// Queries with a skipped layout are left out (they were never evaluated
/// everywhere); queries missing a layout for any other reason are an error.
std::vector<ReferenceEntry> reference_from_run(const std::filesystem::path& run_dir,
                                               const std::string& model,
                                               const std::string& task_id, std::uint32_t seed,
                                               const Embedder& embedder);

}  // namespace demopos
