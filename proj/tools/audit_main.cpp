#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "demopos/runner.hpp"

namespace {

using namespace demopos;

int cmd_run(const std::string& config_path, const std::string& out, bool offline,
            std::optional<int> jobs) {
  RunConfig config = RunConfig::load(config_path);
  AuditRunner runner(config, out, offline, jobs);
  std::filesystem::path dir = runner.run();
  std::cout << "run complete: " << dir.string() << "\n";
  std::cout << "backend calls: " << runner.backend_calls() << "\n";
  return 0;
}

int cmd_report(const std::string& config_path, const std::string& out) {
  RunConfig config = RunConfig::load(config_path);
  AuditRunner runner(config, out, /*offline=*/true);
  std::filesystem::path dir = runner.write_reports();
  std::cout << "reports written under " << dir.string() << "\n";
  return 0;
}

int cmd_fixtures(const std::string& config_path, const std::string& out) {
  RunConfig config = RunConfig::load(config_path);
  for (const TaskSource& source : config.tasks) {
    TaskSpec task = load_task(source);
    TaskSpec sampled =
        sample(task, SamplePlan{config.seeds.front(), config.n_queries, config.n_demos});
    std::vector<ChatPrompt> prompts = golden_fixtures(sampled);
    for (std::size_t i = 0; i < kLayoutOrder.size(); ++i) {
      std::filesystem::path path = std::filesystem::path(out) / source.task_id /
                                   (to_string(kLayoutOrder[i]) + ".txt");
      write_file_atomic(path, serialize_prompt(prompts[i]));
      std::cout << path.string() << "\n";
    }
  }
  return 0;
}

int cmd_build_ref(const std::string& run_dir, const std::string& model, const std::string& task,
                  unsigned seed, const std::string& output, std::size_t dimension) {
  HashedBowEmbedder embedder(dimension);
  std::vector<ReferenceEntry> refs =
      reference_from_run(run_dir, model, task, seed, embedder);
  save_reference(output, refs);
  std::cout << "wrote " << refs.size() << " reference entries to " << output << "\n";
  return 0;
}

int cmd_calibrate(const std::string& refs_path, const std::string& input, std::size_t k,
                  const std::string& output, std::size_t dimension) {
  HashedBowEmbedder embedder(dimension);
  std::vector<ReferenceEntry> refs = load_reference(refs_path);
  std::string out;
  for (const std::string& line : read_lines(input)) {
    if (trim(line).empty()) continue;
    PromptLayout layout = select_position(line, refs, k, embedder);
    out += to_string(layout) + "\t" + line + "\n";
  }
  if (output.empty()) {
    std::cout << out;
  } else {
    write_file_atomic(output, out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audit how in-context demo position shifts a chat model's predictions"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out = "audit-out";
  bool offline = false;
  int jobs = 0;

  auto add_run_options = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run config file")->required();
    cmd->add_option("--out", out, "output root directory");
    cmd->add_flag("--offline", offline, "use the scripted backend from offline_fixtures");
    cmd->add_option("--jobs", jobs, "worker threads (overrides config)");
  };

  CLI::App* run = app.add_subcommand("run", "run a full audit (resumes when possible)");
  add_run_options(run);
  CLI::App* resume = app.add_subcommand("resume", "resume an interrupted audit");
  add_run_options(resume);

  CLI::App* report = app.add_subcommand("report", "regenerate reports from a finished run");
  report->add_option("--config", config_path, "run config file")->required();
  report->add_option("--out", out, "output root directory");

  CLI::App* fixtures = app.add_subcommand("fixtures", "emit golden prompts per task and layout");
  std::string fixtures_out = "fixtures-out";
  fixtures->add_option("--config", config_path, "run config file")->required();
  fixtures->add_option("--out", fixtures_out, "fixture output directory");

  CLI::App* build_ref =
      app.add_subcommand("build-ref", "build a k-NN reference set from a finished run");
  std::string run_dir, model, task, ref_output = "reference.jsonl";
  unsigned seed = 42;
  std::size_t dimension = 64;
  build_ref->add_option("--run", run_dir, "run directory")->required();
  build_ref->add_option("--model", model, "model name")->required();
  build_ref->add_option("--task", task, "task id")->required();
  build_ref->add_option("--seed", seed, "sample seed");
  build_ref->add_option("--output", ref_output, "reference JSONL path");
  build_ref->add_option("--dim", dimension, "embedding dimension");

  CLI::App* calibrate =
      app.add_subcommand("calibrate", "pick a demo position per query by k-NN majority vote");
  std::string refs_path, input, cal_output;
  std::size_t k = 5;
  calibrate->add_option("--refs", refs_path, "reference JSONL path")->required();
  calibrate->add_option("--input", input, "query file, one query per line")->required();
  calibrate->add_option("-k,--k", k, "neighbor count");
  calibrate->add_option("--output", cal_output, "write selections here instead of stdout");
  calibrate->add_option("--dim", dimension, "embedding dimension");

  CLI11_PARSE(app, argc, argv);

  try {
    std::optional<int> jobs_override;
    if (jobs > 0) jobs_override = jobs;
    if (run->parsed() || resume->parsed()) {
      return cmd_run(config_path, out, offline, jobs_override);
    }
    if (report->parsed()) {
      return cmd_report(config_path, out);
    }
    if (fixtures->parsed()) {
      return cmd_fixtures(config_path, fixtures_out);
    }
    if (build_ref->parsed()) {
      return cmd_build_ref(run_dir, model, task, seed, ref_output, dimension);
    }
    if (calibrate->parsed()) {
      return cmd_calibrate(refs_path, input, k, cal_output, dimension);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
