#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dnp/dataset.hpp"
#include "dnp/exec.hpp"
#include "dnp/llm.hpp"
#include "dnp/prompts.hpp"
#include "json.hpp"

namespace dnp::harness {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UnknownExampleId : std::runtime_error {
  explicit UnknownExampleId(const std::string& id)
      : std::runtime_error("prediction references unknown example '" + id + "'") {}
};

struct MissingPrediction : std::runtime_error {
  explicit MissingPrediction(const std::string& id)
      : std::runtime_error("no prediction for example '" + id + "'") {}
};

struct ExperimentConfig {
  std::filesystem::path dataset_root = ".";
  std::string split = "dev";

  prompts::StrategyKind strategy = prompts::StrategyKind::Standard;
  prompts::ClauseOrder clause_order = prompts::ClauseOrder::SelectLast;
  prompts::LinkGranularity granularity = prompts::LinkGranularity::TablesWithAllColumns;
  prompts::StrategyKind refine_stage1 = prompts::StrategyKind::Standard;
  prompts::ShotMode shot_mode = prompts::ShotMode::Few;
  dataset::SchemaStyle schema_style = dataset::SchemaStyle::Compact;

  std::string backend = "mock";  // live | replay | mock
  std::string model_name = "gpt-3.5-turbo";
  double temperature = 0.3;
  double top_p = 1.0;
  int max_tokens = 512;
  std::string base_url = "https://api.openai.com";
  std::filesystem::path cache_file;   // replay source; live runs append records here
  std::filesystem::path mock_script;  // mock backend rules

  int trials = 3;

  std::filesystem::path demo_corpus = "data/demonstrations.json";
  int demo_k = 5;
  uint64_t demo_seed = 17;

  exec::Limits limits;
  int concurrency = 4;
  std::optional<int> max_examples;  // truncate the split for smoke runs
  std::string label;                // report row label; empty = strategy display label
  std::filesystem::path output_dir = "out";
};

/// Overlays the JSON document's fields onto base; unknown keys are an error
/// so config typos never pass silently.
ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

struct TraceEntry {
  std::string example_id;
  int example_index = 0;
  int trial_index = 0;
  std::string prompt;
  std::string response;
  std::optional<std::string> stage1_sql;  // GenerateRefine stages
  std::optional<std::string> refine_prompt;
  std::optional<std::string> refine_response;
  std::optional<std::string> parse_error;
  exec::ExampleOutcome outcome;
};

struct RunArtifact {
  nlohmann::json config_snapshot;
  std::vector<TraceEntry> traces;  // ordered by (example_index, trial_index)
  exec::AggregateReport report;
  double wall_seconds = 0.0;
};

/// Backend named by cfg.backend, wrapped in the concurrency cap (and the
/// cache recorder for live runs).
std::shared_ptr<llm::CompletionBackend> build_backend(const ExperimentConfig& cfg);

RunArtifact run_experiment(const ExperimentConfig& cfg);
RunArtifact run_experiment(const ExperimentConfig& cfg,
                           std::shared_ptr<llm::CompletionBackend> backend);

/// Grades a line-delimited predictions file ({example_id, sql} per line) as
/// a single trial.
exec::AggregateReport evaluate_offline(const dataset::Dataset& ds,
                                       const std::filesystem::path& predictions,
                                       const exec::Limits& limits = {});

enum class ReportFormat { Json, Csv, Markdown };

std::string render_report(const exec::AggregateReport& report, ReportFormat format);

nlohmann::json report_to_json(const exec::AggregateReport& report);
exec::AggregateReport report_from_json(const nlohmann::json& j);

nlohmann::json trace_to_json(const TraceEntry& trace);
TraceEntry trace_from_json(const nlohmann::json& j);

/// Re-aggregates outcomes from persisted traces; must reproduce the stored
/// report bit for bit.
exec::AggregateReport report_from_traces(const std::vector<TraceEntry>& traces,
                                         const std::string& label);

/// Writes run.json, report.{json,csv,md}, and trace.jsonl under out_dir.
void write_run_outputs(const RunArtifact& artifact, const std::filesystem::path& out_dir);

}  // namespace dnp::harness
