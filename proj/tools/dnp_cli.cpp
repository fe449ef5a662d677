#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dnp/harness.hpp"
#include "json.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Flags land in a JSON overlay so config files and command line share one
// validation path; only flags the user actually passed override the file.
struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> strings;
  std::map<std::string, double> reals;
  std::map<std::string, int64_t> ints;
  std::vector<std::pair<std::string, CLI::Option*>> bound;

  void add_string(CLI::App* cmd, const std::string& flag, const std::string& key,
                  const std::string& help) {
    auto* option = cmd->add_option(flag, strings[key], help);
    bound.emplace_back(key, option);
  }
  void add_real(CLI::App* cmd, const std::string& flag, const std::string& key,
                const std::string& help) {
    auto* option = cmd->add_option(flag, reals[key], help);
    bound.emplace_back(key, option);
  }
  void add_int(CLI::App* cmd, const std::string& flag, const std::string& key,
               const std::string& help) {
    auto* option = cmd->add_option(flag, ints[key], help);
    bound.emplace_back(key, option);
  }

  dnp::harness::ExperimentConfig resolve() const {
    dnp::harness::ExperimentConfig cfg;
    if (!config_file.empty()) cfg = dnp::harness::load_config(config_file);
    json overlay = json::object();
    for (const auto& [key, option] : bound) {
      if (option->count() == 0) continue;
      if (strings.count(key)) overlay[key] = strings.at(key);
      else if (reals.count(key)) overlay[key] = reals.at(key);
      else overlay[key] = ints.at(key);
    }
    return dnp::harness::config_from_json(overlay, cfg);
  }
};

void add_run_flags(CLI::App* cmd, ConfigFlags& flags) {
  cmd->add_option("--config", flags.config_file, "JSON config file; flags override its fields");
  flags.add_string(cmd, "--root", "dataset_root", "dataset root directory");
  flags.add_string(cmd, "--split", "split", "dataset split name");
  flags.add_string(cmd, "--strategy", "strategy", "standard|cot|cc|sl|gr");
  flags.add_string(cmd, "--clause-order", "clause_order", "select-first|from-first|select-last");
  flags.add_string(cmd, "--link-granularity", "link_granularity",
                   "exact|tables-then-columns|tables-all-columns");
  flags.add_string(cmd, "--refine-stage1", "refine_stage1", "stage-1 strategy for gr");
  flags.add_string(cmd, "--shots", "shots", "zero|few");
  flags.add_string(cmd, "--schema-style", "schema_style", "compact|ddl");
  flags.add_string(cmd, "--backend", "backend", "live|replay|mock");
  flags.add_string(cmd, "--model", "model", "model name sent to the endpoint");
  flags.add_real(cmd, "--temperature", "temperature", "sampling temperature");
  flags.add_real(cmd, "--top-p", "top_p", "nucleus sampling probability");
  flags.add_int(cmd, "--max-tokens", "max_tokens", "completion token budget");
  flags.add_string(cmd, "--base-url", "base_url", "endpoint base URL");
  flags.add_string(cmd, "--cache", "cache_file", "record/replay cache file");
  flags.add_string(cmd, "--mock-script", "mock_script", "mock backend script file");
  flags.add_int(cmd, "--trials", "trials", "independent trials to average");
  flags.add_string(cmd, "--demo-corpus", "demo_corpus", "demonstration corpus file");
  flags.add_int(cmd, "--demo-k", "demo_k", "demonstrations per prompt");
  flags.add_int(cmd, "--demo-seed", "demo_seed", "demonstration selection seed");
  flags.add_int(cmd, "--timeout-ms", "timeout_ms", "per-statement timeout");
  flags.add_int(cmd, "--row-cap", "row_cap", "result row cap");
  flags.add_real(cmd, "--tolerance", "numeric_tolerance", "numeric comparison tolerance");
  flags.add_int(cmd, "--concurrency", "concurrency", "in-flight completion cap");
  flags.add_int(cmd, "--limit", "max_examples", "use only the first N examples");
  flags.add_string(cmd, "--label", "label", "report row label");
  flags.add_string(cmd, "--out", "output_dir", "output directory");
}

int cmd_ingest(const std::string& root, const std::string& split) {
  auto ds = dnp::dataset::load_dataset(root, split);
  std::map<std::string, int> tiers;
  int unparsed = 0;
  for (const auto& ex : ds.examples) {
    if (ex.gold_parse_error) {
      ++unparsed;
      continue;
    }
    ++tiers[dnp::sqlkit::difficulty_name(dnp::sqlkit::classify_difficulty(ex.gold_sql))];
  }
  std::cout << "split " << ds.split_name << ": " << ds.examples.size() << " examples, "
            << ds.schemas.size() << " schemas\n";
  std::cout << "difficulty:";
  for (const char* tier : {"easy", "medium", "hard", "extra"})
    std::cout << " " << tier << "=" << tiers[tier];
  if (unparsed) std::cout << " unparsed=" << unparsed;
  std::cout << "\n";

  auto report = dnp::dataset::validate_dataset(ds);
  for (const auto& issue : report.issues) {
    const char* kind = issue.kind == dnp::dataset::ValidationIssue::Kind::GoldParseFailure
                           ? "gold-parse"
                           : issue.kind == dnp::dataset::ValidationIssue::Kind::GoldExecFailure
                                 ? "gold-exec"
                                 : "unknown-db";
    std::cout << "issue " << issue.example_id << " [" << kind << "] " << issue.detail << "\n";
  }
  std::cout << (report.clean() ? "dataset clean\n"
                               : std::to_string(report.issues.size()) + " issues\n");
  return report.clean() ? 0 : 2;
}

int cmd_demos(const std::string& root, const std::string& split, int k, uint64_t seed,
              const std::string& method) {
  auto ds = dnp::dataset::load_dataset(root, split);
  std::vector<dnp::prompts::QuestionEntry> questions;
  for (const auto& ex : ds.examples)
    questions.push_back({ex.question, ex.gold_sql, ex.db_id});
  auto cluster_method = method == "k-medoids" ? dnp::prompts::ClusterMethod::KMedoids
                                              : dnp::prompts::ClusterMethod::LeadingToken;
  auto demos = dnp::prompts::select_demonstrations(questions, k, seed, cluster_method);
  json out = json::array();
  for (const auto& demo : demos)
    out.push_back({{"question", demo.question}, {"sql", demo.sql}, {"db_id", demo.db_id}});
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_run(const ConfigFlags& flags) {
  auto cfg = flags.resolve();
  auto artifact = dnp::harness::run_experiment(cfg);
  dnp::harness::write_run_outputs(artifact, cfg.output_dir);
  std::cout << dnp::harness::render_report(artifact.report, dnp::harness::ReportFormat::Markdown);
  std::cout << "\nrun artifacts in " << cfg.output_dir.string() << "\n";
  return 0;
}

int cmd_grade(const std::string& root, const std::string& split, const std::string& predictions,
              const std::string& out_dir) {
  auto ds = dnp::dataset::load_dataset(root, split);
  auto report = dnp::harness::evaluate_offline(ds, predictions);
  std::cout << dnp::harness::render_report(report, dnp::harness::ReportFormat::Markdown);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    for (auto [name, format] :
         {std::pair{"report.json", dnp::harness::ReportFormat::Json},
          std::pair{"report.csv", dnp::harness::ReportFormat::Csv},
          std::pair{"report.md", dnp::harness::ReportFormat::Markdown}}) {
      std::ofstream file(fs::path(out_dir) / name, std::ios::binary);
      file << dnp::harness::render_report(report, format);
    }
  }
  return 0;
}

int cmd_report(const std::string& run_file, const std::string& format) {
  std::ifstream in(run_file);
  if (!in) throw std::runtime_error("cannot open " + run_file);
  json run;
  in >> run;
  if (!run.contains("report")) throw std::runtime_error(run_file + " has no report field");
  auto report = dnp::harness::report_from_json(run["report"]);
  auto fmt = format == "json" ? dnp::harness::ReportFormat::Json
             : format == "csv" ? dnp::harness::ReportFormat::Csv
                               : dnp::harness::ReportFormat::Markdown;
  std::cout << dnp::harness::render_report(report, fmt);
  return 0;
}

int cmd_cache_inspect(const std::string& file) {
  auto backend = dnp::llm::load_replay(file);
  std::map<std::string, int> models;
  for (const auto& [key, record] : backend->records()) ++models[record.model_name];
  std::cout << file << ": " << backend->records().size() << " distinct keys\n";
  for (const auto& [model, count] : models) std::cout << "  " << model << ": " << count << "\n";
  return 0;
}

int cmd_cache_merge(const std::vector<std::string>& inputs, const std::string& out_path) {
  std::map<std::string, dnp::llm::CompletionRecord> merged;
  for (const auto& input : inputs) {
    auto backend = dnp::llm::load_replay(input);
    for (const auto& [key, record] : backend->records()) merged[key] = record;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  for (const auto& [key, record] : merged) out << dnp::llm::record_to_line(record) << "\n";
  std::cout << "merged " << merged.size() << " records into " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Divide-and-Prompt Text-to-SQL harness"};
  app.require_subcommand(1);

  auto* ingest = app.add_subcommand("ingest", "load and validate a dataset");
  std::string ingest_root = ".", ingest_split = "dev";
  ingest->add_option("--root", ingest_root, "dataset root directory");
  ingest->add_option("--split", ingest_split, "dataset split name");

  auto* demos = app.add_subcommand("demos", "select few-shot demonstrations by clustering");
  std::string demos_root = ".", demos_split = "train", demos_method = "leading-token";
  int demos_k = 5;
  uint64_t demos_seed = 17;
  demos->add_option("--root", demos_root, "dataset root directory");
  demos->add_option("--split", demos_split, "dataset split name");
  demos->add_option("--k", demos_k, "cluster count");
  demos->add_option("--seed", demos_seed, "selection seed");
  demos->add_option("--method", demos_method, "leading-token|k-medoids");

  auto* run = app.add_subcommand("run", "run an experiment end to end");
  ConfigFlags run_flags;
  add_run_flags(run, run_flags);

  auto* grade = app.add_subcommand("grade", "grade an offline predictions file");
  std::string grade_root = ".", grade_split = "dev", grade_predictions, grade_out;
  grade->add_option("--root", grade_root, "dataset root directory");
  grade->add_option("--split", grade_split, "dataset split name");
  grade->add_option("--predictions", grade_predictions, "line-delimited {example_id, sql} file")
      ->required();
  grade->add_option("--out", grade_out, "directory for report files");

  auto* report = app.add_subcommand("report", "re-render a report from run.json");
  std::string report_run = "out/run.json", report_format = "md";
  report->add_option("--run", report_run, "run.json path");
  report->add_option("--format", report_format, "json|csv|md");

  auto* cache = app.add_subcommand("cache", "inspect or merge replay caches");
  cache->require_subcommand(1);
  auto* cache_inspect = cache->add_subcommand("inspect", "summarize one cache file");
  std::string cache_file;
  cache_inspect->add_option("file", cache_file, "cache file")->required();
  auto* cache_merge = cache->add_subcommand("merge", "merge caches, later files win on key clashes");
  std::vector<std::string> merge_inputs;
  std::string merge_out;
  cache_merge->add_option("inputs", merge_inputs, "cache files")->required();
  cache_merge->add_option("--out", merge_out, "merged cache path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (ingest->parsed()) return cmd_ingest(ingest_root, ingest_split);
    if (demos->parsed()) return cmd_demos(demos_root, demos_split, demos_k, demos_seed, demos_method);
    if (run->parsed()) return cmd_run(run_flags);
    if (grade->parsed()) return cmd_grade(grade_root, grade_split, grade_predictions, grade_out);
    if (report->parsed()) return cmd_report(report_run, report_format);
    if (cache->parsed()) {
      if (cache_inspect->parsed()) return cmd_cache_inspect(cache_file);
      if (cache_merge->parsed()) return cmd_cache_merge(merge_inputs, merge_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
