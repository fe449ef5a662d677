#include "dnp/harness.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "support/fixture_env.hpp"

using namespace dnp;
using namespace dnp::harness;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

ExperimentConfig base_config(const fs::path& root, const std::string& split) {
  ExperimentConfig cfg;
  cfg.dataset_root = root;
  cfg.split = split;
  cfg.shot_mode = prompts::ShotMode::Zero;
  cfg.trials = 1;
  cfg.concurrency = 3;
  cfg.demo_corpus = fixture::data_dir() / "demonstrations.json";
  return cfg;
}

std::shared_ptr<llm::MockBackend> gold_echo_backend(const dataset::Dataset& ds) {
  auto mock = std::make_shared<llm::MockBackend>();
  fixture::add_gold_echo_rules(*mock, ds);
  return mock;
}

}  // namespace

TEST_CASE("config_from_json overlays known keys only") {
  ExperimentConfig defaults = config_from_json(json::object());
  CHECK(defaults.split == "dev");
  CHECK(defaults.strategy == prompts::StrategyKind::Standard);
  CHECK(defaults.trials == 3);
  CHECK(defaults.backend == "mock");

  json overlay = {{"strategy", "gr"},        {"refine_stage1", "cot"},
                  {"shots", "zero"},         {"schema_style", "ddl"},
                  {"trials", 2},             {"temperature", 0.7},
                  {"clause_order", "select-first"},
                  {"link_granularity", "exact"},
                  {"timeout_ms", 1234},      {"row_cap", 42},
                  {"max_examples", 7},       {"label", "mine"}};
  ExperimentConfig cfg = config_from_json(overlay);
  CHECK(cfg.strategy == prompts::StrategyKind::GenerateRefine);
  CHECK(cfg.refine_stage1 == prompts::StrategyKind::NormalCoT);
  CHECK(cfg.shot_mode == prompts::ShotMode::Zero);
  CHECK(cfg.schema_style == dataset::SchemaStyle::Ddl);
  CHECK(cfg.trials == 2);
  CHECK(cfg.temperature == 0.7);
  CHECK(cfg.clause_order == prompts::ClauseOrder::SelectFirst);
  CHECK(cfg.granularity == prompts::LinkGranularity::ExactTablesAndColumns);
  CHECK(cfg.limits.timeout.count() == 1234);
  CHECK(cfg.limits.row_cap == 42);
  REQUIRE(cfg.max_examples.has_value());
  CHECK(*cfg.max_examples == 7);
  CHECK(cfg.label == "mine");

  CHECK_THROWS_AS(config_from_json({{"tempersture", 0.7}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"strategy", "mystery"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"trials", "three"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"shots", "many"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::array()), ConfigError);
}

TEST_CASE("config serialization roundtrips") {
  ExperimentConfig cfg;
  cfg.dataset_root = "/tmp/spider";
  cfg.split = "mini20";
  cfg.strategy = prompts::StrategyKind::SchemaLinking;
  cfg.granularity = prompts::LinkGranularity::TablesThenColumns;
  cfg.shot_mode = prompts::ShotMode::Zero;
  cfg.schema_style = dataset::SchemaStyle::Ddl;
  cfg.backend = "replay";
  cfg.cache_file = "cache.jsonl";
  cfg.trials = 5;
  cfg.demo_seed = 99;
  cfg.limits.timeout = std::chrono::milliseconds(4500);
  cfg.limits.row_cap = 77;
  cfg.limits.numeric_tolerance = 1e-3;
  cfg.concurrency = 9;
  cfg.max_examples = 3;
  cfg.label = "SL mini";
  cfg.output_dir = "out/sl";

  json j = config_to_json(cfg);
  ExperimentConfig back = config_from_json(j);
  CHECK(config_to_json(back) == j);
}

TEST_CASE("load_config reads a config file") {
  auto dir = fixture::fresh_dir("config");
  auto path = dir / "run.json";
  fixture::write_file(path, R"({"strategy": "cc", "trials": 1})");
  ExperimentConfig cfg = load_config(path);
  CHECK(cfg.strategy == prompts::StrategyKind::ClauseByClause);
  CHECK(cfg.trials == 1);

  CHECK_THROWS_AS(load_config(dir / "absent.json"), ConfigError);
  fixture::write_file(path, "{ broken");
  CHECK_THROWS_AS(load_config(path), ConfigError);
}

TEST_CASE("build_backend wires each backend kind") {
  ExperimentConfig cfg;

  cfg.backend = "nope";
  CHECK_THROWS_AS(build_backend(cfg), ConfigError);

  cfg.backend = "replay";
  cfg.cache_file.clear();
  CHECK_THROWS_AS(build_backend(cfg), ConfigError);

  cfg.backend = "mock";
  cfg.mock_script.clear();
  CHECK_THROWS_AS(build_backend(cfg), ConfigError);

  auto dir = fixture::fresh_dir("backend");
  fixture::write_file(dir / "script.json", R"({"default": "SQL: SELECT 1"})");
  cfg.mock_script = dir / "script.json";
  auto mock = build_backend(cfg);
  llm::CompletionRequest req;
  req.model_name = "m";
  req.prompt = "anything";
  CHECK(mock->complete(req) == "SQL: SELECT 1");

  cfg.backend = "live";
  unsetenv("DNP_API_KEY");
  CHECK_THROWS_AS(build_backend(cfg), ConfigError);
  setenv("DNP_API_KEY", "sk-test", 1);
  CHECK_NOTHROW(build_backend(cfg));
  unsetenv("DNP_API_KEY");
}

TEST_CASE("run_experiment grades a gold-echo mock run perfectly") {
  auto root = fixture::spider_root("run_basic");
  auto ds = dataset::load_dataset(root, "dev");
  auto cfg = base_config(root, "dev");
  cfg.trials = 2;

  auto mock = gold_echo_backend(ds);
  RunArtifact artifact = run_experiment(cfg, mock);

  REQUIRE(artifact.traces.size() == 10);
  CHECK(mock->calls() == 10);
  CHECK(artifact.wall_seconds >= 0.0);
  CHECK(artifact.config_snapshot == config_to_json(cfg));

  // traces arrive ordered by example, then trial
  CHECK(artifact.traces[0].example_index == 0);
  CHECK(artifact.traces[0].trial_index == 0);
  CHECK(artifact.traces[1].example_index == 0);
  CHECK(artifact.traces[1].trial_index == 1);
  CHECK(artifact.traces[2].example_index == 1);
  CHECK(artifact.traces.back().example_index == 4);
  CHECK(artifact.traces.back().trial_index == 1);

  for (const auto& trace : artifact.traces) {
    CHECK(trace.prompt.rfind("### Task\n", 0) == 0);
    CHECK(trace.response.rfind("SQL: ", 0) == 0);
    CHECK(!trace.parse_error.has_value());
    CHECK(trace.outcome.valid);
    CHECK(trace.outcome.execution_match);
  }

  REQUIRE(artifact.report.strategies.size() == 1);
  const auto& agg = artifact.report.strategies[0];
  CHECK(agg.label == "Standard");
  CHECK(agg.trial_count == 2);
  CHECK(*agg.mean_all.va == doctest::Approx(100.0));
  CHECK(*agg.mean_all.ex == doctest::Approx(100.0));
  CHECK(*agg.mean_all.ts == doctest::Approx(100.0));

  // traces alone reconstruct the same report
  auto rebuilt = report_from_traces(artifact.traces, agg.label);
  CHECK(report_to_json(rebuilt) == report_to_json(artifact.report));
}

TEST_CASE("few-shot runs prepend corpus demonstrations") {
  auto root = fixture::spider_root("run_fewshot");
  auto ds = dataset::load_dataset(root, "dev");
  auto cfg = base_config(root, "dev");
  cfg.strategy = prompts::StrategyKind::ClauseByClause;
  cfg.shot_mode = prompts::ShotMode::Few;
  cfg.label = "CC few";

  RunArtifact artifact = run_experiment(cfg, gold_echo_backend(ds));
  for (const auto& trace : artifact.traces) {
    CHECK(trace.prompt.rfind("### Example 1\n", 0) == 0);
    CHECK(trace.prompt.find("### Example 5\n") != std::string::npos);
    CHECK(trace.prompt.find("### Task\n") != std::string::npos);
  }
  CHECK(artifact.report.strategies[0].label == "CC few");
  CHECK(*artifact.report.strategies[0].mean_all.ex == doctest::Approx(100.0));
}

TEST_CASE("generate-refine runs both stages") {
  auto root = fixture::spider_root("run_gr");
  auto ds = dataset::load_dataset(root, "dev");
  auto cfg = base_config(root, "dev");
  cfg.strategy = prompts::StrategyKind::GenerateRefine;
  cfg.refine_stage1 = prompts::StrategyKind::Standard;

  RunArtifact artifact = run_experiment(cfg, gold_echo_backend(ds));
  for (const auto& trace : artifact.traces) {
    CHECK(trace.prompt.find("Initial SQL:") == std::string::npos);
    REQUIRE(trace.stage1_sql.has_value());
    REQUIRE(trace.refine_prompt.has_value());
    REQUIRE(trace.refine_response.has_value());
    CHECK(trace.refine_prompt->find("Initial SQL: " + *trace.stage1_sql + "\n") !=
          std::string::npos);
    CHECK(trace.outcome.execution_match);
  }
  CHECK(artifact.report.strategies[0].label == "GR-DnP");

  cfg.refine_stage1 = prompts::StrategyKind::GenerateRefine;
  CHECK_THROWS_AS(run_experiment(cfg, gold_echo_backend(ds)), ConfigError);
}

TEST_CASE("responses without SQL are graded invalid") {
  auto root = fixture::spider_root("run_nosql");
  auto ds = dataset::load_dataset(root, "dev");
  auto cfg = base_config(root, "dev");

  auto mock = std::make_shared<llm::MockBackend>();
  mock->add_contains_rule("Question: " + ds.examples[1].question + "\n", "I have no idea.");
  fixture::add_gold_echo_rules(*mock, ds);

  RunArtifact artifact = run_experiment(cfg, mock);
  const auto& trace = artifact.traces[1];
  CHECK(trace.example_index == 1);
  REQUIRE(trace.parse_error.has_value());
  CHECK(*trace.parse_error == "no SQL found in response");
  CHECK(trace.outcome.predicted_sql.empty());
  CHECK(!trace.outcome.valid);

  CHECK(*artifact.report.strategies[0].mean_all.va == doctest::Approx(80.0));
  CHECK(*artifact.report.strategies[0].mean_all.ex == doctest::Approx(80.0));
}

TEST_CASE("max_examples truncates the split") {
  auto root = fixture::spider_root("run_trunc");
  auto ds = dataset::load_dataset(root, "dev");
  auto cfg = base_config(root, "dev");
  cfg.max_examples = 2;

  RunArtifact artifact = run_experiment(cfg, gold_echo_backend(ds));
  CHECK(artifact.traces.size() == 2);
  CHECK(artifact.report.strategies[0].trials[0].all.counted == 2);

  cfg.trials = 0;
  CHECK_THROWS_AS(run_experiment(cfg, gold_echo_backend(ds)), ConfigError);
}

TEST_CASE("recorded runs replay into identical reports") {
  auto root = fixture::spider_root("run_replay");
  auto ds = dataset::load_dataset(root, "dev");
  auto cfg = base_config(root, "dev");
  auto cache = fixture::fresh_dir("replay_cache") / "cache.jsonl";

  RunArtifact recorded = fixture::record_run(cfg, gold_echo_backend(ds), cache);

  auto replay_cfg = cfg;
  replay_cfg.backend = "replay";
  replay_cfg.cache_file = cache;
  RunArtifact replayed = run_experiment(replay_cfg);

  CHECK(report_to_json(replayed.report) == report_to_json(recorded.report));
  REQUIRE(replayed.traces.size() == recorded.traces.size());
  for (size_t i = 0; i < replayed.traces.size(); ++i) {
    CHECK(replayed.traces[i].prompt == recorded.traces[i].prompt);
    CHECK(replayed.traces[i].response == recorded.traces[i].response);
  }

  // a request the cache has never seen fails loudly
  replay_cfg.split = "mini20";
  CHECK_THROWS_WITH_AS(run_experiment(replay_cfg),
                       doctest::Contains("replay cache has no record"), std::runtime_error);
}

TEST_CASE("evaluate_offline grades gold predictions perfectly") {
  auto root = fixture::spider_root("offline_gold");
  auto ds = dataset::load_dataset(root, "grade10");

  auto dir = fixture::fresh_dir("offline");
  auto path = dir / "preds.jsonl";
  std::string lines;
  for (const auto& ex : ds.examples)
    lines += json{{"example_id", ex.example_id}, {"sql", ex.gold_sql}}.dump() + "\n";
  fixture::write_file(path, lines);

  auto report = evaluate_offline(ds, path);
  REQUIRE(report.strategies.size() == 1);
  CHECK(report.strategies[0].label == "offline");
  CHECK(report.strategies[0].trial_count == 1);
  CHECK(*report.strategies[0].mean_all.va == doctest::Approx(100.0));
  CHECK(*report.strategies[0].mean_all.ex == doctest::Approx(100.0));
  CHECK(*report.strategies[0].mean_all.ts == doctest::Approx(100.0));
}

TEST_CASE("evaluate_offline matches the hand-graded fixture") {
  auto root = fixture::spider_root("offline_fixture");
  auto ds = dataset::load_dataset(root, "grade10");
  auto report = evaluate_offline(ds, fixture::dir() / "predictions_grade10.jsonl");

  const auto& agg = report.strategies[0];
  CHECK(*agg.mean_all.va == doctest::Approx(90.0));
  CHECK(*agg.mean_all.ex == doctest::Approx(70.0));
  CHECK(*agg.mean_all.ts == doctest::Approx(70.0));

  const auto& counts = agg.trials[0];
  CHECK(counts.by_tier[0].counted == 4);
  CHECK(counts.by_tier[1].counted == 3);
  CHECK(counts.by_tier[2].counted == 2);
  CHECK(counts.by_tier[3].counted == 1);

  CHECK(*agg.mean_by_tier[0].ex == doctest::Approx(100.0));
  CHECK(*agg.mean_by_tier[1].ex == doctest::Approx(100.0 * 2 / 3));
  CHECK(*agg.mean_by_tier[2].ex == doctest::Approx(50.0));
  CHECK(*agg.mean_by_tier[3].ex == doctest::Approx(0.0));
}

TEST_CASE("evaluate_offline rejects incomplete or unknown predictions") {
  auto root = fixture::spider_root("offline_errors");
  auto ds = dataset::load_dataset(root, "dev");
  auto dir = fixture::fresh_dir("offline_bad");
  auto path = dir / "preds.jsonl";

  CHECK_THROWS_AS(evaluate_offline(ds, dir / "absent.jsonl"), dataset::MissingFile);

  std::string all_but_one;
  for (size_t i = 0; i + 1 < ds.examples.size(); ++i)
    all_but_one +=
        json{{"example_id", ds.examples[i].example_id}, {"sql", ds.examples[i].gold_sql}}.dump() +
        "\n";
  fixture::write_file(path, all_but_one);
  CHECK_THROWS_AS(evaluate_offline(ds, path), MissingPrediction);

  std::string with_ghost = all_but_one;
  with_ghost += json{{"example_id", "dev:99"}, {"sql", "SELECT 1"}}.dump() + "\n";
  fixture::write_file(path, with_ghost);
  CHECK_THROWS_AS(evaluate_offline(ds, path), UnknownExampleId);

  fixture::write_file(path, "{ bad line\n");
  CHECK_THROWS_AS(evaluate_offline(ds, path), dataset::MalformedRecord);
  fixture::write_file(path, R"({"example_id": "dev:0"})"
                                "\n");
  CHECK_THROWS_AS(evaluate_offline(ds, path), dataset::MalformedRecord);
}

TEST_CASE("evaluate_offline keeps the last prediction per example") {
  auto root = fixture::spider_root("offline_dup");
  auto ds = dataset::load_dataset(root, "dev");
  auto dir = fixture::fresh_dir("offline_dup");
  auto path = dir / "preds.jsonl";

  std::string lines;
  lines += json{{"example_id", ds.examples[0].example_id}, {"sql", "SELECT 1 FROM singer"}}.dump() +
           "\n";
  for (const auto& ex : ds.examples)
    lines += json{{"example_id", ex.example_id}, {"sql", ex.gold_sql}}.dump() + "\n";
  fixture::write_file(path, lines);

  auto report = evaluate_offline(ds, path);
  CHECK(*report.strategies[0].mean_all.ex == doctest::Approx(100.0));
}

TEST_CASE("render_report emits stable header-only documents when empty") {
  exec::AggregateReport empty;
  CHECK(render_report(empty, ReportFormat::Csv) == "strategy,tier,counted,va,ex,ts\n");
  CHECK(render_report(empty, ReportFormat::Markdown) ==
        "# Results\n\n## Overall\n\n"
        "Methods | VA | EX | TS\n--- | --- | --- | ---\n"
        "\n## Execution accuracy by difficulty\n\n"
        "Prompts | Easy | Medium | Hard | Extra | all\n--- | --- | --- | --- | --- | ---\n");
  CHECK(render_report(empty, ReportFormat::Json) == json{{"strategies", json::array()}}.dump(2) + "\n");
}

TEST_CASE("render_report formats the hand-graded fixture") {
  auto root = fixture::spider_root("render_fixture");
  auto ds = dataset::load_dataset(root, "grade10");
  auto report = evaluate_offline(ds, fixture::dir() / "predictions_grade10.jsonl");

  std::string md = render_report(report, ReportFormat::Markdown);
  CHECK(md.find("offline | 90.0 | 70.0 | 70.0\n") != std::string::npos);
  CHECK(md.find("offline | 100.0 | 66.7 | 50.0 | 0.0 | 70.0\n") != std::string::npos);

  CHECK(render_report(report, ReportFormat::Csv) ==
        "strategy,tier,counted,va,ex,ts\n"
        "offline,all,10,90.0,70.0,70.0\n"
        "offline,easy,4,100.0,100.0,100.0\n"
        "offline,medium,3,100.0,66.7,66.7\n"
        "offline,hard,2,100.0,50.0,50.0\n"
        "offline,extra,1,0.0,0.0,0.0\n");

  // report json roundtrips through its own serialization
  auto back = report_from_json(report_to_json(report));
  CHECK(report_to_json(back) == report_to_json(report));
  CHECK_THROWS_AS(report_from_json(json::object()), ConfigError);
}

TEST_CASE("traces roundtrip through json") {
  auto root = fixture::spider_root("trace_roundtrip");
  auto ds = dataset::load_dataset(root, "dev");
  auto cfg = base_config(root, "dev");
  cfg.strategy = prompts::StrategyKind::GenerateRefine;

  RunArtifact artifact = run_experiment(cfg, gold_echo_backend(ds));
  for (const auto& trace : artifact.traces) {
    TraceEntry back = trace_from_json(trace_to_json(trace));
    CHECK(trace_to_json(back) == trace_to_json(trace));
    CHECK(back.outcome.example_id == trace.example_id);
  }

  CHECK_THROWS_AS(trace_from_json(json::object()), ConfigError);
  json bad = trace_to_json(artifact.traces[0]);
  bad["outcome"]["difficulty"] = "impossible";
  CHECK_THROWS_AS(trace_from_json(bad), ConfigError);
}

TEST_CASE("write_run_outputs persists the full artifact") {
  auto root = fixture::spider_root("outputs");
  auto ds = dataset::load_dataset(root, "dev");
  auto cfg = base_config(root, "dev");
  cfg.trials = 2;

  RunArtifact artifact = run_experiment(cfg, gold_echo_backend(ds));
  auto out_dir = fixture::fresh_dir("outputs") / "run1";
  write_run_outputs(artifact, out_dir);

  for (const char* name : {"report.json", "report.csv", "report.md", "trace.jsonl", "run.json"})
    CHECK_MESSAGE(fs::exists(out_dir / name), name);

  CHECK(fixture::read_file(out_dir / "report.json") ==
        render_report(artifact.report, ReportFormat::Json));

  std::ifstream traces(out_dir / "trace.jsonl");
  size_t lines = 0;
  std::string line;
  std::vector<TraceEntry> parsed;
  while (std::getline(traces, line)) {
    ++lines;
    parsed.push_back(trace_from_json(json::parse(line)));
  }
  CHECK(lines == artifact.traces.size());
  CHECK(report_to_json(report_from_traces(parsed, "Standard")) ==
        report_to_json(artifact.report));

  json run = json::parse(fixture::read_file(out_dir / "run.json"));
  CHECK(run["config"] == artifact.config_snapshot);
  CHECK(run["trace_count"] == artifact.traces.size());
  CHECK(run["report"] == report_to_json(artifact.report));
}
