#include "dnp/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

using nlohmann::json;

namespace dnp::harness {

namespace {

std::string shot_key(prompts::ShotMode mode) {
  return mode == prompts::ShotMode::Few ? "few" : "zero";
}

prompts::ShotMode shot_from_key(const std::string& key) {
  if (key == "few") return prompts::ShotMode::Few;
  if (key == "zero") return prompts::ShotMode::Zero;
  throw ConfigError("unknown shot mode '" + key + "'");
}

std::string schema_style_key(dataset::SchemaStyle style) {
  return style == dataset::SchemaStyle::Compact ? "compact" : "ddl";
}

dataset::SchemaStyle schema_style_from_key(const std::string& key) {
  if (key == "compact") return dataset::SchemaStyle::Compact;
  if (key == "ddl") return dataset::SchemaStyle::Ddl;
  throw ConfigError("unknown schema style '" + key + "'");
}

double round1(double value) { return std::round(value * 10.0) / 10.0; }

std::string format1(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", value);
  return buf;
}

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base) {
  if (!j.is_object()) throw ConfigError("config document is not a JSON object");
  ExperimentConfig cfg = std::move(base);
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "dataset_root") cfg.dataset_root = value.get<std::string>();
      else if (key == "split") cfg.split = value.get<std::string>();
      else if (key == "strategy")
        cfg.strategy = prompts::strategy_kind_from_key(value.get<std::string>());
      else if (key == "clause_order")
        cfg.clause_order = prompts::clause_order_from_key(value.get<std::string>());
      else if (key == "link_granularity")
        cfg.granularity = prompts::granularity_from_key(value.get<std::string>());
      else if (key == "refine_stage1")
        cfg.refine_stage1 = prompts::strategy_kind_from_key(value.get<std::string>());
      else if (key == "shots") cfg.shot_mode = shot_from_key(value.get<std::string>());
      else if (key == "schema_style")
        cfg.schema_style = schema_style_from_key(value.get<std::string>());
      else if (key == "backend") cfg.backend = value.get<std::string>();
      else if (key == "model") cfg.model_name = value.get<std::string>();
      else if (key == "temperature") cfg.temperature = value.get<double>();
      else if (key == "top_p") cfg.top_p = value.get<double>();
      else if (key == "max_tokens") cfg.max_tokens = value.get<int>();
      else if (key == "base_url") cfg.base_url = value.get<std::string>();
      else if (key == "cache_file") cfg.cache_file = value.get<std::string>();
      else if (key == "mock_script") cfg.mock_script = value.get<std::string>();
      else if (key == "trials") cfg.trials = value.get<int>();
      else if (key == "demo_corpus") cfg.demo_corpus = value.get<std::string>();
      else if (key == "demo_k") cfg.demo_k = value.get<int>();
      else if (key == "demo_seed") cfg.demo_seed = value.get<uint64_t>();
      else if (key == "timeout_ms")
        cfg.limits.timeout = std::chrono::milliseconds(value.get<int64_t>());
      else if (key == "row_cap") cfg.limits.row_cap = value.get<size_t>();
      else if (key == "numeric_tolerance") cfg.limits.numeric_tolerance = value.get<double>();
      else if (key == "concurrency") cfg.concurrency = value.get<int>();
      else if (key == "max_examples") cfg.max_examples = value.get<int>();
      else if (key == "label") cfg.label = value.get<std::string>();
      else if (key == "output_dir") cfg.output_dir = value.get<std::string>();
      else throw ConfigError("unknown config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["dataset_root"] = cfg.dataset_root.string();
  j["split"] = cfg.split;
  j["strategy"] = prompts::strategy_key(cfg.strategy);
  j["clause_order"] = prompts::clause_order_key(cfg.clause_order);
  j["link_granularity"] = prompts::granularity_key(cfg.granularity);
  j["refine_stage1"] = prompts::strategy_key(cfg.refine_stage1);
  j["shots"] = shot_key(cfg.shot_mode);
  j["schema_style"] = schema_style_key(cfg.schema_style);
  j["backend"] = cfg.backend;
  j["model"] = cfg.model_name;
  j["temperature"] = cfg.temperature;
  j["top_p"] = cfg.top_p;
  j["max_tokens"] = cfg.max_tokens;
  j["base_url"] = cfg.base_url;
  j["cache_file"] = cfg.cache_file.string();
  j["mock_script"] = cfg.mock_script.string();
  j["trials"] = cfg.trials;
  j["demo_corpus"] = cfg.demo_corpus.string();
  j["demo_k"] = cfg.demo_k;
  j["demo_seed"] = cfg.demo_seed;
  j["timeout_ms"] = cfg.limits.timeout.count();
  j["row_cap"] = cfg.limits.row_cap;
  j["numeric_tolerance"] = cfg.limits.numeric_tolerance;
  j["concurrency"] = cfg.concurrency;
  if (cfg.max_examples) j["max_examples"] = *cfg.max_examples;
  j["label"] = cfg.label;
  j["output_dir"] = cfg.output_dir.string();
  return j;
}

std::shared_ptr<llm::CompletionBackend> build_backend(const ExperimentConfig& cfg) {
  std::shared_ptr<llm::CompletionBackend> inner;
  if (cfg.backend == "live") {
    llm::LiveConfig lc;
    lc.base_url = cfg.base_url;
    if (const char* key = std::getenv("DNP_API_KEY")) lc.api_key = key;
    if (lc.api_key.empty()) throw ConfigError("live backend needs DNP_API_KEY in the environment");
    inner = std::make_shared<llm::LiveBackend>(std::move(lc));
    if (!cfg.cache_file.empty())
      inner = std::make_shared<llm::RecordingBackend>(inner, cfg.cache_file);
  } else if (cfg.backend == "replay") {
    if (cfg.cache_file.empty()) throw ConfigError("replay backend needs cache_file");
    inner = llm::load_replay(cfg.cache_file);
  } else if (cfg.backend == "mock") {
    if (cfg.mock_script.empty()) throw ConfigError("mock backend needs mock_script");
    inner = llm::load_mock_script(cfg.mock_script);
  } else {
    throw ConfigError("unknown backend '" + cfg.backend + "'");
  }
  return std::make_shared<llm::ConcurrencyLimited>(inner, std::max(1, cfg.concurrency));
}

namespace {

exec::DbPaths db_paths_for(const dataset::Dataset& ds, const std::string& db_id) {
  exec::DbPaths paths;
  paths.original = ds.database_path(db_id).string();
  for (const auto& variant : ds.suite_paths(db_id)) paths.suite_variants.push_back(variant.string());
  return paths;
}

// Corpus entries used as few-shot demos. Small corpora (at most k entries)
// pass through whole; larger ones go through question clustering, mapping
// representatives back to their entries.
std::vector<prompts::DemoCorpusEntry> pick_corpus_entries(
    const std::vector<prompts::DemoCorpusEntry>& corpus, int k, uint64_t seed) {
  if (corpus.size() <= static_cast<size_t>(k)) return corpus;
  std::vector<prompts::QuestionEntry> questions;
  for (const auto& entry : corpus)
    questions.push_back(prompts::QuestionEntry{entry.question, entry.sql, entry.db_id});
  auto selected = prompts::select_demonstrations(questions, k, seed);
  std::vector<prompts::DemoCorpusEntry> out;
  for (const auto& rep : selected) {
    auto it = std::find_if(corpus.begin(), corpus.end(), [&](const prompts::DemoCorpusEntry& e) {
      return e.question == rep.question;
    });
    if (it != corpus.end()) out.push_back(*it);
  }
  return out;
}

std::vector<prompts::Demonstration> demos_for_kind(
    const std::vector<prompts::DemoCorpusEntry>& entries, prompts::StrategyKind kind) {
  std::vector<prompts::Demonstration> out;
  for (const auto& entry : entries) out.push_back(prompts::demo_for(entry, kind));
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << content;
}

}  // namespace

RunArtifact run_experiment(const ExperimentConfig& cfg) {
  return run_experiment(cfg, build_backend(cfg));
}

RunArtifact run_experiment(const ExperimentConfig& cfg,
                           std::shared_ptr<llm::CompletionBackend> backend) {
  if (cfg.trials < 1) throw ConfigError("trials must be at least 1");
  if (cfg.strategy == prompts::StrategyKind::GenerateRefine &&
      cfg.refine_stage1 == prompts::StrategyKind::GenerateRefine)
    throw ConfigError("refine_stage1 cannot be gr");

  auto started = std::chrono::steady_clock::now();
  dataset::Dataset ds = dataset::load_dataset(cfg.dataset_root, cfg.split);
  std::vector<dataset::DatasetExample> examples = ds.examples;
  if (cfg.max_examples && static_cast<size_t>(*cfg.max_examples) < examples.size())
    examples.resize(static_cast<size_t>(*cfg.max_examples));

  std::map<std::string, std::string> schema_texts;
  std::map<std::string, exec::DbPaths> db_paths;
  for (const auto& ex : examples) {
    if (schema_texts.count(ex.db_id)) continue;
    schema_texts[ex.db_id] = dataset::serialize_schema(ds.schemas.at(ex.db_id), cfg.schema_style);
    db_paths[ex.db_id] = db_paths_for(ds, ex.db_id);
  }

  bool is_gr = cfg.strategy == prompts::StrategyKind::GenerateRefine;
  prompts::StrategyKind stage1_kind = is_gr ? cfg.refine_stage1 : cfg.strategy;

  prompts::PromptStrategy build_strategy;
  build_strategy.kind = cfg.strategy;
  build_strategy.clause_order = cfg.clause_order;
  build_strategy.granularity = cfg.granularity;
  build_strategy.stage1 = cfg.refine_stage1;
  build_strategy.shot_mode = cfg.shot_mode;

  std::vector<prompts::Demonstration> refine_demos;
  if (cfg.shot_mode == prompts::ShotMode::Few) {
    auto corpus = prompts::load_demo_corpus(cfg.demo_corpus);
    auto entries = pick_corpus_entries(corpus, cfg.demo_k, cfg.demo_seed);
    build_strategy.demos = demos_for_kind(entries, stage1_kind);
    if (is_gr) refine_demos = demos_for_kind(entries, prompts::StrategyKind::GenerateRefine);
  }

  prompts::PromptStrategy stage1_parse = build_strategy;
  stage1_parse.kind = stage1_kind;
  prompts::PromptStrategy refine_parse = build_strategy;

  std::vector<std::string> stage1_prompts;
  stage1_prompts.reserve(examples.size());
  for (const auto& ex : examples)
    stage1_prompts.push_back(
        prompts::build_prompt(build_strategy, ex.question, schema_texts.at(ex.db_id)));

  size_t trials = static_cast<size_t>(cfg.trials);
  size_t units = examples.size() * trials;
  std::vector<TraceEntry> traces(units);

  auto complete_with_context = [&](const dataset::DatasetExample& ex, int trial,
                                   const std::string& prompt) {
    llm::CompletionRequest req;
    req.model_name = cfg.model_name;
    req.prompt = prompt;
    req.temperature = cfg.temperature;
    req.top_p = cfg.top_p;
    req.max_tokens = cfg.max_tokens;
    req.trial_index = trial;
    try {
      return backend->complete(req);
    } catch (const std::exception& e) {
      throw std::runtime_error(ex.example_id + " trial " + std::to_string(trial) + ": " +
                               e.what());
    }
  };

  auto run_unit = [&](size_t unit) {
    size_t pos = unit / trials;
    int trial = static_cast<int>(unit % trials);
    const auto& ex = examples[pos];

    TraceEntry trace;
    trace.example_id = ex.example_id;
    trace.example_index = ex.index;
    trace.trial_index = trial;
    trace.prompt = stage1_prompts[pos];
    trace.response = complete_with_context(ex, trial, trace.prompt);

    std::string sql;
    try {
      sql = prompts::parse_response(stage1_parse, trace.response).final_sql;
    } catch (const prompts::NoSqlFound&) {
      trace.parse_error = is_gr ? "stage 1: no SQL found in response" : "no SQL found in response";
    }

    if (is_gr && !sql.empty()) {
      trace.stage1_sql = sql;
      trace.refine_prompt = prompts::build_refine_prompt(
          ex.question, schema_texts.at(ex.db_id), sql, cfg.shot_mode, refine_demos);
      trace.refine_response = complete_with_context(ex, trial, *trace.refine_prompt);
      try {
        sql = prompts::parse_response(refine_parse, *trace.refine_response).final_sql;
      } catch (const prompts::NoSqlFound&) {
        trace.parse_error = "stage 2: no SQL found in response";
        sql.clear();
      }
    }

    trace.outcome = exec::evaluate_example(ex, sql, db_paths.at(ex.db_id), cfg.limits);
    return trace;
  };

  std::atomic<size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      if (failed.load()) return;
      size_t unit = next.fetch_add(1);
      if (unit >= units) return;
      try {
        traces[unit] = run_unit(unit);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };

  size_t thread_count = std::min<size_t>(static_cast<size_t>(std::max(1, cfg.concurrency)),
                                         std::max<size_t>(units, 1));
  std::vector<std::thread> pool;
  for (size_t t = 0; t < thread_count; ++t) pool.emplace_back(worker);
  for (auto& thread : pool) thread.join();
  if (first_error) std::rethrow_exception(first_error);

  std::vector<std::vector<exec::ExampleOutcome>> per_trial(trials);
  for (size_t unit = 0; unit < units; ++unit)
    per_trial[unit % trials].push_back(traces[unit].outcome);

  RunArtifact artifact;
  artifact.config_snapshot = config_to_json(cfg);
  artifact.traces = std::move(traces);
  std::string label = cfg.label.empty() ? prompts::strategy_label(build_strategy) : cfg.label;
  artifact.report = exec::aggregate(per_trial, label);
  artifact.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return artifact;
}

exec::AggregateReport evaluate_offline(const dataset::Dataset& ds,
                                       const std::filesystem::path& predictions,
                                       const exec::Limits& limits) {
  std::ifstream in(predictions);
  if (!in) throw dataset::MissingFile(predictions);

  std::map<std::string, std::string> by_id;
  std::string line;
  size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw dataset::MalformedRecord(line_number, e.what());
    }
    if (!j.is_object() || !j.contains("example_id") || !j["example_id"].is_string() ||
        !j.contains("sql") || !j["sql"].is_string())
      throw dataset::MalformedRecord(line_number, "prediction needs string example_id and sql");
    by_id[j["example_id"].get<std::string>()] = j["sql"].get<std::string>();
  }

  std::map<std::string, const dataset::DatasetExample*> known;
  for (const auto& ex : ds.examples) known[ex.example_id] = &ex;
  for (const auto& [id, sql] : by_id)
    if (!known.count(id)) throw UnknownExampleId(id);

  std::vector<exec::ExampleOutcome> outcomes;
  for (const auto& ex : ds.examples) {
    auto it = by_id.find(ex.example_id);
    if (it == by_id.end()) throw MissingPrediction(ex.example_id);
    std::string sql = sqlkit::normalize_sql(it->second);
    outcomes.push_back(exec::evaluate_example(ex, sql, db_paths_for(ds, ex.db_id), limits));
  }
  return exec::aggregate({outcomes}, "offline");
}

namespace {

const char* tier_key(int tier) {
  switch (tier) {
    case 0: return "easy";
    case 1: return "medium";
    case 2: return "hard";
    case 3: return "extra";
  }
  return "all";
}

json cell_to_json(const exec::MetricCell& cell) {
  json j = json::object();
  if (cell.va) j["va"] = round1(*cell.va);
  if (cell.ex) j["ex"] = round1(*cell.ex);
  if (cell.ts) j["ts"] = round1(*cell.ts);
  return j;
}

exec::MetricCell cell_from_json(const json& j) {
  exec::MetricCell cell;
  if (j.contains("va")) cell.va = j["va"].get<double>();
  if (j.contains("ex")) cell.ex = j["ex"].get<double>();
  if (j.contains("ts")) cell.ts = j["ts"].get<double>();
  return cell;
}

json counts_to_json(const exec::TierCounts& counts) {
  return json{{"counted", counts.counted},     {"valid", counts.valid},
              {"exec_match", counts.exec_match}, {"ts_covered", counts.ts_covered},
              {"ts_match", counts.ts_match},   {"skipped", counts.skipped}};
}

exec::TierCounts counts_from_json(const json& j) {
  exec::TierCounts counts;
  counts.counted = j.value("counted", 0);
  counts.valid = j.value("valid", 0);
  counts.exec_match = j.value("exec_match", 0);
  counts.ts_covered = j.value("ts_covered", 0);
  counts.ts_match = j.value("ts_match", 0);
  counts.skipped = j.value("skipped", 0);
  return counts;
}

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\n") == std::string::npos) return value;
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

std::string cell_text(const std::optional<double>& value) {
  return value ? format1(round1(*value)) : "-";
}

}  // namespace

nlohmann::json report_to_json(const exec::AggregateReport& report) {
  json strategies = json::array();
  for (const auto& strategy : report.strategies) {
    json mean;
    mean["all"] = cell_to_json(strategy.mean_all);
    for (int tier = 0; tier < 4; ++tier)
      mean[tier_key(tier)] = cell_to_json(strategy.mean_by_tier[tier]);

    json trials = json::array();
    for (const auto& trial : strategy.trials) {
      json t;
      t["all"] = counts_to_json(trial.all);
      for (int tier = 0; tier < 4; ++tier) t[tier_key(tier)] = counts_to_json(trial.by_tier[tier]);
      trials.push_back(std::move(t));
    }

    strategies.push_back(json{{"label", strategy.label},
                              {"trial_count", strategy.trial_count},
                              {"mean", std::move(mean)},
                              {"trials", std::move(trials)}});
  }
  return json{{"strategies", std::move(strategies)}};
}

exec::AggregateReport report_from_json(const nlohmann::json& j) {
  exec::AggregateReport report;
  if (!j.is_object() || !j.contains("strategies") || !j["strategies"].is_array())
    throw ConfigError("report document has no strategies array");
  for (const auto& s : j["strategies"]) {
    exec::StrategyAggregate agg;
    agg.label = s.value("label", "");
    agg.trial_count = s.value("trial_count", 0);
    if (s.contains("mean")) {
      const auto& mean = s["mean"];
      if (mean.contains("all")) agg.mean_all = cell_from_json(mean["all"]);
      for (int tier = 0; tier < 4; ++tier)
        if (mean.contains(tier_key(tier))) agg.mean_by_tier[tier] = cell_from_json(mean[tier_key(tier)]);
    }
    if (s.contains("trials")) {
      for (const auto& t : s["trials"]) {
        exec::TrialMetrics metrics;
        if (t.contains("all")) metrics.all = counts_from_json(t["all"]);
        for (int tier = 0; tier < 4; ++tier)
          if (t.contains(tier_key(tier))) metrics.by_tier[tier] = counts_from_json(t[tier_key(tier)]);
        agg.trials.push_back(metrics);
      }
    }
    report.strategies.push_back(std::move(agg));
  }
  return report;
}

std::string render_report(const exec::AggregateReport& report, ReportFormat format) {
  if (format == ReportFormat::Json) return report_to_json(report).dump(2) + "\n";

  if (format == ReportFormat::Csv) {
    std::string out = "strategy,tier,counted,va,ex,ts\n";
    for (const auto& strategy : report.strategies) {
      const exec::TrialMetrics* counts =
          strategy.trials.empty() ? nullptr : &strategy.trials.front();
      auto row = [&](const std::string& tier, const exec::MetricCell& cell, int counted) {
        out += csv_field(strategy.label) + "," + tier + "," + std::to_string(counted) + ",";
        out += (cell.va ? format1(round1(*cell.va)) : "") + std::string(",");
        out += (cell.ex ? format1(round1(*cell.ex)) : "") + std::string(",");
        out += (cell.ts ? format1(round1(*cell.ts)) : "");
        out += "\n";
      };
      row("all", strategy.mean_all, counts ? counts->all.counted : 0);
      for (int tier = 0; tier < 4; ++tier)
        row(tier_key(tier), strategy.mean_by_tier[tier],
            counts ? counts->by_tier[tier].counted : 0);
    }
    return out;
  }

  // Markdown: overall table in Table 1 shape, difficulty table in Table 2
  // shape (execution accuracy per tier).
  std::string out = "# Results\n\n## Overall\n\n";
  out += "Methods | VA | EX | TS\n--- | --- | --- | ---\n";
  for (const auto& strategy : report.strategies) {
    out += strategy.label + " | " + cell_text(strategy.mean_all.va) + " | " +
           cell_text(strategy.mean_all.ex) + " | " + cell_text(strategy.mean_all.ts) + "\n";
  }
  out += "\n## Execution accuracy by difficulty\n\n";
  out += "Prompts | Easy | Medium | Hard | Extra | all\n--- | --- | --- | --- | --- | ---\n";
  for (const auto& strategy : report.strategies) {
    out += strategy.label;
    for (int tier = 0; tier < 4; ++tier)
      out += " | " + cell_text(strategy.mean_by_tier[tier].ex);
    out += " | " + cell_text(strategy.mean_all.ex) + "\n";
  }
  return out;
}

nlohmann::json trace_to_json(const TraceEntry& trace) {
  json j;
  j["example_id"] = trace.example_id;
  j["example_index"] = trace.example_index;
  j["trial_index"] = trace.trial_index;
  j["prompt"] = trace.prompt;
  j["response"] = trace.response;
  if (trace.stage1_sql) j["stage1_sql"] = *trace.stage1_sql;
  if (trace.refine_prompt) j["refine_prompt"] = *trace.refine_prompt;
  if (trace.refine_response) j["refine_response"] = *trace.refine_response;
  if (trace.parse_error) j["parse_error"] = *trace.parse_error;

  json outcome;
  outcome["predicted_sql"] = trace.outcome.predicted_sql;
  outcome["valid"] = trace.outcome.valid;
  outcome["execution_match"] = trace.outcome.execution_match;
  if (trace.outcome.test_suite_match) outcome["test_suite_match"] = *trace.outcome.test_suite_match;
  outcome["difficulty"] = sqlkit::difficulty_name(trace.outcome.difficulty);
  if (trace.outcome.error) outcome["error"] = *trace.outcome.error;
  outcome["gold_skipped"] = trace.outcome.gold_skipped;
  j["outcome"] = std::move(outcome);
  return j;
}

TraceEntry trace_from_json(const nlohmann::json& j) {
  TraceEntry trace;
  try {
    trace.example_id = j.at("example_id").get<std::string>();
    trace.example_index = j.at("example_index").get<int>();
    trace.trial_index = j.at("trial_index").get<int>();
    trace.prompt = j.at("prompt").get<std::string>();
    trace.response = j.at("response").get<std::string>();
    if (j.contains("stage1_sql")) trace.stage1_sql = j["stage1_sql"].get<std::string>();
    if (j.contains("refine_prompt")) trace.refine_prompt = j["refine_prompt"].get<std::string>();
    if (j.contains("refine_response"))
      trace.refine_response = j["refine_response"].get<std::string>();
    if (j.contains("parse_error")) trace.parse_error = j["parse_error"].get<std::string>();

    const auto& outcome = j.at("outcome");
    trace.outcome.example_id = trace.example_id;
    trace.outcome.example_index = trace.example_index;
    trace.outcome.predicted_sql = outcome.at("predicted_sql").get<std::string>();
    trace.outcome.valid = outcome.at("valid").get<bool>();
    trace.outcome.execution_match = outcome.at("execution_match").get<bool>();
    if (outcome.contains("test_suite_match"))
      trace.outcome.test_suite_match = outcome["test_suite_match"].get<bool>();
    auto difficulty = sqlkit::difficulty_from_name(outcome.at("difficulty").get<std::string>());
    if (!difficulty) throw ConfigError("trace carries an unknown difficulty name");
    trace.outcome.difficulty = *difficulty;
    if (outcome.contains("error")) trace.outcome.error = outcome["error"].get<std::string>();
    trace.outcome.gold_skipped = outcome.at("gold_skipped").get<bool>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad trace record: ") + e.what());
  }
  return trace;
}

exec::AggregateReport report_from_traces(const std::vector<TraceEntry>& traces,
                                         const std::string& label) {
  std::map<int, std::vector<const TraceEntry*>> by_trial;
  for (const auto& trace : traces) by_trial[trace.trial_index].push_back(&trace);

  std::vector<std::vector<exec::ExampleOutcome>> per_trial;
  for (auto& [trial, entries] : by_trial) {
    std::sort(entries.begin(), entries.end(), [](const TraceEntry* a, const TraceEntry* b) {
      return a->example_index < b->example_index;
    });
    std::vector<exec::ExampleOutcome> outcomes;
    for (const auto* entry : entries) outcomes.push_back(entry->outcome);
    per_trial.push_back(std::move(outcomes));
  }
  exec::AggregateReport report;
  report.strategies.push_back(exec::aggregate_strategy(label, per_trial));
  return report;
}

void write_run_outputs(const RunArtifact& artifact, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);

  write_text_file(out_dir / "report.json", render_report(artifact.report, ReportFormat::Json));
  write_text_file(out_dir / "report.csv", render_report(artifact.report, ReportFormat::Csv));
  write_text_file(out_dir / "report.md", render_report(artifact.report, ReportFormat::Markdown));

  std::string trace_lines;
  for (const auto& trace : artifact.traces) trace_lines += trace_to_json(trace).dump() + "\n";
  write_text_file(out_dir / "trace.jsonl", trace_lines);

  json run;
  run["config"] = artifact.config_snapshot;
  run["report"] = report_to_json(artifact.report);
  run["trace_file"] = "trace.jsonl";
  run["trace_count"] = artifact.traces.size();
  run["wall_seconds"] = artifact.wall_seconds;
  write_text_file(out_dir / "run.json", run.dump(2) + "\n");
}

}  // namespace dnp::harness
