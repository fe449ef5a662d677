#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dnp/sqlkit.hpp"

namespace dnp::prompts {

enum class StrategyKind { Standard, NormalCoT, ClauseByClause, SchemaLinking, GenerateRefine };

enum class ClauseOrder { SelectFirst, FromFirst, SelectLast };

enum class LinkGranularity { ExactTablesAndColumns, TablesThenColumns, TablesWithAllColumns };

enum class ShotMode { Zero, Few };

struct Demonstration {
  std::string question;
  std::string db_id;
  std::string sql;
  std::string schema_text;             // rendered schema of the demo's own database
  std::vector<std::string> reasoning;  // steps for the active strategy; empty for Standard

  bool operator==(const Demonstration&) const = default;
};

/// Full strategy descriptor. clause_order applies to ClauseByClause,
/// granularity to SchemaLinking; for GenerateRefine both describe the
/// stage-1 strategy named by stage1.
struct PromptStrategy {
  StrategyKind kind = StrategyKind::Standard;
  ClauseOrder clause_order = ClauseOrder::SelectLast;
  LinkGranularity granularity = LinkGranularity::TablesWithAllColumns;
  StrategyKind stage1 = StrategyKind::Standard;  // GenerateRefine only, never GenerateRefine
  ShotMode shot_mode = ShotMode::Zero;
  std::vector<Demonstration> demos;
};

struct ParsedResponse {
  std::string final_sql;
  std::optional<std::vector<std::string>> linked_schema;  // SchemaLinking step 1, informational
  std::optional<sqlkit::ClauseSet> clauses;               // ClauseByClause step lines
  std::string raw;
};

struct InsufficientDiversity : std::runtime_error {
  explicit InsufficientDiversity(const std::string& msg) : std::runtime_error(msg) {}
};

struct IncompatibleDemos : std::runtime_error {
  explicit IncompatibleDemos(const std::string& msg) : std::runtime_error(msg) {}
};

struct EmptyInitialSql : std::runtime_error {
  EmptyInitialSql() : std::runtime_error("refine prompt needs a non-empty initial SQL") {}
};

struct NoSqlFound : std::runtime_error {
  std::string raw;
  explicit NoSqlFound(std::string raw_text)
      : std::runtime_error("no SQL found in model response"), raw(std::move(raw_text)) {}
};

struct CorpusError : std::runtime_error {
  explicit CorpusError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Short keys used in CLI flags, config files, and the demonstration corpus.
std::string strategy_key(StrategyKind kind);
StrategyKind strategy_kind_from_key(const std::string& key);

/// Display labels for report rows: Standard, CoT, CC-DnP, ...
std::string strategy_label(const PromptStrategy& strategy);

std::string clause_order_key(ClauseOrder order);
ClauseOrder clause_order_from_key(const std::string& key);

std::string granularity_key(LinkGranularity granularity);
LinkGranularity granularity_from_key(const std::string& key);

/// Clause keywords in the order the strategy asks for them.
std::vector<std::string> clause_sequence(ClauseOrder order);

struct QuestionEntry {
  std::string question;
  std::string sql;
  std::string db_id;
};

enum class ClusterMethod { LeadingToken, KMedoids };

/// Clusters the question list and returns one representative per cluster,
/// largest clusters first. LeadingToken groups by the first word of the
/// question (singleton leaders pool into a catch-all cluster, ranked last);
/// KMedoids runs seeded k-medoids on token-overlap distance. Representatives
/// come back without reasoning; attach chains via the demonstration corpus.
std::vector<Demonstration> select_demonstrations(const std::vector<QuestionEntry>& questions,
                                                 int k, uint64_t seed,
                                                 ClusterMethod method = ClusterMethod::LeadingToken);

std::string build_prompt(const PromptStrategy& strategy, const std::string& question,
                         const std::string& schema_text);

std::string build_refine_prompt(const std::string& question, const std::string& schema_text,
                                const std::string& initial_sql, ShotMode shot_mode,
                                const std::vector<Demonstration>& demos = {});

ParsedResponse parse_response(const PromptStrategy& strategy, const std::string& raw);

/// One record of the hand-written demonstration file: reasoning chains keyed
/// by strategy (cot, cc, sl, gr; standard optional). The cc chain holds one
/// clause line per canonical clause; the gr chain holds the stage-1 SQL as
/// its first entry, commentary after.
struct DemoCorpusEntry {
  std::string question;
  std::string db_id;
  std::string sql;
  std::string schema_text;
  std::map<std::string, std::vector<std::string>> reasoning;
};

std::vector<DemoCorpusEntry> load_demo_corpus(const std::filesystem::path& path);

/// Demonstration for one strategy, reasoning chain picked by strategy key.
/// GenerateRefine demos carry the gr chain; its first entry is consumed by
/// build_refine_prompt as the example's initial SQL.
Demonstration demo_for(const DemoCorpusEntry& entry, StrategyKind kind);

}  // namespace dnp::prompts
