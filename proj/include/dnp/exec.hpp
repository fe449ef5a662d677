#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "dnp/dataset.hpp"
#include "dnp/sqlkit.hpp"

namespace dnp::exec {

using Blob = std::vector<unsigned char>;
/// One scalar cell: null, integer, real, text, or blob.
using Value = std::variant<std::monostate, int64_t, double, std::string, Blob>;

struct ExecutionResult {
  std::vector<std::string> columns;
  std::vector<std::vector<Value>> rows;
};

struct SqlError : std::runtime_error {
  explicit SqlError(const std::string& msg) : std::runtime_error(msg) {}
};

struct QueryTimeout : std::runtime_error {
  explicit QueryTimeout(const std::string& msg) : std::runtime_error(msg) {}
};

struct RowCapExceeded : std::runtime_error {
  explicit RowCapExceeded(const std::string& msg) : std::runtime_error(msg) {}
};

struct EmptyInput : std::runtime_error {
  explicit EmptyInput(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrialMismatch : std::runtime_error {
  explicit TrialMismatch(const std::string& msg) : std::runtime_error(msg) {}
};

struct Limits {
  std::chrono::milliseconds timeout{30000};
  size_t row_cap = 100000;
  double numeric_tolerance = 1e-6;
};

/// Runs one read-only SELECT against the SQLite file at db_path.
/// Write statements and multi-statement input are rejected with SqlError.
ExecutionResult execute_sql(const std::string& db_path, const std::string& sql,
                            const Limits& limits = {});

/// Result comparison: column names ignored, column count must match. Rows
/// compare as sequences when order_sensitive, as multisets otherwise.
/// Numeric cells compare with absolute tolerance after int/real unification;
/// text and blobs compare exactly; null equals only null.
bool results_equal(const ExecutionResult& pred, const ExecutionResult& gold, bool order_sensitive,
                   double tolerance = 1e-6);

struct ExampleOutcome {
  std::string example_id;
  int example_index = 0;
  std::string predicted_sql;
  bool valid = false;
  bool execution_match = false;
  std::optional<bool> test_suite_match;  // absent when the db has no variants
  sqlkit::DifficultyLevel difficulty = sqlkit::DifficultyLevel::Easy;
  std::optional<std::string> error;
  bool gold_skipped = false;  // gold failed on the original database
};

struct DbPaths {
  std::string original;
  std::vector<std::string> suite_variants;
};

/// Grades one prediction: validity on the original database, execution match
/// against gold, and the test-suite check over variant databases where gold
/// executes. All failures are encoded in the outcome, never thrown.
ExampleOutcome evaluate_example(const dataset::DatasetExample& ex, const std::string& predicted_sql,
                                const DbPaths& dbs, const Limits& limits = {});

struct TierCounts {
  int counted = 0;  // examples in denominator (gold executed)
  int valid = 0;
  int exec_match = 0;
  int ts_covered = 0;  // counted examples with >=1 suite variant
  int ts_match = 0;
  int skipped = 0;  // gold_skipped examples, excluded from all denominators
};

struct TrialMetrics {
  TierCounts all;
  TierCounts by_tier[4];  // indexed by DifficultyLevel
};

/// Mean percentages for one table cell; absent when no trial had a
/// denominator (e.g. a tier with no examples, or TS without variants).
struct MetricCell {
  std::optional<double> va;
  std::optional<double> ex;
  std::optional<double> ts;
};

struct StrategyAggregate {
  std::string label;
  int trial_count = 0;
  std::vector<TrialMetrics> trials;
  MetricCell mean_all;
  MetricCell mean_by_tier[4];
};

struct AggregateReport {
  std::vector<StrategyAggregate> strategies;
};

double percentage(int numerator, int denominator);

/// Per-trial VA/EX/TS overall and per difficulty tier, then the arithmetic
/// mean across trials. Every trial must cover the same example ids.
StrategyAggregate aggregate_strategy(const std::string& label,
                                     const std::vector<std::vector<ExampleOutcome>>& trials);

AggregateReport aggregate(const std::vector<std::vector<ExampleOutcome>>& trials,
                          const std::string& label = "run");

}  // namespace dnp::exec
