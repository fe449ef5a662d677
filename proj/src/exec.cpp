#include "dnp/exec.hpp"

#include <sqlite3.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>

namespace dnp::exec {

namespace {

struct DbHandle {
  sqlite3* db = nullptr;
  ~DbHandle() {
    if (db) sqlite3_close(db);
  }
};

struct StmtHandle {
  sqlite3_stmt* stmt = nullptr;
  ~StmtHandle() {
    if (stmt) sqlite3_finalize(stmt);
  }
};

// Leading keyword after whitespace and comments. Empty when the input holds
// no statement at all.
std::string first_keyword(const std::string& sql) {
  size_t i = 0, n = sql.size();
  while (i < n) {
    if (std::isspace(static_cast<unsigned char>(sql[i]))) {
      ++i;
    } else if (sql[i] == '-' && i + 1 < n && sql[i + 1] == '-') {
      while (i < n && sql[i] != '\n') ++i;
    } else if (sql[i] == '/' && i + 1 < n && sql[i + 1] == '*') {
      i += 2;
      while (i + 1 < n && !(sql[i] == '*' && sql[i + 1] == '/')) ++i;
      i = (i + 1 < n) ? i + 2 : n;
    } else {
      break;
    }
  }
  std::string word;
  while (i < n && (std::isalnum(static_cast<unsigned char>(sql[i])) || sql[i] == '_'))
    word += static_cast<char>(std::toupper(static_cast<unsigned char>(sql[i++])));
  return word;
}

struct Deadline {
  std::chrono::steady_clock::time_point at;
};

int progress_callback(void* ctx) {
  auto* deadline = static_cast<Deadline*>(ctx);
  return std::chrono::steady_clock::now() > deadline->at ? 1 : 0;
}

Value read_column(sqlite3_stmt* stmt, int col) {
  switch (sqlite3_column_type(stmt, col)) {
    case SQLITE_INTEGER:
      return static_cast<int64_t>(sqlite3_column_int64(stmt, col));
    case SQLITE_FLOAT:
      return sqlite3_column_double(stmt, col);
    case SQLITE_TEXT: {
      const auto* text = sqlite3_column_text(stmt, col);
      int bytes = sqlite3_column_bytes(stmt, col);
      return std::string(reinterpret_cast<const char*>(text), static_cast<size_t>(bytes));
    }
    case SQLITE_BLOB: {
      const auto* data = static_cast<const unsigned char*>(sqlite3_column_blob(stmt, col));
      int bytes = sqlite3_column_bytes(stmt, col);
      return Blob(data, data + bytes);
    }
    default:
      return std::monostate{};
  }
}

// null < numeric < text < blob
int type_rank(const Value& v) {
  switch (v.index()) {
    case 0: return 0;
    case 1: case 2: return 1;
    case 3: return 2;
    default: return 3;
  }
}

// Strict ordering used only to sort rows for the multiset comparison.
bool cell_less(const Value& a, const Value& b) {
  int ra = type_rank(a), rb = type_rank(b);
  if (ra != rb) return ra < rb;
  switch (ra) {
    case 0:
      return false;
    case 1: {
      if (a.index() == 1 && b.index() == 1) return std::get<int64_t>(a) < std::get<int64_t>(b);
      double da = a.index() == 1 ? static_cast<double>(std::get<int64_t>(a)) : std::get<double>(a);
      double db = b.index() == 1 ? static_cast<double>(std::get<int64_t>(b)) : std::get<double>(b);
      if (da != db) return da < db;
      return a.index() < b.index();  // ints before reals on exact ties
    }
    case 2:
      return std::get<std::string>(a) < std::get<std::string>(b);
    default:
      return std::get<Blob>(a) < std::get<Blob>(b);
  }
}

bool row_less(const std::vector<Value>& a, const std::vector<Value>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(), cell_less);
}

bool cell_equal(const Value& a, const Value& b, double tolerance) {
  int ra = type_rank(a), rb = type_rank(b);
  if (ra != rb) return false;
  switch (ra) {
    case 0:
      return true;
    case 1: {
      if (a.index() == 1 && b.index() == 1) return std::get<int64_t>(a) == std::get<int64_t>(b);
      double da = a.index() == 1 ? static_cast<double>(std::get<int64_t>(a)) : std::get<double>(a);
      double db = b.index() == 1 ? static_cast<double>(std::get<int64_t>(b)) : std::get<double>(b);
      return std::fabs(da - db) <= tolerance;
    }
    case 2:
      return std::get<std::string>(a) == std::get<std::string>(b);
    default:
      return std::get<Blob>(a) == std::get<Blob>(b);
  }
}

bool rows_equal(const std::vector<std::vector<Value>>& a, const std::vector<std::vector<Value>>& b,
                double tolerance) {
  for (size_t i = 0; i < a.size(); ++i) {
    for (size_t j = 0; j < a[i].size(); ++j)
      if (!cell_equal(a[i][j], b[i][j], tolerance)) return false;
  }
  return true;
}

}  // namespace

ExecutionResult execute_sql(const std::string& db_path, const std::string& sql,
                            const Limits& limits) {
  std::string keyword = first_keyword(sql);
  if (keyword.empty()) throw SqlError("no statement found");
  if (keyword != "SELECT" && keyword != "WITH")
    throw SqlError("statement is not a query (starts with " + keyword + ")");

  DbHandle handle;
  if (sqlite3_open_v2(db_path.c_str(), &handle.db, SQLITE_OPEN_READONLY, nullptr) != SQLITE_OK) {
    std::string msg = handle.db ? sqlite3_errmsg(handle.db) : "out of memory";
    throw SqlError("cannot open " + db_path + ": " + msg);
  }

  StmtHandle prepared;
  const char* tail = nullptr;
  if (sqlite3_prepare_v2(handle.db, sql.c_str(), -1, &prepared.stmt, &tail) != SQLITE_OK)
    throw SqlError(sqlite3_errmsg(handle.db));
  if (!prepared.stmt) throw SqlError("no statement found");
  for (const char* p = tail; p && *p; ++p)
    if (!std::isspace(static_cast<unsigned char>(*p)) && *p != ';')
      throw SqlError("trailing content after the first statement");
  if (!sqlite3_stmt_readonly(prepared.stmt)) throw SqlError("statement writes to the database");

  Deadline deadline{std::chrono::steady_clock::now() + limits.timeout};
  sqlite3_progress_handler(handle.db, 5000, progress_callback, &deadline);

  ExecutionResult result;
  int columns = sqlite3_column_count(prepared.stmt);
  for (int c = 0; c < columns; ++c) {
    const char* name = sqlite3_column_name(prepared.stmt, c);
    result.columns.push_back(name ? name : "");
  }

  for (;;) {
    int rc = sqlite3_step(prepared.stmt);
    if (rc == SQLITE_DONE) break;
    if (rc == SQLITE_ROW) {
      if (result.rows.size() >= limits.row_cap)
        throw RowCapExceeded("result exceeds " + std::to_string(limits.row_cap) + " rows");
      std::vector<Value> row;
      row.reserve(static_cast<size_t>(columns));
      for (int c = 0; c < columns; ++c) row.push_back(read_column(prepared.stmt, c));
      result.rows.push_back(std::move(row));
      continue;
    }
    if (rc == SQLITE_INTERRUPT)
      throw QueryTimeout("query exceeded " + std::to_string(limits.timeout.count()) + "ms");
    throw SqlError(sqlite3_errmsg(handle.db));
  }
  return result;
}

bool results_equal(const ExecutionResult& pred, const ExecutionResult& gold, bool order_sensitive,
                   double tolerance) {
  if (pred.columns.size() != gold.columns.size()) return false;
  if (pred.rows.size() != gold.rows.size()) return false;
  if (order_sensitive) return rows_equal(pred.rows, gold.rows, tolerance);
  auto a = pred.rows;
  auto b = gold.rows;
  std::sort(a.begin(), a.end(), row_less);
  std::sort(b.begin(), b.end(), row_less);
  return rows_equal(a, b, tolerance);
}

ExampleOutcome evaluate_example(const dataset::DatasetExample& ex, const std::string& predicted_sql,
                                const DbPaths& dbs, const Limits& limits) {
  ExampleOutcome out;
  out.example_id = ex.example_id;
  out.example_index = ex.index;
  out.predicted_sql = predicted_sql;

  try {
    out.difficulty = sqlkit::classify_difficulty(ex.gold_sql);
  } catch (const sqlkit::ParseError&) {
    out.difficulty = sqlkit::DifficultyLevel::Easy;
  }

  ExecutionResult gold_result;
  try {
    gold_result = execute_sql(dbs.original, ex.gold_sql, limits);
  } catch (const std::exception& e) {
    out.gold_skipped = true;
    out.error = std::string("gold: ") + e.what();
    return out;
  }

  bool order_sensitive = false;
  try {
    order_sensitive = sqlkit::is_order_sensitive(ex.gold_sql);
  } catch (const sqlkit::ParseError&) {
  }

  bool truncated = false;
  ExecutionResult pred_result;
  try {
    pred_result = execute_sql(dbs.original, predicted_sql, limits);
    out.valid = true;
  } catch (const RowCapExceeded& e) {
    // The query itself is well formed; it just produced too much output.
    out.valid = true;
    out.error = e.what();
    truncated = true;
  } catch (const std::exception& e) {
    out.error = e.what();
  }

  if (out.valid && !truncated)
    out.execution_match =
        results_equal(pred_result, gold_result, order_sensitive, limits.numeric_tolerance);

  if (!dbs.suite_variants.empty()) {
    bool all_match = out.execution_match;
    for (const auto& variant : dbs.suite_variants) {
      if (!all_match) break;
      ExecutionResult vgold;
      try {
        vgold = execute_sql(variant, ex.gold_sql, limits);
      } catch (const std::exception&) {
        continue;  // variant where gold itself fails adds no signal
      }
      try {
        ExecutionResult vpred = execute_sql(variant, predicted_sql, limits);
        all_match = results_equal(vpred, vgold, order_sensitive, limits.numeric_tolerance);
      } catch (const std::exception&) {
        all_match = false;
      }
    }
    out.test_suite_match = all_match;
  }
  return out;
}

double percentage(int numerator, int denominator) {
  if (denominator <= 0) return 0.0;
  return 100.0 * static_cast<double>(numerator) / static_cast<double>(denominator);
}

namespace {

void tally(TierCounts& counts, const ExampleOutcome& out) {
  if (out.gold_skipped) {
    ++counts.skipped;
    return;
  }
  ++counts.counted;
  if (out.valid) ++counts.valid;
  if (out.execution_match) ++counts.exec_match;
  if (out.test_suite_match.has_value()) {
    ++counts.ts_covered;
    if (*out.test_suite_match) ++counts.ts_match;
  }
}

TrialMetrics tally_trial(const std::vector<ExampleOutcome>& outcomes) {
  TrialMetrics metrics;
  for (const auto& out : outcomes) {
    tally(metrics.all, out);
    tally(metrics.by_tier[static_cast<int>(out.difficulty)], out);
  }
  return metrics;
}

std::optional<double> mean_of(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  double sum = 0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

MetricCell cell_for(const std::vector<TrialMetrics>& trials, const TierCounts TrialMetrics::*all,
                    int tier) {
  std::vector<double> va, ex, ts;
  for (const auto& trial : trials) {
    const TierCounts& counts = tier < 0 ? trial.*all : trial.by_tier[tier];
    if (counts.counted > 0) {
      va.push_back(percentage(counts.valid, counts.counted));
      ex.push_back(percentage(counts.exec_match, counts.counted));
    }
    if (counts.ts_covered > 0) ts.push_back(percentage(counts.ts_match, counts.ts_covered));
  }
  return MetricCell{mean_of(va), mean_of(ex), mean_of(ts)};
}

}  // namespace

StrategyAggregate aggregate_strategy(const std::string& label,
                                     const std::vector<std::vector<ExampleOutcome>>& trials) {
  if (trials.empty()) throw EmptyInput("no trials to aggregate");
  for (size_t t = 1; t < trials.size(); ++t) {
    if (trials[t].size() != trials[0].size())
      throw TrialMismatch("trial " + std::to_string(t) + " has " +
                          std::to_string(trials[t].size()) + " outcomes, expected " +
                          std::to_string(trials[0].size()));
    for (size_t i = 0; i < trials[t].size(); ++i)
      if (trials[t][i].example_id != trials[0][i].example_id)
        throw TrialMismatch("trial " + std::to_string(t) + " grades " +
                            trials[t][i].example_id + " where trial 0 grades " +
                            trials[0][i].example_id);
  }

  StrategyAggregate agg;
  agg.label = label;
  agg.trial_count = static_cast<int>(trials.size());
  for (const auto& trial : trials) agg.trials.push_back(tally_trial(trial));
  agg.mean_all = cell_for(agg.trials, &TrialMetrics::all, -1);
  for (int tier = 0; tier < 4; ++tier)
    agg.mean_by_tier[tier] = cell_for(agg.trials, &TrialMetrics::all, tier);
  return agg;
}

AggregateReport aggregate(const std::vector<std::vector<ExampleOutcome>>& trials,
                          const std::string& label) {
  AggregateReport report;
  report.strategies.push_back(aggregate_strategy(label, trials));
  return report;
}

}  // namespace dnp::exec
