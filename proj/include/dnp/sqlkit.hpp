#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dnp::sqlkit {

/// Thrown when a query cannot be tokenized or does not have the expected
/// clause structure. `position` is a byte offset into the input.
struct ParseError : std::runtime_error {
  ParseError(std::string msg, size_t position, std::string expected)
      : std::runtime_error(std::move(msg)), position(position), expected(std::move(expected)) {}
  size_t position = 0;
  std::string expected;
};

struct IncompleteClauseSet : std::runtime_error {
  explicit IncompleteClauseSet(const std::string& msg) : std::runtime_error(msg) {}
};

/// One token of SQL text. `upper` is the uppercased spelling for keyword
/// comparisons; `depth` is the parenthesis depth at the token start.
struct Token {
  enum class Kind { Word, Number, String, QuotedIdent, Punct };
  Kind kind;
  std::string text;
  std::string upper;
  size_t pos = 0;
  int depth = 0;
};

/// Tokenizes SQL, skipping comments. Throws ParseError on unterminated
/// strings/comments or unbalanced parentheses.
std::vector<Token> tokenize(const std::string& sql);

/// A single SELECT block split into its top-level clauses. Clause fields
/// keep their leading keyword ("SELECT a", "FROM t"). Everything from the
/// first top-level set operator onward is kept opaque in trailing_set_op.
struct ClauseSet {
  std::string select;
  std::string from_;
  std::optional<std::string> where_;
  std::optional<std::string> group_by;
  std::optional<std::string> having;
  std::optional<std::string> order_by;
  std::optional<std::string> limit;
  std::optional<std::string> trailing_set_op;

  bool operator==(const ClauseSet&) const = default;
};

enum class DifficultyLevel { Easy, Medium, Hard, Extra };

const char* difficulty_name(DifficultyLevel level);
std::optional<DifficultyLevel> difficulty_from_name(const std::string& name);

/// Splits a single SELECT statement into top-level clauses. Keywords inside
/// parenthesized subqueries never terminate an outer clause.
ClauseSet split_clauses(const std::string& sql);

/// Joins the present clauses in canonical order (SELECT, FROM, WHERE,
/// GROUP BY, HAVING, ORDER BY, LIMIT, set-op tail) with single spaces.
/// Leading clause keywords are normalized to upper case; a clause body given
/// without its keyword gets the keyword prepended.
std::string assemble_clauses(const ClauseSet& cs);

/// Spider-style hardness classification by structural component counts.
DifficultyLevel classify_difficulty(const std::string& sql);

/// Structural counts feeding classify_difficulty, exposed for tests.
struct DifficultyCounts {
  int component1 = 0;  // where/group/order/limit present, joins, OR, LIKE
  int component2 = 0;  // nested condition subqueries + set operations
  int others = 0;      // >1 aggregates, >1 select columns, >1 where conds, >1 group cols
};
DifficultyCounts difficulty_counts(const std::string& sql);

/// Cleans raw model output into plain SQL: strips surrounding code fences,
/// leading labels ("SQL:", "Final SQL:", ...), trailing semicolons, and
/// collapses whitespace outside of quoted literals. Total and idempotent.
std::string normalize_sql(const std::string& raw);

/// True iff the outermost statement (or outermost set-operation result)
/// carries an ORDER BY.
bool is_order_sensitive(const std::string& gold_sql);

}  // namespace dnp::sqlkit
