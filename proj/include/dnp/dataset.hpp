#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dnp::dataset {

struct MissingFile : std::runtime_error {
  explicit MissingFile(const std::filesystem::path& p)
      : std::runtime_error("missing file: " + p.string()), path(p) {}
  std::filesystem::path path;
};

/// An example references a database that is not in the schema catalog.
struct SchemaMismatch : std::runtime_error {
  SchemaMismatch(const std::string& example_id, const std::string& db_id)
      : std::runtime_error("example " + example_id + " references unknown database '" + db_id +
                           "'"),
        example_id(example_id),
        db_id(db_id) {}
  std::string example_id;
  std::string db_id;
};

struct MalformedRecord : std::runtime_error {
  MalformedRecord(size_t index, const std::string& reason)
      : std::runtime_error("record " + std::to_string(index) + ": " + reason), index(index) {}
  size_t index;
};

struct DatasetExample {
  std::string example_id;  // "<split>:<zero-based index>"
  int index = 0;
  std::string db_id;
  std::string question;
  std::string gold_sql;
  // set when the gold query does not parse under sqlkit; the example is
  // retained and grading skips it if the query also fails to execute
  std::optional<std::string> gold_parse_error;

  bool operator==(const DatasetExample&) const = default;
};

struct ColumnSchema {
  std::string name;
  std::string declared_type;
  bool is_primary_key = false;
  bool operator==(const ColumnSchema&) const = default;
};

struct TableSchema {
  std::string name;
  std::vector<ColumnSchema> columns;
  bool operator==(const TableSchema&) const = default;
};

struct ForeignKey {
  std::string from_table, from_column;
  std::string to_table, to_column;
  bool operator==(const ForeignKey&) const = default;
};

struct DatabaseSchema {
  std::string db_id;
  std::vector<TableSchema> tables;
  std::vector<ForeignKey> foreign_keys;
  bool operator==(const DatabaseSchema&) const = default;
};

struct Dataset {
  std::string split_name;
  std::filesystem::path root;
  std::vector<DatasetExample> examples;
  std::map<std::string, DatabaseSchema> schemas;

  std::filesystem::path database_path(const std::string& db_id) const;
  /// Test-suite variant databases for db_id, sorted by filename. Empty when
  /// the database has no variants.
  std::vector<std::filesystem::path> suite_paths(const std::string& db_id) const;

  bool operator==(const Dataset&) const = default;
};

/// Loads a Spider-layout benchmark root: tables.json, the split file
/// (train -> train_spider.json, dev -> dev.json, otherwise <split>.json),
/// and database/<db_id>/<db_id>.sqlite files.
Dataset load_dataset(const std::filesystem::path& root, const std::string& split);

enum class SchemaStyle { Compact, Ddl };

/// Deterministic schema-as-text rendering. Equal inputs give byte-equal
/// output.
std::string serialize_schema(const DatabaseSchema& schema, SchemaStyle style);

struct ValidationIssue {
  enum class Kind { GoldParseFailure, GoldExecFailure, UnknownDatabase };
  std::string example_id;
  Kind kind;
  std::string detail;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;
  bool clean() const { return issues.empty(); }
};

/// Checks every example: gold SQL parse, gold SQL execution on its database,
/// db_id resolution. Problems are reported, never thrown.
ValidationReport validate_dataset(const Dataset& ds);

}  // namespace dnp::dataset
