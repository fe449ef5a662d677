#include "dnp/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "dnp/exec.hpp"
#include "dnp/sqlkit.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dnp::dataset {

namespace {

std::string lower(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw MalformedRecord(0, path.string() + ": " + e.what());
  }
  return j;
}

DatabaseSchema parse_schema_entry(const json& entry, size_t index) {
  auto fail = [&](const std::string& reason) -> MalformedRecord {
    std::string db = entry.contains("db_id") && entry["db_id"].is_string()
                         ? entry["db_id"].get<std::string>()
                         : "<unknown>";
    return MalformedRecord(index, "tables.json db '" + db + "': " + reason);
  };
  if (!entry.is_object() || !entry.contains("db_id") || !entry["db_id"].is_string())
    throw MalformedRecord(index, "tables.json: entry is not an object with db_id");

  DatabaseSchema schema;
  schema.db_id = entry["db_id"].get<std::string>();

  if (!entry.contains("table_names_original") || !entry["table_names_original"].is_array())
    throw fail("missing table_names_original");
  for (const auto& t : entry["table_names_original"]) {
    if (!t.is_string()) throw fail("table name is not a string");
    schema.tables.push_back(TableSchema{t.get<std::string>(), {}});
  }

  if (!entry.contains("column_names_original") || !entry["column_names_original"].is_array())
    throw fail("missing column_names_original");
  const auto& cols = entry["column_names_original"];
  std::vector<std::string> types(cols.size(), "text");
  if (entry.contains("column_types") && entry["column_types"].is_array()) {
    const auto& ct = entry["column_types"];
    if (ct.size() != cols.size()) throw fail("column_types length does not match columns");
    for (size_t i = 0; i < ct.size(); ++i) {
      if (!ct[i].is_string()) throw fail("column type is not a string");
      types[i] = ct[i].get<std::string>();
    }
  }

  // Global column index -> (table index, column index within table).
  // Index entries with table -1 (the "*" pseudo-column) stay unmapped.
  std::vector<std::pair<int, int>> column_pos(cols.size(), {-1, -1});
  for (size_t i = 0; i < cols.size(); ++i) {
    const auto& c = cols[i];
    if (!c.is_array() || c.size() != 2 || !c[0].is_number_integer() || !c[1].is_string())
      throw fail("column entry " + std::to_string(i) + " is not [table_index, name]");
    int ti = c[0].get<int>();
    if (ti < 0) continue;
    if (ti >= static_cast<int>(schema.tables.size()))
      throw fail("column entry " + std::to_string(i) + " references missing table " +
                 std::to_string(ti));
    auto& table = schema.tables[static_cast<size_t>(ti)];
    column_pos[i] = {ti, static_cast<int>(table.columns.size())};
    table.columns.push_back(ColumnSchema{c[1].get<std::string>(), types[i], false});
  }

  if (entry.contains("primary_keys")) {
    for (const auto& pk : entry["primary_keys"]) {
      // Spider uses flat column indices; composite keys appear as nested lists.
      std::vector<int> indices;
      if (pk.is_number_integer()) {
        indices.push_back(pk.get<int>());
      } else if (pk.is_array()) {
        for (const auto& p : pk) {
          if (!p.is_number_integer()) throw fail("primary key entry is not an integer");
          indices.push_back(p.get<int>());
        }
      } else {
        throw fail("primary key entry is not an integer");
      }
      for (int idx : indices) {
        if (idx < 0 || idx >= static_cast<int>(column_pos.size()) ||
            column_pos[static_cast<size_t>(idx)].first < 0)
          throw fail("primary key index " + std::to_string(idx) + " out of range");
        auto [ti, ci] = column_pos[static_cast<size_t>(idx)];
        schema.tables[static_cast<size_t>(ti)].columns[static_cast<size_t>(ci)].is_primary_key =
            true;
      }
    }
  }

  if (entry.contains("foreign_keys")) {
    for (const auto& fk : entry["foreign_keys"]) {
      if (!fk.is_array() || fk.size() != 2 || !fk[0].is_number_integer() ||
          !fk[1].is_number_integer())
        throw fail("foreign key entry is not a column-index pair");
      int a = fk[0].get<int>(), b = fk[1].get<int>();
      for (int idx : {a, b})
        if (idx < 0 || idx >= static_cast<int>(column_pos.size()) ||
            column_pos[static_cast<size_t>(idx)].first < 0)
          throw fail("foreign key index " + std::to_string(idx) + " out of range");
      auto [fti, fci] = column_pos[static_cast<size_t>(a)];
      auto [tti, tci] = column_pos[static_cast<size_t>(b)];
      schema.foreign_keys.push_back(
          ForeignKey{schema.tables[static_cast<size_t>(fti)].name,
                     schema.tables[static_cast<size_t>(fti)].columns[static_cast<size_t>(fci)].name,
                     schema.tables[static_cast<size_t>(tti)].name,
                     schema.tables[static_cast<size_t>(tti)].columns[static_cast<size_t>(tci)].name});
    }
  }

  // Invariants: unique table names, unique column names per table, >=1 column.
  std::vector<std::string> seen_tables;
  for (const auto& t : schema.tables) {
    std::string low = lower(t.name);
    if (std::find(seen_tables.begin(), seen_tables.end(), low) != seen_tables.end())
      throw fail("duplicate table name '" + t.name + "'");
    seen_tables.push_back(low);
    if (t.columns.empty()) throw fail("table '" + t.name + "' has no columns");
    std::vector<std::string> seen_cols;
    for (const auto& c : t.columns) {
      std::string cl = lower(c.name);
      if (std::find(seen_cols.begin(), seen_cols.end(), cl) != seen_cols.end())
        throw fail("duplicate column '" + c.name + "' in table '" + t.name + "'");
      seen_cols.push_back(cl);
    }
  }
  return schema;
}

fs::path split_file(const fs::path& root, const std::string& split) {
  if (split == "train") return root / "train_spider.json";
  if (split == "dev") return root / "dev.json";
  return root / (split + ".json");
}

}  // namespace

std::filesystem::path Dataset::database_path(const std::string& db_id) const {
  return root / "database" / db_id / (db_id + ".sqlite");
}

std::vector<std::filesystem::path> Dataset::suite_paths(const std::string& db_id) const {
  std::vector<fs::path> out;
  fs::path dir = root / "database_suite" / db_id;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return out;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (entry.is_regular_file() && entry.path().extension() == ".sqlite")
      out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Dataset load_dataset(const std::filesystem::path& root, const std::string& split) {
  Dataset ds;
  ds.split_name = split;
  ds.root = root;

  json manifest = load_json_file(root / "tables.json");
  if (!manifest.is_array()) throw MalformedRecord(0, "tables.json: top level is not an array");
  for (size_t i = 0; i < manifest.size(); ++i) {
    DatabaseSchema schema = parse_schema_entry(manifest[i], i);
    ds.schemas[schema.db_id] = std::move(schema);
  }

  json examples = load_json_file(split_file(root, split));
  if (!examples.is_array())
    throw MalformedRecord(0, split + " split: top level is not an array");
  for (size_t i = 0; i < examples.size(); ++i) {
    const auto& e = examples[i];
    if (!e.is_object()) throw MalformedRecord(i, "example is not an object");
    for (const char* field : {"db_id", "question", "query"})
      if (!e.contains(field) || !e[field].is_string())
        throw MalformedRecord(i, std::string("missing string field '") + field + "'");

    DatasetExample ex;
    ex.index = static_cast<int>(i);
    ex.example_id = split + ":" + std::to_string(i);
    ex.db_id = e["db_id"].get<std::string>();
    ex.question = e["question"].get<std::string>();
    ex.gold_sql = e["query"].get<std::string>();
    if (ex.gold_sql.empty()) throw MalformedRecord(i, "empty gold query");

    if (!ds.schemas.count(ex.db_id)) throw SchemaMismatch(ex.example_id, ex.db_id);
    fs::path db = ds.database_path(ex.db_id);
    if (!fs::exists(db)) throw MissingFile(db);

    try {
      sqlkit::split_clauses(ex.gold_sql);
    } catch (const sqlkit::ParseError& pe) {
      ex.gold_parse_error = pe.what();
    }
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

std::string serialize_schema(const DatabaseSchema& schema, SchemaStyle style) {
  std::string out;
  if (style == SchemaStyle::Compact) {
    for (const auto& t : schema.tables) {
      out += t.name;
      out += '(';
      for (size_t i = 0; i < t.columns.size(); ++i) {
        if (i) out += ", ";
        out += t.columns[i].name;
      }
      out += ")\n";
    }
    out += "foreign keys:\n";
    for (const auto& fk : schema.foreign_keys) {
      out += fk.from_table + "." + fk.from_column + " = " + fk.to_table + "." + fk.to_column;
      out += '\n';
    }
    return out;
  }

  // Ddl style
  for (size_t ti = 0; ti < schema.tables.size(); ++ti) {
    const auto& t = schema.tables[ti];
    if (ti) out += '\n';
    out += "CREATE TABLE " + t.name + " (\n";
    std::vector<std::string> items;
    std::vector<std::string> pk_cols;
    for (const auto& c : t.columns) {
      items.push_back(c.name + " " + c.declared_type);
      if (c.is_primary_key) pk_cols.push_back(c.name);
    }
    if (!pk_cols.empty()) {
      std::string pk = "PRIMARY KEY (";
      for (size_t i = 0; i < pk_cols.size(); ++i) {
        if (i) pk += ", ";
        pk += pk_cols[i];
      }
      pk += ')';
      items.push_back(pk);
    }
    for (const auto& fk : schema.foreign_keys) {
      if (fk.from_table == t.name)
        items.push_back("FOREIGN KEY (" + fk.from_column + ") REFERENCES " + fk.to_table + "(" +
                        fk.to_column + ")");
    }
    for (size_t i = 0; i < items.size(); ++i) {
      out += "  " + items[i];
      if (i + 1 < items.size()) out += ',';
      out += '\n';
    }
    out += ");\n";
  }
  return out;
}

ValidationReport validate_dataset(const Dataset& ds) {
  ValidationReport report;
  for (const auto& ex : ds.examples) {
    if (!ds.schemas.count(ex.db_id)) {
      report.issues.push_back({ex.example_id, ValidationIssue::Kind::UnknownDatabase,
                               "unknown database '" + ex.db_id + "'"});
      continue;
    }
    if (ex.gold_parse_error)
      report.issues.push_back(
          {ex.example_id, ValidationIssue::Kind::GoldParseFailure, *ex.gold_parse_error});
    try {
      exec::execute_sql(ds.database_path(ex.db_id).string(), ex.gold_sql);
    } catch (const std::exception& e) {
      report.issues.push_back({ex.example_id, ValidationIssue::Kind::GoldExecFailure, e.what()});
    }
  }
  return report;
}

}  // namespace dnp::dataset
