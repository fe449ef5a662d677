#include "dnp/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "prompt_templates.hpp"

using nlohmann::json;
namespace tpl = dnp::prompts::templates;

namespace dnp::prompts {

namespace {

std::string lower(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string cur;
  for (char c : text) {
    if (c == '\n') {
      if (!cur.empty() && cur.back() == '\r') cur.pop_back();
      lines.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) lines.push_back(cur);
  return lines;
}

std::string ensure_trailing_newline(std::string s) {
  if (s.empty() || s.back() != '\n') s += '\n';
  return s;
}

}  // namespace

std::string strategy_key(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::Standard: return "standard";
    case StrategyKind::NormalCoT: return "cot";
    case StrategyKind::ClauseByClause: return "cc";
    case StrategyKind::SchemaLinking: return "sl";
    case StrategyKind::GenerateRefine: return "gr";
  }
  return "standard";
}

StrategyKind strategy_kind_from_key(const std::string& key) {
  std::string k = lower(trim(key));
  if (k == "standard") return StrategyKind::Standard;
  if (k == "cot") return StrategyKind::NormalCoT;
  if (k == "cc") return StrategyKind::ClauseByClause;
  if (k == "sl") return StrategyKind::SchemaLinking;
  if (k == "gr") return StrategyKind::GenerateRefine;
  throw std::invalid_argument("unknown strategy '" + key + "'");
}

std::string strategy_label(const PromptStrategy& strategy) {
  switch (strategy.kind) {
    case StrategyKind::Standard: return "Standard";
    case StrategyKind::NormalCoT: return "CoT";
    case StrategyKind::ClauseByClause: return "CC-DnP";
    case StrategyKind::SchemaLinking: return "SL-DnP";
    case StrategyKind::GenerateRefine: return "GR-DnP";
  }
  return "Standard";
}

std::string clause_order_key(ClauseOrder order) {
  switch (order) {
    case ClauseOrder::SelectFirst: return "select-first";
    case ClauseOrder::FromFirst: return "from-first";
    case ClauseOrder::SelectLast: return "select-last";
  }
  return "select-last";
}

ClauseOrder clause_order_from_key(const std::string& key) {
  std::string k = lower(trim(key));
  if (k == "select-first") return ClauseOrder::SelectFirst;
  if (k == "from-first") return ClauseOrder::FromFirst;
  if (k == "select-last") return ClauseOrder::SelectLast;
  throw std::invalid_argument("unknown clause order '" + key + "'");
}

std::string granularity_key(LinkGranularity granularity) {
  switch (granularity) {
    case LinkGranularity::ExactTablesAndColumns: return "exact";
    case LinkGranularity::TablesThenColumns: return "tables-then-columns";
    case LinkGranularity::TablesWithAllColumns: return "tables-all-columns";
  }
  return "tables-all-columns";
}

LinkGranularity granularity_from_key(const std::string& key) {
  std::string k = lower(trim(key));
  if (k == "exact") return LinkGranularity::ExactTablesAndColumns;
  if (k == "tables-then-columns") return LinkGranularity::TablesThenColumns;
  if (k == "tables-all-columns") return LinkGranularity::TablesWithAllColumns;
  throw std::invalid_argument("unknown link granularity '" + key + "'");
}

std::vector<std::string> clause_sequence(ClauseOrder order) {
  switch (order) {
    case ClauseOrder::SelectFirst:
      return {"SELECT", "FROM", "WHERE", "GROUP BY", "HAVING", "ORDER BY", "LIMIT"};
    case ClauseOrder::FromFirst:
      return {"FROM", "SELECT", "WHERE", "GROUP BY", "HAVING", "ORDER BY", "LIMIT"};
    case ClauseOrder::SelectLast:
      return {"FROM", "WHERE", "GROUP BY", "HAVING", "ORDER BY", "LIMIT", "SELECT"};
  }
  return {};
}

namespace {

std::vector<std::string> question_tokens(const std::string& q) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : q) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;
  size_t inter = 0;
  for (const auto& t : a) inter += b.count(t);
  size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

constexpr size_t kMedoidSampleCap = 512;

// Cluster member whose mean token-overlap similarity to the others is
// highest. Large clusters compare against a seeded sample instead of every
// member so selection stays near-linear on Spider-sized splits.
size_t medoid_of(const std::vector<size_t>& members,
                 const std::vector<std::set<std::string>>& token_sets,
                 const std::vector<QuestionEntry>& questions, uint64_t seed) {
  std::vector<size_t> reference = members;
  if (reference.size() > kMedoidSampleCap) {
    std::mt19937_64 rng(seed);
    std::shuffle(reference.begin(), reference.end(), rng);
    reference.resize(kMedoidSampleCap);
  }
  size_t best = members.front();
  double best_score = -1.0;
  for (size_t candidate : members) {
    double total = 0.0;
    size_t counted = 0;
    for (size_t other : reference) {
      if (other == candidate) continue;
      total += jaccard(token_sets[candidate], token_sets[other]);
      ++counted;
    }
    double score = counted == 0 ? 1.0 : total / static_cast<double>(counted);
    if (score > best_score ||
        (score == best_score && questions[candidate].question < questions[best].question)) {
      best = candidate;
      best_score = score;
    }
  }
  return best;
}

std::vector<Demonstration> cluster_by_leading_token(const std::vector<QuestionEntry>& questions,
                                                    int k, uint64_t seed) {
  std::map<std::string, std::vector<size_t>> groups;
  for (size_t i = 0; i < questions.size(); ++i) {
    auto toks = question_tokens(questions[i].question);
    groups[toks.empty() ? "" : toks.front()].push_back(i);
  }

  struct Cluster {
    std::string leader;
    std::vector<size_t> members;
    bool catch_all = false;
  };
  std::vector<Cluster> clusters;
  Cluster misc{"", {}, true};
  for (auto& [leader, members] : groups) {
    if (leader.empty() || members.size() < 2) {
      misc.members.insert(misc.members.end(), members.begin(), members.end());
    } else {
      clusters.push_back(Cluster{leader, members, false});
    }
  }
  if (!misc.members.empty()) clusters.push_back(misc);

  std::stable_sort(clusters.begin(), clusters.end(), [](const Cluster& a, const Cluster& b) {
    if (a.catch_all != b.catch_all) return !a.catch_all;
    if (a.members.size() != b.members.size()) return a.members.size() > b.members.size();
    return a.leader < b.leader;
  });

  if (clusters.size() < static_cast<size_t>(k))
    throw InsufficientDiversity("questions form " + std::to_string(clusters.size()) +
                                " clusters, fewer than k=" + std::to_string(k));

  std::vector<std::set<std::string>> token_sets(questions.size());
  for (size_t i = 0; i < questions.size(); ++i) {
    auto toks = question_tokens(questions[i].question);
    token_sets[i] = std::set<std::string>(toks.begin(), toks.end());
  }

  std::vector<Demonstration> out;
  for (int c = 0; c < k; ++c) {
    size_t rep = medoid_of(clusters[static_cast<size_t>(c)].members, token_sets, questions, seed);
    const auto& q = questions[rep];
    out.push_back(Demonstration{q.question, q.db_id, q.sql, "", {}});
  }
  return out;
}

std::vector<Demonstration> cluster_k_medoids(const std::vector<QuestionEntry>& questions, int k,
                                             uint64_t seed) {
  size_t n = questions.size();
  std::vector<std::set<std::string>> token_sets(n);
  for (size_t i = 0; i < n; ++i) {
    auto toks = question_tokens(questions[i].question);
    token_sets[i] = std::set<std::string>(toks.begin(), toks.end());
  }
  auto distance = [&](size_t a, size_t b) { return 1.0 - jaccard(token_sets[a], token_sets[b]); };

  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<size_t> medoids(order.begin(), order.begin() + k);

  std::vector<std::vector<size_t>> assignment(static_cast<size_t>(k));
  for (int iteration = 0; iteration < 20; ++iteration) {
    for (auto& bucket : assignment) bucket.clear();
    for (size_t i = 0; i < n; ++i) {
      size_t best = 0;
      double best_d = distance(i, medoids[0]);
      for (size_t m = 1; m < medoids.size(); ++m) {
        double d = distance(i, medoids[m]);
        if (d < best_d) {
          best_d = d;
          best = m;
        }
      }
      assignment[best].push_back(i);
    }
    bool changed = false;
    for (size_t m = 0; m < medoids.size(); ++m) {
      if (assignment[m].empty())
        throw InsufficientDiversity("k-medoids emptied a cluster; fewer than k distinct questions");
      size_t best = assignment[m].front();
      double best_total = 0.0;
      bool first = true;
      for (size_t candidate : assignment[m]) {
        double total = 0.0;
        for (size_t other : assignment[m]) total += distance(candidate, other);
        if (first || total < best_total ||
            (total == best_total &&
             questions[candidate].question < questions[best].question)) {
          best = candidate;
          best_total = total;
          first = false;
        }
      }
      if (medoids[m] != best) {
        medoids[m] = best;
        changed = true;
      }
    }
    if (!changed) break;
  }

  std::vector<std::pair<size_t, size_t>> ranked;  // (cluster size, medoid index)
  for (size_t m = 0; m < medoids.size(); ++m) ranked.emplace_back(assignment[m].size(), medoids[m]);
  std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return questions[a.second].question < questions[b.second].question;
  });

  std::vector<Demonstration> out;
  for (const auto& [size, rep] : ranked) {
    const auto& q = questions[rep];
    out.push_back(Demonstration{q.question, q.db_id, q.sql, "", {}});
  }
  return out;
}

}  // namespace

std::vector<Demonstration> select_demonstrations(const std::vector<QuestionEntry>& questions,
                                                 int k, uint64_t seed, ClusterMethod method) {
  if (k < 1) throw std::invalid_argument("k must be at least 1");
  if (questions.empty()) throw std::invalid_argument("question list is empty");
  if (static_cast<size_t>(k) > questions.size())
    throw InsufficientDiversity("k=" + std::to_string(k) + " exceeds " +
                                std::to_string(questions.size()) + " questions");
  if (method == ClusterMethod::LeadingToken) return cluster_by_leading_token(questions, k, seed);
  return cluster_k_medoids(questions, k, seed);
}

namespace {

bool needs_reasoning(StrategyKind kind) {
  return kind == StrategyKind::NormalCoT || kind == StrategyKind::ClauseByClause ||
         kind == StrategyKind::SchemaLinking;
}

void check_demo(const Demonstration& demo, bool reasoning_required, const char* what) {
  if (demo.schema_text.empty())
    throw IncompatibleDemos(std::string(what) + " '" + demo.question + "' carries no schema text");
  if (reasoning_required && demo.reasoning.empty())
    throw IncompatibleDemos(std::string(what) + " '" + demo.question +
                            "' carries no reasoning chain");
}

std::string example_preamble(int index, const Demonstration& demo) {
  std::string out = std::string(tpl::kExampleHeader) + std::to_string(index) + "\n";
  out += std::string(tpl::kSchemaLead) + "\n" + ensure_trailing_newline(demo.schema_text);
  out += std::string(tpl::kQuestionLead) + demo.question + "\n";
  return out;
}

std::string task_preamble(const std::string& question, const std::string& schema_text) {
  std::string out = std::string(tpl::kTaskHeader) + "\n";
  out += std::string(tpl::kSchemaLead) + "\n" + ensure_trailing_newline(schema_text);
  out += std::string(tpl::kQuestionLead) + question + "\n";
  return out;
}

}  // namespace

std::string build_prompt(const PromptStrategy& strategy, const std::string& question,
                         const std::string& schema_text) {
  if (schema_text.empty()) throw std::invalid_argument("schema_text must not be empty");

  PromptStrategy effective = strategy;
  if (strategy.kind == StrategyKind::GenerateRefine) {
    if (strategy.stage1 == StrategyKind::GenerateRefine)
      throw std::invalid_argument("GenerateRefine cannot nest itself as stage 1");
    effective.kind = strategy.stage1;
  }

  std::string out;
  if (effective.shot_mode == ShotMode::Few) {
    if (effective.demos.empty()) throw IncompatibleDemos("few-shot mode carries no demonstrations");
    int index = 1;
    for (const auto& demo : effective.demos) {
      check_demo(demo, needs_reasoning(effective.kind), "demonstration");
      out += example_preamble(index++, demo);
      out += tpl::worked_answer(effective.kind, demo, effective.clause_order);
      out += "\n";
    }
  }
  out += task_preamble(question, schema_text);
  out += tpl::instruction_block(effective);
  return out;
}

std::string build_refine_prompt(const std::string& question, const std::string& schema_text,
                                const std::string& initial_sql, ShotMode shot_mode,
                                const std::vector<Demonstration>& demos) {
  if (trim(initial_sql).empty()) throw EmptyInitialSql();
  if (schema_text.empty()) throw std::invalid_argument("schema_text must not be empty");

  std::string out;
  if (shot_mode == ShotMode::Few) {
    if (demos.empty()) throw IncompatibleDemos("few-shot refine carries no demonstrations");
    int index = 1;
    for (const auto& demo : demos) {
      check_demo(demo, true, "refine demonstration");
      out += example_preamble(index++, demo);
      out += std::string(tpl::kInitialSqlLead) + demo.reasoning.front() + "\n";
      out += tpl::refine_worked_answer(demo);
      out += "\n";
    }
  }
  out += task_preamble(question, schema_text);
  out += std::string(tpl::kInitialSqlLead) + initial_sql + "\n";
  out += tpl::refine_instruction();
  return out;
}

namespace {

bool accept_candidate(const std::string& text, std::string& out) {
  std::string n = sqlkit::normalize_sql(text);
  if (n.empty()) return false;
  std::string head;
  for (char c : n) {
    if (std::isalpha(static_cast<unsigned char>(c)))
      head += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    else
      break;
  }
  if (head != "SELECT" && head != "WITH") return false;
  out = n;
  return true;
}

// Leading markdown noise before a label: list markers, emphasis, headers.
std::string strip_lead(const std::string& line) {
  size_t i = 0;
  while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '#' ||
                             line[i] == '>' || line[i] == '*' || line[i] == '-'))
    ++i;
  return line.substr(i);
}

// Content after `label` + optional spaces + ':'; nullopt when the line does
// not carry the label.
std::optional<std::string> after_label(const std::string& line, const std::string& label) {
  std::string body = strip_lead(line);
  if (body.size() < label.size()) return std::nullopt;
  if (lower(body.substr(0, label.size())) != lower(label)) return std::nullopt;
  size_t i = label.size();
  while (i < body.size() && (body[i] == ' ' || body[i] == '*')) ++i;
  if (i >= body.size() || body[i] != ':') return std::nullopt;
  return body.substr(i + 1);
}

const char* const kClauseNames[] = {"GROUP BY", "ORDER BY", "SELECT", "FROM",
                                    "WHERE",    "HAVING",   "LIMIT"};

// Clause step line, e.g. "2. WHERE clause: age > 20" -> {"WHERE", "age > 20"}.
std::optional<std::pair<std::string, std::string>> clause_step(const std::string& line) {
  std::string body = strip_lead(line);
  size_t i = 0;
  while (i < body.size() &&
         (std::isdigit(static_cast<unsigned char>(body[i])) || body[i] == '.' || body[i] == ')'))
    ++i;
  while (i < body.size() && body[i] == ' ') ++i;
  body = body.substr(i);
  for (const char* name : kClauseNames) {
    auto rest = after_label(body, std::string(name) + " clause");
    if (rest) return std::make_pair(std::string(name), trim(*rest));
  }
  return std::nullopt;
}

bool absent_marker(const std::string& value) {
  std::string v = lower(value);
  return v.empty() || v == "none" || v == "(none)" || v == "n/a" || v == "-";
}

bool is_any_label(const std::string& line) {
  std::string body = strip_lead(line);
  if (trim(body).rfind("```", 0) == 0) return true;
  for (const char* label : {"Final SQL", "SQL", "Relevant schema", "Initial SQL"})
    if (after_label(body, label)) return true;
  return clause_step(line).has_value();
}

std::optional<std::string> last_fenced_sql(const std::vector<std::string>& lines) {
  std::vector<std::string> blocks;
  std::string current;
  bool open = false;
  for (const auto& line : lines) {
    if (trim(line).rfind("```", 0) == 0) {
      if (open) blocks.push_back(current);
      open = !open;
      current.clear();
      continue;
    }
    if (open) current += line + "\n";
  }
  for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
    std::string sql;
    if (accept_candidate(*it, sql)) return sql;
  }
  return std::nullopt;
}

std::optional<std::string> last_labeled_sql(const std::vector<std::string>& lines) {
  for (size_t i = lines.size(); i-- > 0;) {
    auto content = after_label(lines[i], "Final SQL");
    if (!content) content = after_label(lines[i], "SQL");
    if (!content) continue;
    std::string text = *content;
    if (trim(text).empty()) {
      for (size_t j = i + 1; j < lines.size(); ++j) {
        if (trim(lines[j]).empty() || is_any_label(lines[j])) break;
        text += lines[j] + "\n";
      }
    }
    std::string sql;
    if (accept_candidate(text, sql)) return sql;
  }
  return std::nullopt;
}

std::optional<std::string> first_select_suffix(const std::string& raw) {
  auto is_word = [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  };
  for (size_t i = 0; i + 6 <= raw.size(); ++i) {
    if (i > 0 && is_word(raw[i - 1])) continue;
    if (lower(raw.substr(i, 6)) != "select") continue;
    if (i + 6 < raw.size() && is_word(raw[i + 6])) continue;
    std::string sql;
    if (accept_candidate(raw.substr(i), sql)) return sql;
  }
  return std::nullopt;
}

std::vector<std::string> split_linked_items(const std::string& text) {
  std::vector<std::string> items;
  std::string cur;
  for (char c : text) {
    if (c == ';') {
      std::string item = trim(cur);
      if (!item.empty()) items.push_back(item);
      cur.clear();
    } else {
      cur += c;
    }
  }
  std::string item = trim(cur);
  if (!item.empty()) items.push_back(item);
  return items;
}

}  // namespace

ParsedResponse parse_response(const PromptStrategy& strategy, const std::string& raw) {
  ParsedResponse result;
  result.raw = raw;
  auto lines = split_lines(raw);

  std::optional<std::string> sql = last_fenced_sql(lines);
  if (!sql) sql = last_labeled_sql(lines);

  if (strategy.kind == StrategyKind::ClauseByClause) {
    sqlkit::ClauseSet cs;
    bool any = false;
    for (const auto& line : lines) {
      auto step = clause_step(line);
      if (!step) continue;
      any = true;
      if (absent_marker(step->second)) continue;
      const std::string& name = step->first;
      if (name == "SELECT") cs.select = step->second;
      else if (name == "FROM") cs.from_ = step->second;
      else if (name == "WHERE") cs.where_ = step->second;
      else if (name == "GROUP BY") cs.group_by = step->second;
      else if (name == "HAVING") cs.having = step->second;
      else if (name == "ORDER BY") cs.order_by = step->second;
      else if (name == "LIMIT") cs.limit = step->second;
    }
    if (any) {
      result.clauses = cs;
      if (!sql) {
        try {
          std::string assembled = sqlkit::assemble_clauses(cs);
          std::string candidate;
          if (accept_candidate(assembled, candidate)) sql = candidate;
        } catch (const sqlkit::IncompleteClauseSet&) {
        }
      }
    }
  }

  if (strategy.kind == StrategyKind::SchemaLinking) {
    for (size_t i = lines.size(); i-- > 0;) {
      auto content = after_label(lines[i], "Relevant schema");
      if (!content) continue;
      auto items = split_linked_items(*content);
      if (!items.empty()) result.linked_schema = items;
      break;
    }
  }

  if (!sql) sql = first_select_suffix(raw);
  if (!sql) throw NoSqlFound(raw);
  result.final_sql = *sql;
  return result;
}

std::vector<DemoCorpusEntry> load_demo_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open demonstration corpus " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw CorpusError(path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw CorpusError(path.string() + ": top level is not an array");

  std::vector<DemoCorpusEntry> corpus;
  for (size_t i = 0; i < j.size(); ++i) {
    const auto& entry = j[i];
    auto fail = [&](const std::string& reason) -> CorpusError {
      return CorpusError(path.string() + " entry " + std::to_string(i) + ": " + reason);
    };
    if (!entry.is_object()) throw fail("not an object");
    for (const char* field : {"question", "db_id", "sql", "schema"})
      if (!entry.contains(field) || !entry[field].is_string())
        throw fail(std::string("missing string field '") + field + "'");

    DemoCorpusEntry out;
    out.question = entry["question"].get<std::string>();
    out.db_id = entry["db_id"].get<std::string>();
    out.sql = entry["sql"].get<std::string>();
    out.schema_text = entry["schema"].get<std::string>();
    try {
      sqlkit::split_clauses(out.sql);
    } catch (const sqlkit::ParseError& e) {
      throw fail(std::string("sql does not parse: ") + e.what());
    }
    if (entry.contains("reasoning")) {
      if (!entry["reasoning"].is_object()) throw fail("reasoning is not an object");
      for (const auto& [key, steps] : entry["reasoning"].items()) {
        if (!steps.is_array()) throw fail("reasoning." + key + " is not an array");
        std::vector<std::string> chain;
        for (const auto& step : steps) {
          if (!step.is_string()) throw fail("reasoning." + key + " holds a non-string step");
          chain.push_back(step.get<std::string>());
        }
        out.reasoning[key] = std::move(chain);
      }
    }
    corpus.push_back(std::move(out));
  }
  return corpus;
}

Demonstration demo_for(const DemoCorpusEntry& entry, StrategyKind kind) {
  Demonstration demo{entry.question, entry.db_id, entry.sql, entry.schema_text, {}};
  auto it = entry.reasoning.find(strategy_key(kind));
  if (it != entry.reasoning.end()) demo.reasoning = it->second;
  return demo;
}

}  // namespace dnp::prompts
