#include "dnp/sqlkit.hpp"

#include <algorithm>
#include <array>
#include <cctype>

namespace dnp::sqlkit {

namespace {

bool is_word_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)); }

std::string to_upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return s;
}

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return s.substr(b, e - b);
}

}  // namespace

std::vector<Token> tokenize(const std::string& sql) {
  std::vector<Token> out;
  int depth = 0;
  size_t i = 0;
  const size_t n = sql.size();
  while (i < n) {
    char c = sql[i];
    if (is_space(c)) {
      ++i;
      continue;
    }
    if (c == '-' && i + 1 < n && sql[i + 1] == '-') {
      while (i < n && sql[i] != '\n') ++i;
      continue;
    }
    if (c == '/' && i + 1 < n && sql[i + 1] == '*') {
      size_t close = sql.find("*/", i + 2);
      if (close == std::string::npos)
        throw ParseError("unterminated block comment", i, "*/");
      i = close + 2;
      continue;
    }
    size_t start = i;
    if (c == '\'' || c == '"') {
      char q = c;
      ++i;
      for (;;) {
        if (i >= n) throw ParseError("unterminated quoted text", start, std::string(1, q));
        if (sql[i] == q) {
          if (i + 1 < n && sql[i + 1] == q) {
            i += 2;  // doubled quote escape
            continue;
          }
          ++i;
          break;
        }
        ++i;
      }
      out.push_back({q == '\'' ? Token::Kind::String : Token::Kind::QuotedIdent,
                     sql.substr(start, i - start), "", start, depth});
      continue;
    }
    if (c == '`' || c == '[') {
      char close = (c == '`') ? '`' : ']';
      ++i;
      while (i < n && sql[i] != close) ++i;
      if (i >= n) throw ParseError("unterminated quoted identifier", start, std::string(1, close));
      ++i;
      out.push_back({Token::Kind::QuotedIdent, sql.substr(start, i - start), "", start, depth});
      continue;
    }
    if (is_word_start(c)) {
      ++i;
      while (i < n && is_word_char(sql[i])) ++i;
      std::string text = sql.substr(start, i - start);
      out.push_back({Token::Kind::Word, text, to_upper(text), start, depth});
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '.' && i + 1 < n && std::isdigit(static_cast<unsigned char>(sql[i + 1])))) {
      ++i;
      while (i < n && (std::isalnum(static_cast<unsigned char>(sql[i])) || sql[i] == '.' ||
                       ((sql[i] == '+' || sql[i] == '-') && (sql[i - 1] == 'e' || sql[i - 1] == 'E'))))
        ++i;
      out.push_back({Token::Kind::Number, sql.substr(start, i - start), "", start, depth});
      continue;
    }
    if (c == '(') {
      out.push_back({Token::Kind::Punct, "(", "(", start, depth});
      ++depth;
      ++i;
      continue;
    }
    if (c == ')') {
      --depth;
      if (depth < 0) throw ParseError("unbalanced ')'", start, "(");
      out.push_back({Token::Kind::Punct, ")", ")", start, depth});
      ++i;
      continue;
    }
    // operators and other punctuation, longest-match for two-char operators
    static const std::array<const char*, 6> two = {"<=", ">=", "<>", "!=", "||", "=="};
    std::string text(1, c);
    if (i + 1 < n) {
      std::string pair = sql.substr(i, 2);
      for (const char* op : two)
        if (pair == op) {
          text = pair;
          break;
        }
    }
    i += text.size();
    out.push_back({Token::Kind::Punct, text, text, start, depth});
  }
  if (depth != 0) throw ParseError("unbalanced '('", n, ")");
  return out;
}

const char* difficulty_name(DifficultyLevel level) {
  switch (level) {
    case DifficultyLevel::Easy: return "easy";
    case DifficultyLevel::Medium: return "medium";
    case DifficultyLevel::Hard: return "hard";
    case DifficultyLevel::Extra: return "extra";
  }
  return "easy";
}

std::optional<DifficultyLevel> difficulty_from_name(const std::string& name) {
  std::string low;
  for (char c : name) low.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (low == "easy") return DifficultyLevel::Easy;
  if (low == "medium") return DifficultyLevel::Medium;
  if (low == "hard") return DifficultyLevel::Hard;
  if (low == "extra") return DifficultyLevel::Extra;
  return std::nullopt;
}

namespace {

enum ClauseId { kSelect = 0, kFrom, kWhere, kGroupBy, kHaving, kOrderBy, kLimit, kClauseCount };

bool is_set_op(const Token& t) {
  return t.kind == Token::Kind::Word &&
         (t.upper == "UNION" || t.upper == "INTERSECT" || t.upper == "EXCEPT");
}

// Returns the clause started by tokens[i] at top level, or nullopt.
std::optional<ClauseId> clause_at(const std::vector<Token>& toks, size_t i) {
  const Token& t = toks[i];
  if (t.kind != Token::Kind::Word || t.depth != 0) return std::nullopt;
  if (t.upper == "SELECT") return kSelect;
  if (t.upper == "FROM") return kFrom;
  if (t.upper == "WHERE") return kWhere;
  if (t.upper == "HAVING") return kHaving;
  if (t.upper == "LIMIT") return kLimit;
  if ((t.upper == "GROUP" || t.upper == "ORDER") && i + 1 < toks.size() &&
      toks[i + 1].kind == Token::Kind::Word && toks[i + 1].upper == "BY")
    return t.upper == "GROUP" ? kGroupBy : kOrderBy;
  return std::nullopt;
}

}  // namespace

ClauseSet split_clauses(const std::string& sql) {
  auto toks = tokenize(sql);
  if (toks.empty()) throw ParseError("empty input", 0, "SELECT");
  if (toks[0].kind != Token::Kind::Word || toks[0].upper != "SELECT")
    throw ParseError("statement does not start with SELECT", toks[0].pos, "SELECT");

  // clause start token index, or npos when absent
  std::array<size_t, kClauseCount> starts;
  starts.fill(std::string::npos);
  starts[kSelect] = 0;
  size_t tail_start = std::string::npos;

  int last_clause = kSelect;
  for (size_t i = 1; i < toks.size(); ++i) {
    if (toks[i].depth != 0) continue;
    if (is_set_op(toks[i])) {
      tail_start = i;
      break;
    }
    if (auto id = clause_at(toks, i)) {
      if (starts[*id] != std::string::npos)
        throw ParseError("duplicate clause", toks[i].pos, "end of clause list");
      if (*id <= last_clause)
        throw ParseError("clause out of canonical order", toks[i].pos, "later clause");
      starts[*id] = i;
      last_clause = *id;
    }
  }
  if (starts[kFrom] == std::string::npos)
    throw ParseError("missing FROM clause", sql.size(), "FROM");

  // byte offset where the clause beginning at token index `ti` ends
  auto span_end = [&](size_t ti) -> size_t {
    size_t best = (tail_start == std::string::npos) ? sql.size() : toks[tail_start].pos;
    for (size_t id = 0; id < kClauseCount; ++id)
      if (starts[id] != std::string::npos && starts[id] > ti)
        best = std::min(best, toks[starts[id]].pos);
    return best;
  };
  auto text_of = [&](size_t ti) {
    size_t b = toks[ti].pos;
    return trim(sql.substr(b, span_end(ti) - b));
  };

  ClauseSet cs;
  cs.select = text_of(starts[kSelect]);
  cs.from_ = text_of(starts[kFrom]);
  auto opt = [&](ClauseId id) -> std::optional<std::string> {
    if (starts[id] == std::string::npos) return std::nullopt;
    return text_of(starts[id]);
  };
  cs.where_ = opt(kWhere);
  cs.group_by = opt(kGroupBy);
  cs.having = opt(kHaving);
  cs.order_by = opt(kOrderBy);
  cs.limit = opt(kLimit);
  if (tail_start != std::string::npos)
    cs.trailing_set_op = trim(sql.substr(toks[tail_start].pos));
  return cs;
}

namespace {

// If `text` starts with the given keyword words (case-insensitive, word
// boundaries), returns the remainder after them; otherwise nullopt.
std::optional<std::string> strip_keyword(const std::string& text,
                                         const std::vector<std::string>& words) {
  size_t i = 0;
  for (size_t w = 0; w < words.size(); ++w) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::string& kw = words[w];
    if (i + kw.size() > text.size()) return std::nullopt;
    for (size_t k = 0; k < kw.size(); ++k)
      if (std::toupper(static_cast<unsigned char>(text[i + k])) != kw[k]) return std::nullopt;
    if (i + kw.size() < text.size() && is_word_char(text[i + kw.size()])) return std::nullopt;
    i += kw.size();
  }
  size_t b = i;
  while (b < text.size() && is_space(text[b])) ++b;
  return text.substr(b);
}

std::vector<std::string> keyword_words(const std::string& canonical) {
  std::vector<std::string> words;
  size_t b = 0;
  while (b < canonical.size()) {
    size_t e = canonical.find(' ', b);
    if (e == std::string::npos) e = canonical.size();
    words.push_back(canonical.substr(b, e - b));
    b = e + 1;
  }
  return words;
}

}  // namespace

std::string assemble_clauses(const ClauseSet& cs) {
  if (trim(cs.select).empty()) throw IncompleteClauseSet("select clause is required");
  if (trim(cs.from_).empty()) throw IncompleteClauseSet("from clause is required");

  std::string out;
  auto emit = [&](const std::string& canonical, const std::string& raw) {
    std::string body = trim(raw);
    if (body.empty()) return;
    if (auto rest = strip_keyword(body, keyword_words(canonical))) body = *rest;
    if (!out.empty()) out += ' ';
    out += canonical;
    if (!body.empty()) {
      out += ' ';
      out += body;
    }
  };
  emit("SELECT", cs.select);
  emit("FROM", cs.from_);
  if (cs.where_) emit("WHERE", *cs.where_);
  if (cs.group_by) emit("GROUP BY", *cs.group_by);
  if (cs.having) emit("HAVING", *cs.having);
  if (cs.order_by) emit("ORDER BY", *cs.order_by);
  if (cs.limit) emit("LIMIT", *cs.limit);
  if (cs.trailing_set_op) {
    std::string tail = trim(*cs.trailing_set_op);
    if (!tail.empty()) {
      for (const char* op : {"UNION ALL", "UNION", "INTERSECT", "EXCEPT"}) {
        if (auto rest = strip_keyword(tail, keyword_words(op))) {
          tail = std::string(op) + ' ' + *rest;
          break;
        }
      }
      out += ' ';
      out += tail;
    }
  }
  return out;
}

namespace {

bool is_agg_name(const std::string& upper) {
  return upper == "COUNT" || upper == "SUM" || upper == "AVG" || upper == "MIN" ||
         upper == "MAX";
}

struct ClauseScan {
  int commas = 0;
  int joins = 0;
  int ors = 0;
  int likes = 0;
  int connectors = 0;  // AND/OR between conditions, BETWEEN..AND excluded
  int aggs = 0;
  int cond_subqueries = 0;  // "(SELECT" at top level, in condition position
};

// Scans one clause body. `conds_after_on`: when true, subqueries count only
// inside ON condition regions (FROM clause); otherwise everywhere.
ClauseScan scan_clause(const std::string& clause_text, bool conds_after_on) {
  ClauseScan s;
  auto toks = tokenize(clause_text);
  int pending_between = 0;
  bool in_on = false;
  for (size_t i = 0; i < toks.size(); ++i) {
    const Token& t = toks[i];
    if (t.depth != 0) continue;
    if (t.kind == Token::Kind::Punct && t.text == ",") {
      ++s.commas;
      in_on = false;
      continue;
    }
    if (t.kind == Token::Kind::Punct && t.text == "(") {
      if (i + 1 < toks.size() && toks[i + 1].kind == Token::Kind::Word &&
          toks[i + 1].upper == "SELECT" && (!conds_after_on || in_on))
        ++s.cond_subqueries;
      continue;
    }
    if (t.kind != Token::Kind::Word) continue;
    if (t.upper == "JOIN") {
      ++s.joins;
      in_on = false;
    } else if (t.upper == "ON") {
      in_on = true;
    } else if (t.upper == "BETWEEN") {
      ++pending_between;
    } else if (t.upper == "AND") {
      if (pending_between > 0)
        --pending_between;
      else
        ++s.connectors;
    } else if (t.upper == "OR") {
      ++s.ors;
      ++s.connectors;
    } else if (t.upper == "LIKE") {
      ++s.likes;
    } else if (is_agg_name(t.upper) && i + 1 < toks.size() && toks[i + 1].text == "(") {
      ++s.aggs;
    }
  }
  return s;
}

}  // namespace

DifficultyCounts difficulty_counts(const std::string& sql) {
  ClauseSet cs = split_clauses(sql);
  DifficultyCounts dc;

  ClauseScan sel = scan_clause(cs.select, false);
  ClauseScan from = scan_clause(cs.from_, true);
  ClauseScan where = cs.where_ ? scan_clause(*cs.where_, false) : ClauseScan{};
  ClauseScan group = cs.group_by ? scan_clause(*cs.group_by, false) : ClauseScan{};
  ClauseScan having = cs.having ? scan_clause(*cs.having, false) : ClauseScan{};
  ClauseScan order = cs.order_by ? scan_clause(*cs.order_by, false) : ClauseScan{};

  dc.component1 += cs.where_ ? 1 : 0;
  dc.component1 += cs.group_by ? 1 : 0;
  dc.component1 += cs.order_by ? 1 : 0;
  dc.component1 += cs.limit ? 1 : 0;
  dc.component1 += from.commas + from.joins;  // table units beyond the first
  dc.component1 += where.ors + having.ors + from.ors;
  dc.component1 += where.likes + having.likes + from.likes;

  dc.component2 += where.cond_subqueries + having.cond_subqueries + from.cond_subqueries;
  dc.component2 += cs.trailing_set_op ? 1 : 0;

  int aggs = sel.aggs + where.aggs + group.aggs + order.aggs + having.aggs;
  if (aggs > 1) ++dc.others;
  if (sel.commas > 0) ++dc.others;
  if (where.connectors > 0) ++dc.others;
  if (group.commas > 0) ++dc.others;
  return dc;
}

DifficultyLevel classify_difficulty(const std::string& sql) {
  DifficultyCounts d = difficulty_counts(sql);
  const int c1 = d.component1, c2 = d.component2, ot = d.others;
  if (c1 <= 1 && ot == 0 && c2 == 0) return DifficultyLevel::Easy;
  if ((ot <= 2 && c1 <= 1 && c2 == 0) || (c1 <= 2 && ot < 2 && c2 == 0))
    return DifficultyLevel::Medium;
  if ((ot > 2 && c1 <= 2 && c2 == 0) || (c1 > 2 && c1 <= 3 && ot <= 2 && c2 == 0) ||
      (c1 <= 1 && ot == 0 && c2 <= 1))
    return DifficultyLevel::Hard;
  return DifficultyLevel::Extra;
}

namespace {

size_t leading_backticks(const std::string& s) {
  size_t n = 0;
  while (n < s.size() && s[n] == '`') ++n;
  return n;
}

size_t trailing_backticks(const std::string& s) {
  size_t n = 0;
  while (n < s.size() && s[s.size() - 1 - n] == '`') ++n;
  return n;
}

std::string strip_fences(std::string s) {
  size_t lead = leading_backticks(s);
  size_t tail = trailing_backticks(s);
  if (lead >= 3 || tail >= 3 || (lead == 1 && tail == 1 && s.size() >= 2)) {
    if (lead == 1 && tail == 1 && !(lead >= 3)) {
      s = s.substr(1, s.size() - 2);
    } else {
      if (lead >= 3) s.erase(0, lead);
      tail = trailing_backticks(s);
      if (tail >= 3) s.erase(s.size() - tail);
    }
    s = trim(s);
    // language tag directly after the opening fence
    static const std::array<const char*, 4> tags = {"sql", "sqlite", "mysql", "postgresql"};
    for (const char* tag : tags) {
      std::string t(tag);
      if (s.size() >= t.size()) {
        bool match = true;
        for (size_t k = 0; k < t.size(); ++k)
          if (std::tolower(static_cast<unsigned char>(s[k])) != t[k]) {
            match = false;
            break;
          }
        if (match && (s.size() == t.size() || is_space(s[t.size()]))) {
          s = trim(s.substr(t.size()));
          break;
        }
      }
    }
  }
  return s;
}

std::string strip_labels(std::string s) {
  static const std::array<const char*, 5> labels = {"final sql", "sqlite", "sql", "answer",
                                                    "query"};
  bool changed = true;
  while (changed) {
    changed = false;
    for (const char* label : labels) {
      std::string l(label);
      if (s.size() <= l.size()) continue;
      bool match = true;
      for (size_t k = 0; k < l.size(); ++k)
        if (std::tolower(static_cast<unsigned char>(s[k])) != l[k]) {
          match = false;
          break;
        }
      if (!match) continue;
      size_t i = l.size();
      while (i < s.size() && s[i] == ' ') ++i;
      if (i < s.size() && s[i] == ':') {
        s = trim(s.substr(i + 1));
        changed = true;
        break;
      }
    }
  }
  return s;
}

// Collapses whitespace runs outside quoted text. Returns the collapsed text
// and whether the string ends inside an unterminated quote.
std::pair<std::string, bool> collapse_ws(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  char quote = 0;  // ' " or ` when inside
  size_t i = 0;
  while (i < s.size()) {
    char c = s[i];
    if (quote != 0) {
      out.push_back(c);
      if (c == quote) {
        if (quote != '`' && i + 1 < s.size() && s[i + 1] == quote) {
          out.push_back(s[i + 1]);
          ++i;
        } else {
          quote = 0;
        }
      }
      ++i;
      continue;
    }
    if (c == '\'' || c == '"' || c == '`') {
      quote = c;
      out.push_back(c);
      ++i;
      continue;
    }
    if (is_space(c)) {
      while (i < s.size() && is_space(s[i])) ++i;
      if (!out.empty() && i < s.size()) out.push_back(' ');
      continue;
    }
    out.push_back(c);
    ++i;
  }
  return {out, quote != 0};
}

}  // namespace

std::string normalize_sql(const std::string& raw) {
  // Each pass only removes or collapses text, so iterating to a fixed point
  // terminates and makes the whole function idempotent.
  std::string s = trim(raw);
  std::string prev;
  do {
    prev = s;
    s = strip_fences(s);
    auto [collapsed, open_quote] = collapse_ws(s);
    s = strip_labels(collapsed);
    if (!open_quote) {
      while (!s.empty() && (s.back() == ';' || is_space(s.back()))) s.pop_back();
    }
    s = trim(s);
  } while (s != prev);
  return s;
}

bool is_order_sensitive(const std::string& gold_sql) {
  auto toks = tokenize(gold_sql);
  for (size_t i = 0; i + 1 < toks.size(); ++i) {
    if (toks[i].depth == 0 && toks[i].kind == Token::Kind::Word && toks[i].upper == "ORDER" &&
        toks[i + 1].kind == Token::Kind::Word && toks[i + 1].upper == "BY")
      return true;
  }
  return false;
}

}  // namespace dnp::sqlkit
