#include "prompt_templates.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

namespace dnp::prompts::templates {

const char* const kTaskHeader = "### Task";
const char* const kExampleHeader = "### Example ";
const char* const kSchemaLead = "Database schema:";
const char* const kQuestionLead = "Question: ";
const char* const kInitialSqlLead = "Initial SQL: ";
const char* const kSqlLabel = "SQL:";
const char* const kFinalSqlLabel = "Final SQL:";
const char* const kLinkedLabel = "Relevant schema:";
const char* const kClauseLabelTail = " clause:";
const char* const kNoneMarker = "none";

namespace {

const char* granularity_phrase(LinkGranularity g) {
  switch (g) {
    case LinkGranularity::ExactTablesAndColumns:
      return "exactly the tables and columns the query needs";
    case LinkGranularity::TablesThenColumns:
      return "the relevant tables, then for each one its relevant columns";
    case LinkGranularity::TablesWithAllColumns:
      return "the relevant tables, each with all of its columns";
  }
  return "";
}

std::string upper(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return out;
}

// Leading clause name of a corpus cc line, e.g. "GROUP BY" from
// "GROUP BY clause: country". Empty when the line carries no label.
std::string clause_line_name(const std::string& line) {
  for (const char* name : {"GROUP BY", "ORDER BY", "SELECT", "FROM", "WHERE", "HAVING", "LIMIT"}) {
    std::string label = std::string(name) + kClauseLabelTail;
    if (line.size() >= label.size() && upper(line.substr(0, label.size())) == upper(label))
      return name;
  }
  return "";
}

}  // namespace

std::string instruction_block(const PromptStrategy& strategy) {
  switch (strategy.kind) {
    case StrategyKind::Standard:
      return "Write the SQL query that answers the question. Reply with the query on one "
             "line after the label \"SQL:\".\n";

    case StrategyKind::NormalCoT:
      return "Let's think step by step, and then write the SQL query that answers the "
             "question. Put the finished query on one line after the label \"Final SQL:\".\n";

    case StrategyKind::ClauseByClause: {
      std::string out =
          "Build the SQL query one clause at a time, in the order below. Reply with one "
          "line per step.\n";
      auto sequence = clause_sequence(strategy.clause_order);
      int step = 1;
      for (const auto& name : sequence) {
        out += std::to_string(step++) + ". \"" + name + kClauseLabelTail +
               "\" followed by that clause";
        if (name == "SELECT" || name == "FROM")
          out += ".\n";
        else
          out += ", or " + std::string(kNoneMarker) + " if the query does not use it.\n";
      }
      out += std::to_string(step) + ". \"" + kFinalSqlLabel +
             "\" followed by the complete query, combining the clauses above.\n";
      return out;
    }

    case StrategyKind::SchemaLinking:
      return std::string("Answer in two steps.\n1. \"") + kLinkedLabel + "\" followed by " +
             granularity_phrase(strategy.granularity) +
             ", written as table(column, ...) items separated by semicolons.\n2. \"" +
             kFinalSqlLabel + "\" followed by the SQL query that answers the question.\n";

    case StrategyKind::GenerateRefine:
      break;
  }
  throw std::logic_error("instruction_block called with an unresolved GenerateRefine");
}

std::string refine_instruction() {
  return std::string("Check the initial SQL against the schema and the question. Fix any "
                     "mistakes, or keep it unchanged if it is already correct. Reply with the "
                     "resulting query on one line after the label \"") +
         kFinalSqlLabel + "\".\n";
}

std::string worked_answer(StrategyKind kind, const Demonstration& demo, ClauseOrder order) {
  std::string out;
  switch (kind) {
    case StrategyKind::Standard:
      return std::string(kSqlLabel) + " " + demo.sql + "\n";

    case StrategyKind::NormalCoT:
    case StrategyKind::SchemaLinking:
      for (const auto& step : demo.reasoning) out += step + "\n";
      break;

    case StrategyKind::ClauseByClause: {
      // Corpus cc chains are stored in canonical clause order; replay them in
      // the order the instruction asks for.
      for (const auto& name : clause_sequence(order)) {
        for (const auto& line : demo.reasoning)
          if (clause_line_name(line) == name) out += line + "\n";
      }
      break;
    }

    case StrategyKind::GenerateRefine:
      throw std::logic_error("worked_answer called for GenerateRefine; use refine_worked_answer");
  }
  out += std::string(kFinalSqlLabel) + " " + demo.sql + "\n";
  return out;
}

std::string refine_worked_answer(const Demonstration& demo) {
  std::string out;
  for (size_t i = 1; i < demo.reasoning.size(); ++i) out += demo.reasoning[i] + "\n";
  out += std::string(kFinalSqlLabel) + " " + demo.sql + "\n";
  return out;
}

}  // namespace dnp::prompts::templates
