#pragma once

#include <string>

#include "dnp/prompts.hpp"

// Canonical prompt wording. Every string that ends up in a prompt lives in
// prompt_templates.cpp so template changes stay reviewable in one file and
// the golden tests have a single source of truth.
namespace dnp::prompts::templates {

extern const char* const kTaskHeader;       // "### Task"
extern const char* const kExampleHeader;    // "### Example " (index appended)
extern const char* const kSchemaLead;       // "Database schema:"
extern const char* const kQuestionLead;     // "Question: "
extern const char* const kInitialSqlLead;   // "Initial SQL: "
extern const char* const kSqlLabel;         // "SQL:"
extern const char* const kFinalSqlLabel;    // "Final SQL:"
extern const char* const kLinkedLabel;      // "Relevant schema:"
extern const char* const kClauseLabelTail;  // " clause:"
extern const char* const kNoneMarker;       // "none"

/// Instruction block for every non-refine strategy. GenerateRefine resolves
/// to its stage-1 kind before reaching this point.
std::string instruction_block(const PromptStrategy& strategy);

std::string refine_instruction();

/// The worked answer lines of a few-shot example block.
std::string worked_answer(StrategyKind kind, const Demonstration& demo, ClauseOrder order);

/// Refine answer: commentary steps (after the consumed initial SQL) plus the
/// final line.
std::string refine_worked_answer(const Demonstration& demo);

}  // namespace dnp::prompts::templates
