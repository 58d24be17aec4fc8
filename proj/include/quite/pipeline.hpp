#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "quite/fsm.hpp"
#include "quite/hints.hpp"

// Rewrite followed by hint injection, plus the structured report.
namespace quite::pipeline {

struct Options {
    fsm::FsmConfig fsm;
    bool inject_hints = true;
    hints::AnalyzeConfig analyze;
    hints::SelectConfig select;
};

struct Result {
    fsm::RunResult run;
    std::vector<hints::Suggestion> suggestions;
    std::optional<hints::Selection> selection;
    std::optional<db::HintCapability> capability;
    std::string hint_error;
    SqlQuery final_sql;
};

/// `hint_llm` may be null, in which case plan analysis uses the heuristics.
[[nodiscard]] Result rewrite(const SqlQuery& q, const fsm::Dependencies& deps, const llm::Binding* hint_llm,
                             const Options& options = {});

[[nodiscard]] nlohmann::json trace_json(const fsm::FsmTrace& trace);
[[nodiscard]] nlohmann::json report_json(const DecisionReport& report);
[[nodiscard]] nlohmann::json to_json(const Result& result, const std::string& transcript_path = {});

}  // namespace quite::pipeline
