#pragma once

#include <memory>
#include <string>

#include "quite/corrector.hpp"
#include "quite/db.hpp"
#include "quite/fsm.hpp"
#include "quite/kb.hpp"
#include "quite/llm.hpp"

// Scripted agents over a stub database. Every LLM role shares one mock; the
// prompt needles route each request to its script.
namespace quite::test {

inline constexpr const char* kReasoningNeedle = "step-by-step planner";
inline constexpr const char* kEnhanceNeedle = "Identify additional semantically equivalent";
inline constexpr const char* kEquivalenceNeedle = "VERDICT: NOT_EQUIVALENT";
inline constexpr const char* kDecisionNeedle = "You decide whether a query rewrite";
inline constexpr const char* kRepairNeedle = "is rejected by the server";

inline std::string fenced(const std::string& sql) { return "```sql\n" + sql + "\n```\n"; }

inline std::string chain_of(const std::string& sql, const std::string& kind = "predicate_simplify") {
    return "Step 1: " + kind + "\nDrop the implied predicate.\nExpected cost reduction: 0.5\n\n" + fenced(sql);
}

inline std::string decision(bool accept) {
    return std::string("PLAN CHARACTERISTICS: one fewer filter\nRESOURCE UTILIZATION: unchanged\n"
                       "OTHER IMPROVEMENTS: shorter predicate\nVERDICT: ") +
           (accept ? "TRUE" : "FALSE") + "\n";
}

struct FsmRig {
    db::StubDatabase stub;
    std::shared_ptr<llm::ScriptedMock> mock = std::make_shared<llm::ScriptedMock>();
    llm::Binding llm{"agents", mock, {}};
    corrector::Corrector corrector{&stub, std::make_shared<corrector::AlwaysUnknown>()};
    kb::Corpus corpus;

    SqlQuery q0{"SELECT a, b FROM t WHERE a > 10 AND a > 5"};
    SqlQuery good{"SELECT a, b FROM t WHERE a > 10"};
    SqlQuery better{"SELECT t.a, t.b FROM t WHERE t.a > 10"};
    SqlQuery wrong{"SELECT a, b FROM t WHERE a > 11"};
    SqlQuery broken{"SELECT a, b FROM t WHERE"};

    FsmRig() {
        stub.define(q0.text(), {1000.0, "rows"});
        stub.define(good.text(), {100.0, "rows"});
        stub.define(better.text(), {80.0, "rows"});
        stub.define(wrong.text(), {50.0, "other rows"});
        stub.define_table({"t", 1000.0, 10.0, {}, {}});
        kb::KbEntry e;
        e.id = "k1";
        e.question = {"Redundant range predicates on the same column", "SELECT a FROM t WHERE a > 1 AND a > 0"};
        e.answer = {"Keep only the tighter bound.", "SELECT a FROM t WHERE a > 1"};
        e.category = kb::Category::predicate_simplification;
        corpus.add(e);
    }

    FsmRig& reasoning(const std::string& response, std::optional<std::size_t> times = std::nullopt) {
        mock->when_contains(kReasoningNeedle, response, times);
        return *this;
    }
    FsmRig& enhance(const std::string& response, std::optional<std::size_t> times = std::nullopt) {
        mock->when_contains(kEnhanceNeedle, response, times);
        return *this;
    }
    FsmRig& equivalence(const std::string& response, std::optional<std::size_t> times = std::nullopt) {
        mock->when_contains(kEquivalenceNeedle, response, times);
        return *this;
    }
    FsmRig& judge(bool accept, std::optional<std::size_t> times = std::nullopt) {
        mock->when_contains(kDecisionNeedle, decision(accept), times);
        return *this;
    }
    FsmRig& repair(const std::string& response) {
        mock->when_contains(kRepairNeedle, response);
        return *this;
    }

    [[nodiscard]] fsm::RunResult run(int t_max = 2) {
        fsm::FsmConfig cfg;
        cfg.max_iterations = t_max;
        return fsm::run(q0, {fsm::AgentBindings::all(llm), &corrector, &corpus, &stub}, cfg);
    }
};

}  // namespace quite::test
