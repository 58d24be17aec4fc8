#pragma once

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "quite/agents.hpp"
#include "quite/core.hpp"
#include "quite/corrector.hpp"
#include "quite/db.hpp"
#include "quite/kb.hpp"
#include "quite/llm.hpp"
#include "quite/membuf.hpp"

namespace quite::fsm {

enum class FsmState { reasoning, verification, decision, termination };

std::string_view to_string(FsmState s) noexcept;

enum class Cause {
    proposed,
    early_stop,
    empty_chain,
    verified,
    repair_abort,
    verification_fallback,
    accepted,
    rejected,
    budget_exhausted,
};

std::string_view to_string(Cause c) noexcept;

/// The transition table.
[[nodiscard]] const std::vector<std::pair<FsmState, FsmState>>& legal_transitions();
[[nodiscard]] bool is_legal(FsmState from, FsmState to) noexcept;
/// True when Termination is reachable from every state and has no way out.
[[nodiscard]] bool deadlock_free();

struct TraceEntry {
    FsmState from = FsmState::reasoning;
    FsmState to = FsmState::termination;
    int iteration = 0;
    Cause cause = Cause::proposed;
    std::string note;

    friend bool operator==(const TraceEntry&, const TraceEntry&) = default;
};

struct FsmTrace {
    std::vector<TraceEntry> entries;
    /// Set when a lost connection cut the run short.
    bool failed = false;
    std::string failure;

    /// Entries into Reasoning that produced a chain, the initial one included.
    [[nodiscard]] int reasoning_entries() const;
    /// First entry leaves Reasoning, entries chain, every step is legal and the
    /// last one reaches Termination.
    [[nodiscard]] bool well_formed() const;

    friend bool operator==(const FsmTrace&, const FsmTrace&) = default;
};

struct RewriteOutcome {
    SqlQuery final_sql;
    CostEstimate cost;
    DecisionReport report;
    std::vector<RefinementAction> proposals;
    OutcomeVerdict equivalence_verdict = OutcomeVerdict::fallback_original;
};

struct RewriteSession {
    SqlQuery original;
    QueryState current;
    /// t: returns to Reasoning so far.
    int iteration = 0;
    int max_iterations = 2;
    int reasoning_entries = 0;
    std::set<std::string> advanced_knowledge;
    membuf::MemoryBuffer buffer;
    std::optional<RewriteOutcome> outcome;

    explicit RewriteSession(SqlQuery q0, int t_max = 2)
        : original(q0), current(std::move(q0)), max_iterations(t_max) {}
};

struct FsmConfig {
    int max_iterations = 2;
    std::size_t kb_k = 3;
    MdpConfig mdp;
    std::size_t slice_cap = membuf::kDefaultSliceCap;
};

/// One binding per agent; they may share a provider.
struct AgentBindings {
    const llm::Binding* reasoning = nullptr;
    const llm::Binding* rewrite = nullptr;
    const llm::Binding* assistant = nullptr;
    const llm::Binding* decision = nullptr;

    static AgentBindings all(const llm::Binding& b) { return {&b, &b, &b, &b}; }
};

struct Dependencies {
    AgentBindings agents;
    const corrector::Corrector* corrector = nullptr;
    const kb::Corpus* kb = nullptr;
    db::Database* db = nullptr;
};

struct RunResult {
    RewriteSession session;
    FsmTrace trace;

    [[nodiscard]] const RewriteOutcome& outcome() const { return *session.outcome; }
};

/// Runs the rewrite loop on q0. Throws PreconditionViolation when q0 fails the
/// syntax check or a dependency is missing. A lost connection ends the run with
/// the original query and `trace.failed` set.
[[nodiscard]] RunResult run(const SqlQuery& q0, const Dependencies& deps, const FsmConfig& config = {});

}  // namespace quite::fsm
