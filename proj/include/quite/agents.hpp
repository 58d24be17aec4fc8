#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "quite/core.hpp"
#include "quite/corrector.hpp"
#include "quite/db.hpp"
#include "quite/kb.hpp"
#include "quite/llm.hpp"
#include "quite/membuf.hpp"

// The four specialised agents. Each is a function over its inputs and an LLM
// binding; sessions own all mutable state.
namespace quite::agents {

class EmptyChain : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class AbortIteration : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ChainNode {
    RefinementKind kind = RefinementKind::other;
    std::string label;
    std::string proposal_text;
    std::optional<SqlQuery> sql_candidate;
    /// Expected cost reduction claimed by the model.
    std::optional<double> self_score;
};

struct ReasoningChain {
    std::vector<ChainNode> nodes;
    std::string raw_trace;
    /// The user prompt that produced the trace.
    std::string prompt;
    int attempts = 1;

    [[nodiscard]] std::size_t candidate_count() const;
};

/// Splits a reasoning trace into nodes, one per fenced SQL block, each
/// carrying the prose before it. `Step n: <kind>` and `Expected cost
/// reduction: <x>` lines in that prose set the kind and self-score.
[[nodiscard]] ReasoningChain parse_chain(std::string_view trace);

/// Reasoning agent. On iteration 0 no retrieved knowledge reaches the prompt.
/// A chain without SQL is regenerated once, then EmptyChain is thrown.
[[nodiscard]] ReasoningChain reasoning_generate(const SqlQuery& q0, const db::StatsSnapshot& stats,
                                                const db::PlanTree& plan, const membuf::MemoryBuffer& buffer,
                                                int iteration, const llm::Binding& llm);

struct RewriteProposal {
    kb::Category category = kb::Category::other;
    RefinementAction action;
    /// Discounted sum of per-step EXPLAIN cost reductions along the chain.
    double expected_reward = 0.0;
    std::optional<CostEstimate> cost;
    std::optional<double> self_score;
};

struct RewriteResult {
    /// Q^P: the best chain candidate.
    SqlQuery selected;
    /// Q^E: the candidate after the enhancement prompt.
    SqlQuery enhanced;
    std::vector<RewriteProposal> proposals;
    bool early_stop = false;
    std::string reason;
};

[[nodiscard]] kb::Category category_for(RefinementKind kind, std::string_view description, const SqlQuery& sql);

/// Rewrite agent: EXPLAINs every candidate, selects argmin total cost (ties by
/// higher self-score, then chain order), and runs the enhancement prompt.
/// Early stop when the enhancement echoes the candidate or every candidate
/// fails EXPLAIN.
[[nodiscard]] RewriteResult rewrite_select_and_enhance(const SqlQuery& original, const CostEstimate& original_cost,
                                                       const ReasoningChain& chain, db::Database& db,
                                                       const llm::Binding& llm, const MdpConfig& mdp = {});

/// Index of the winning candidate under the selection rule, or nullopt when
/// none has a cost.
[[nodiscard]] std::optional<std::size_t> select_candidate(const std::vector<RewriteProposal>& proposals);

[[nodiscard]] std::string render_proposals(const std::vector<RewriteProposal>& proposals);

struct AssistantResult {
    corrector::VerifyResult verify;
    int repair_attempts = 0;
};

/// Assistant agent: syntax check, repair if needed, then equivalence. Throws
/// AbortIteration when repair fails.
[[nodiscard]] AssistantResult assistant_verify(const SqlQuery& original, const SqlQuery& candidate,
                                               const corrector::Corrector& corrector, const llm::Binding& llm);

struct DecisionResult {
    bool verdict = false;
    DecisionReport report;
    std::vector<kb::Scored> retrieved;
    std::string raw_response;
};

/// Deterministic part of the report: cost changes and plan facts.
[[nodiscard]] DecisionReport draft_report(const db::ExplainResult& before, const db::ExplainResult& after);

/// Decision agent. A rejection (or an unparseable verdict) retrieves k entries
/// keyed on report + candidate and stores query, report, proposals and
/// knowledge in the buffer; an acceptance leaves the buffer untouched.
[[nodiscard]] DecisionResult decision_judge(const SqlQuery& original, const SqlQuery& candidate,
                                            const db::ExplainResult& before, const db::ExplainResult& after,
                                            const llm::Binding& llm, const kb::Corpus& kb,
                                            membuf::MemoryBuffer& buffer, int iteration,
                                            const std::vector<RewriteProposal>& proposals = {}, std::size_t k = 3);

[[nodiscard]] std::string render_knowledge(const std::vector<kb::Scored>& entries);

}  // namespace quite::agents
