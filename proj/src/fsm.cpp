#include "quite/fsm.hpp"

#include <algorithm>
#include <map>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "quite/sql.hpp"

namespace quite::fsm {

std::string_view to_string(FsmState s) noexcept {
    switch (s) {
        case FsmState::reasoning: return "Reasoning";
        case FsmState::verification: return "Verification";
        case FsmState::decision: return "Decision";
        case FsmState::termination: return "Termination";
    }
    return "Termination";
}

std::string_view to_string(Cause c) noexcept {
    switch (c) {
        case Cause::proposed: return "proposed";
        case Cause::early_stop: return "early_stop";
        case Cause::empty_chain: return "empty_chain";
        case Cause::verified: return "verified";
        case Cause::repair_abort: return "repair_abort";
        case Cause::verification_fallback: return "verification_fallback";
        case Cause::accepted: return "accepted";
        case Cause::rejected: return "rejected";
        case Cause::budget_exhausted: return "budget_exhausted";
    }
    return "proposed";
}

const std::vector<std::pair<FsmState, FsmState>>& legal_transitions() {
    static const std::vector<std::pair<FsmState, FsmState>> table = {
        {FsmState::reasoning, FsmState::verification}, {FsmState::reasoning, FsmState::termination},
        {FsmState::verification, FsmState::decision},  {FsmState::verification, FsmState::reasoning},
        {FsmState::decision, FsmState::termination},   {FsmState::decision, FsmState::reasoning},
    };
    return table;
}

bool is_legal(FsmState from, FsmState to) noexcept {
    const auto& t = legal_transitions();
    return std::find(t.begin(), t.end(), std::pair{from, to}) != t.end();
}

bool deadlock_free() {
    constexpr FsmState all[] = {FsmState::reasoning, FsmState::verification, FsmState::decision,
                                FsmState::termination};
    for (auto [from, to] : legal_transitions())
        if (from == FsmState::termination) return false;
    for (FsmState start : all) {
        std::vector<FsmState> frontier{start};
        std::vector<FsmState> seen{start};
        bool reached = start == FsmState::termination;
        while (!frontier.empty() && !reached) {
            const FsmState s = frontier.back();
            frontier.pop_back();
            for (auto [from, to] : legal_transitions()) {
                if (from != s || std::find(seen.begin(), seen.end(), to) != seen.end()) continue;
                if (to == FsmState::termination) reached = true;
                seen.push_back(to);
                frontier.push_back(to);
            }
        }
        if (!reached) return false;
    }
    return true;
}

int FsmTrace::reasoning_entries() const {
    if (entries.empty()) return 0;
    int n = 1;
    for (const auto& e : entries) {
        if (e.to == FsmState::reasoning) ++n;
        if (e.from == FsmState::reasoning && e.cause == Cause::budget_exhausted) --n;
    }
    return n;
}

bool FsmTrace::well_formed() const {
    if (entries.empty() || entries.front().from != FsmState::reasoning) return false;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (!is_legal(entries[i].from, entries[i].to)) return false;
        if (i > 0 && entries[i - 1].to != entries[i].from) return false;
    }
    return entries.back().to == FsmState::termination;
}

namespace {

bool same_text(const SqlQuery& a, const SqlQuery& b) {
    return sql::normalize_whitespace(a.text()) == sql::normalize_whitespace(b.text());
}

struct Verified {
    SqlQuery sql;
    db::ExplainResult explain;
    OutcomeVerdict verdict;
    std::vector<RefinementAction> refinements;
};

std::vector<RefinementAction> refinements_for(const agents::RewriteResult& rw, const SqlQuery& verified) {
    std::vector<RefinementAction> out;
    if (auto best = agents::select_candidate(rw.proposals)) out.push_back(rw.proposals[*best].action);
    if (!same_text(rw.enhanced, rw.selected) && !rw.proposals.empty()) out.push_back(rw.proposals.back().action);
    if (!same_text(verified, rw.enhanced))
        out.push_back({RefinementKind::other, "corrector", "adjusted during verification", verified});
    return out;
}

QueryState replay(const SqlQuery& q0, const std::vector<RefinementAction>& actions) {
    QueryState s(q0);
    for (const auto& a : actions) {
        try {
            s = transition(s, a);
        } catch (const std::invalid_argument&) {
        }
    }
    return s;
}

}  // namespace

RunResult run(const SqlQuery& q0, const Dependencies& deps, const FsmConfig& config) {
    const auto& ag = deps.agents;
    if (!ag.reasoning || !ag.rewrite || !ag.assistant || !ag.decision)
        throw PreconditionViolation("every agent needs an LLM binding");
    if (!deps.corrector || !deps.db) throw PreconditionViolation("corrector and database are required");
    if (config.max_iterations < 0) throw PreconditionViolation("max_iterations must be non-negative");

    static const kb::Corpus kEmptyCorpus;
    const kb::Corpus& corpus = deps.kb ? *deps.kb : kEmptyCorpus;
    db::Database& db = *deps.db;
    const corrector::Corrector& corrector = *deps.corrector;

    RunResult result{RewriteSession(q0, config.max_iterations), {}};
    RewriteSession& s = result.session;
    s.buffer = membuf::MemoryBuffer(config.slice_cap);
    FsmTrace& trace = result.trace;

    const auto syntax = corrector.check_syntax(q0);
    if (!syntax.ok) throw PreconditionViolation("input query fails the syntax check: " + syntax.server_message.value_or(""));

    std::optional<db::ExplainResult> baseline;
    DecisionReport last_report;
    std::optional<DecisionReport> accepted_report;
    std::optional<Verified> accepted;
    std::vector<Verified> verified;
    std::vector<RefinementAction> all_proposals;

    try {
        baseline = db.explain(q0);
        last_report.cost_changes = {baseline->cost, baseline->cost, 0.0};
        s.buffer.put(membuf::SliceKind::query_info, "Original query:\n" + q0.text(), 0);
        s.buffer.put(membuf::SliceKind::plan_summary, baseline->plan.summary(), 0);

        std::vector<std::string> tables;
        try {
            tables = sql::analyze(q0.text()).base_tables();
        } catch (const sql::SyntaxError&) {
        }

        FsmState state = FsmState::reasoning;
        bool exhausted = false;
        std::optional<agents::RewriteResult> rw;
        std::optional<SqlQuery> early_candidate;
        std::optional<Verified> under_review;

        auto move = [&](FsmState to, Cause cause, std::string note) {
            trace.entries.push_back({state, to, s.iteration, cause, std::move(note)});
            spdlog::debug("fsm {} -> {} ({}), t={}", to_string(state), to_string(to), to_string(cause), s.iteration);
            state = to;
        };
        auto back_to_reasoning = [&](Cause cause, std::string note) {
            move(FsmState::reasoning, cause, std::move(note));
            if (s.iteration < s.max_iterations)
                ++s.iteration;
            else
                exhausted = true;
        };

        while (state != FsmState::termination) {
            switch (state) {
                case FsmState::reasoning: {
                    if (exhausted) {
                        move(FsmState::termination, Cause::budget_exhausted, "iteration budget spent");
                        break;
                    }
                    ++s.reasoning_entries;
                    db::StatsSnapshot stats;
                    if (!tables.empty()) {
                        try {
                            stats = db.snapshot_stats(tables);
                        } catch (const db::ConnectionError&) {
                            throw;
                        } catch (const db::DbError& e) {
                            spdlog::warn("statistics unavailable: {}", e.what());
                        }
                    }
                    agents::ReasoningChain chain;
                    try {
                        chain = agents::reasoning_generate(q0, stats, baseline->plan, s.buffer, s.iteration,
                                                           *ag.reasoning);
                    } catch (const agents::EmptyChain& e) {
                        move(FsmState::termination, Cause::empty_chain, e.what());
                        break;
                    }
                    rw = agents::rewrite_select_and_enhance(q0, baseline->cost, chain, db, *ag.rewrite, config.mdp);
                    for (const auto& p : rw->proposals) all_proposals.push_back(p.action);
                    s.buffer.put(membuf::SliceKind::rewrite_proposals, agents::render_proposals(rw->proposals),
                                 s.iteration);
                    if (rw->early_stop) {
                        early_candidate = rw->enhanced;
                        move(FsmState::termination, Cause::early_stop, rw->reason);
                    } else {
                        move(FsmState::verification, Cause::proposed, rw->reason);
                    }
                    break;
                }
                case FsmState::verification: {
                    try {
                        auto ar = agents::assistant_verify(q0, rw->enhanced, corrector, *ag.assistant);
                        if (ar.verify.outcome == OutcomeVerdict::fallback_original) {
                            back_to_reasoning(Cause::verification_fallback, ar.verify.verdict.evidence);
                            break;
                        }
                        db::ExplainResult ex;
                        try {
                            ex = db.explain(ar.verify.query);
                        } catch (const db::ConnectionError&) {
                            throw;
                        } catch (const db::DbError& e) {
                            back_to_reasoning(Cause::verification_fallback,
                                              fmt::format("verified query failed EXPLAIN: {}", e.what()));
                            break;
                        }
                        under_review = Verified{ar.verify.query, std::move(ex), ar.verify.outcome,
                                                refinements_for(*rw, ar.verify.query)};
                        verified.push_back(*under_review);
                        move(FsmState::decision, Cause::verified, ar.verify.verdict.evidence);
                    } catch (const agents::AbortIteration& e) {
                        back_to_reasoning(Cause::repair_abort, e.what());
                    }
                    break;
                }
                case FsmState::decision: {
                    auto dr = agents::decision_judge(q0, under_review->sql, *baseline, under_review->explain,
                                                     *ag.decision, corpus, s.buffer, s.iteration, rw->proposals,
                                                     config.kb_k);
                    last_report = dr.report;
                    if (dr.verdict) {
                        accepted = under_review;
                        accepted_report = dr.report;
                        move(FsmState::termination, Cause::accepted, "decision agent accepted the rewrite");
                        break;
                    }
                    for (const auto& r : dr.retrieved) s.advanced_knowledge.insert(r.entry.id);
                    if (s.iteration < s.max_iterations) {
                        move(FsmState::reasoning, Cause::rejected,
                             fmt::format("retrieved {} knowledge entries", dr.retrieved.size()));
                        ++s.iteration;
                    } else {
                        move(FsmState::termination, Cause::budget_exhausted, "rejected with no iterations left");
                    }
                    break;
                }
                case FsmState::termination: break;
            }
        }

        // Early stop skips Verification; the candidate still has to pass it
        // before it may leave the engine.
        if (early_candidate && !same_text(*early_candidate, q0)) {
            try {
                auto ar = agents::assistant_verify(q0, *early_candidate, corrector, *ag.assistant);
                if (ar.verify.outcome != OutcomeVerdict::fallback_original) {
                    auto ex = db.explain(ar.verify.query);
                    verified.push_back({ar.verify.query, std::move(ex), ar.verify.outcome,
                                        rw ? refinements_for(*rw, ar.verify.query) : std::vector<RefinementAction>{}});
                }
            } catch (const agents::AbortIteration& e) {
                spdlog::info("early-stop candidate failed verification: {}", e.what());
            } catch (const db::ConnectionError&) {
                throw;
            } catch (const db::DbError& e) {
                spdlog::info("early-stop candidate failed EXPLAIN: {}", e.what());
            }
        }

        const Verified* chosen = accepted ? &*accepted : nullptr;
        if (!chosen) {
            for (const auto& v : verified) {
                if (v.explain.cost.total_cost >= baseline->cost.total_cost) continue;
                if (!chosen || v.explain.cost.total_cost < chosen->explain.cost.total_cost) chosen = &v;
            }
        }
        if (chosen && !corrector.check_syntax(chosen->sql).ok) {
            spdlog::warn("chosen rewrite failed the final syntax gate; returning the original");
            chosen = nullptr;
        }

        if (chosen) {
            DecisionReport report = accepted_report ? *accepted_report : agents::draft_report(*baseline, chosen->explain);
            s.current = replay(q0, chosen->refinements);
            s.outcome = RewriteOutcome{chosen->sql, chosen->explain.cost, std::move(report), all_proposals,
                                       chosen->verdict};
        } else {
            s.outcome = RewriteOutcome{q0, baseline->cost, last_report, all_proposals,
                                       OutcomeVerdict::fallback_original};
        }
    } catch (const db::ConnectionError& e) {
        spdlog::error("connection lost during rewrite: {}", e.what());
        trace.failed = true;
        trace.failure = std::string("database: ") + e.what();
    } catch (const llm::TransportError& e) {
        spdlog::error("LLM provider failed during rewrite: {}", e.what());
        trace.failed = true;
        trace.failure = std::string("llm: ") + e.what();
    } catch (const llm::BudgetExceeded& e) {
        spdlog::error("LLM budget exhausted during rewrite: {}", e.what());
        trace.failed = true;
        trace.failure = std::string("llm: ") + e.what();
    }
    if (trace.failed) {
        s.current = QueryState(q0);
        s.outcome = RewriteOutcome{q0, baseline ? baseline->cost : CostEstimate{}, last_report, all_proposals,
                                   OutcomeVerdict::fallback_original};
    }
    return result;
}

}  // namespace quite::fsm
