#include "quite/pipeline.hpp"

#include <spdlog/spdlog.h>

#include "quite/sql.hpp"

namespace quite::pipeline {

Result rewrite(const SqlQuery& q, const fsm::Dependencies& deps, const llm::Binding* hint_llm, const Options& options) {
    Result out{fsm::run(q, deps, options.fsm), {}, std::nullopt, std::nullopt, {}, q};
    out.final_sql = out.run.outcome().final_sql;
    if (!options.inject_hints || out.run.trace.failed) return out;

    db::Database& db = *deps.db;
    const SqlQuery base = out.final_sql;
    try {
        out.capability = db.probe_hint_capability();
        if (!out.capability->available)
            spdlog::warn("hints will be injected but not enforced: {}", out.capability->detail);

        const auto plan = db.explain(base).plan;
        db::StatsSnapshot stats;
        try {
            stats = db.snapshot_stats(sql::analyze(base.text()).base_tables());
        } catch (const db::ConnectionError&) {
            throw;
        } catch (const std::exception& e) {
            spdlog::debug("no statistics for hint analysis: {}", e.what());
        }
        out.suggestions = hints::analyze_plan(base, plan, stats, hint_llm, options.analyze);
        out.selection = hints::select_hints(out.suggestions, base, db, options.select);
        out.final_sql = out.selection->hinted;
    } catch (const db::ConnectionError& e) {
        out.hint_error = e.what();
        out.run.trace.failed = true;
        out.run.trace.failure = std::string("database: ") + e.what();
        out.final_sql = q;
    } catch (const std::exception& e) {
        spdlog::warn("hint injection skipped: {}", e.what());
        out.hint_error = e.what();
        out.final_sql = base;
    }
    return out;
}

nlohmann::json trace_json(const fsm::FsmTrace& trace) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : trace.entries) {
        entries.push_back({{"from", fsm::to_string(e.from)},
                           {"to", fsm::to_string(e.to)},
                           {"iteration", e.iteration},
                           {"cause", fsm::to_string(e.cause)},
                           {"note", e.note}});
    }
    nlohmann::json j{{"entries", entries}, {"failed", trace.failed}};
    if (trace.failed) j["failure"] = trace.failure;
    return j;
}

nlohmann::json report_json(const DecisionReport& r) {
    return {{"cost_changes",
             {{"before", r.cost_changes.before.total_cost},
              {"after", r.cost_changes.after.total_cost},
              {"delta", r.cost_changes.delta}}},
            {"plan_characteristics", r.plan_characteristics},
            {"resource_utilization", r.resource_utilization},
            {"other_improvements", r.other_improvements},
            {"verdict", r.verdict}};
}

nlohmann::json to_json(const Result& result, const std::string& transcript_path) {
    const auto& s = result.run.session;
    const auto& o = result.run.outcome();
    nlohmann::json proposals = nlohmann::json::array();
    for (const auto& p : o.proposals) {
        proposals.push_back({{"kind", to_string(p.kind)},
                             {"label", p.label},
                             {"description", p.description},
                             {"sql", p.resulting_sql.text()}});
    }
    nlohmann::json hints_j = nlohmann::json::object();
    if (result.selection) {
        nlohmann::json kept = nlohmann::json::array();
        for (const auto& h : result.selection->hints.hints()) kept.push_back({{"hint", h.render()}, {"why", h.justification}});
        nlohmann::json dropped = nlohmann::json::array();
        for (const auto& d : result.selection->dropped) dropped.push_back({{"hint", d.hint.render()}, {"reason", d.reason}});
        hints_j["selected"] = kept;
        hints_j["dropped"] = dropped;
    }
    if (result.capability)
        hints_j["capability"] = {{"available", result.capability->available}, {"detail", result.capability->detail}};
    if (!result.hint_error.empty()) hints_j["error"] = result.hint_error;

    nlohmann::json j{{"original_sql", s.original.text()},
                     {"rewritten_sql", o.final_sql.text()},
                     {"final_sql", result.final_sql.text()},
                     {"cost", o.cost.total_cost},
                     {"equivalence_verdict", to_string(o.equivalence_verdict)},
                     {"iterations", s.iteration},
                     {"reasoning_entries", s.reasoning_entries},
                     {"advanced_knowledge", s.advanced_knowledge},
                     {"decision_report", report_json(o.report)},
                     {"proposals", proposals},
                     {"trace", trace_json(result.run.trace)},
                     {"hints", hints_j}};
    if (!transcript_path.empty()) j["transcript"] = transcript_path;
    return j;
}

}  // namespace quite::pipeline
