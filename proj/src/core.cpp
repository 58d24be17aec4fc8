#include "quite/core.hpp"

#include <array>
#include <cmath>
#include <utility>

#include <fmt/format.h>

namespace quite {

SqlQuery::SqlQuery(std::string text, Dialect dialect) : text_(std::move(text)), dialect_(dialect) {
    if (text_.find_first_not_of(" \t\r\n") == std::string::npos) {
        throw std::invalid_argument("SqlQuery text must be non-empty");
    }
}

namespace {

constexpr std::array<std::pair<RefinementKind, std::string_view>, 8> kKindNames{{
    {RefinementKind::join_reorder, "join_reorder"},
    {RefinementKind::predicate_pushdown, "predicate_pushdown"},
    {RefinementKind::cte_conversion, "cte_conversion"},
    {RefinementKind::subquery_flatten, "subquery_flatten"},
    {RefinementKind::constant_fold, "constant_fold"},
    {RefinementKind::predicate_simplify, "predicate_simplify"},
    {RefinementKind::redundant_elim, "redundant_elim"},
    {RefinementKind::other, "other"},
}};

}  // namespace

std::string_view to_string(RefinementKind kind) noexcept {
    for (const auto& [k, name] : kKindNames) {
        if (k == kind) return name;
    }
    return "other";
}

std::optional<RefinementKind> refinement_kind_from_string(std::string_view name) {
    for (const auto& [k, n] : kKindNames) {
        if (n == name) return k;
    }
    return std::nullopt;
}

QueryState transition(const QueryState& state, const RefinementAction& action) {
    if (action.resulting_sql.text() == state.sql.text() &&
        (action.kind != RefinementKind::other || action.label.empty())) {
        throw std::invalid_argument("refinement must change the SQL or be an explained `other` action");
    }
    QueryState next = state;
    next.sql = action.resulting_sql;
    next.applied_refinements.push_back(action);
    return next;
}

FinalQuery transition(const QueryState& state, Terminal) {
    return FinalQuery{state.sql, state.applied_refinements};
}

TransitionResult transition(const QueryState& state, const Transition& action) {
    return std::visit([&](const auto& a) -> TransitionResult { return transition(state, a); }, action);
}

std::string_view to_string(CostSource source) noexcept {
    switch (source) {
        case CostSource::explain: return "explain";
        case CostSource::llm_judgment: return "llm_judgment";
        case CostSource::blended: return "blended";
    }
    return "explain";
}

CostEstimate CostEstimate::from_explain(double startup_cost, double total_cost) {
    if (!(total_cost >= 0.0) || !(startup_cost >= 0.0)) {
        throw std::invalid_argument("EXPLAIN costs must be non-negative");
    }
    if (startup_cost > total_cost) {
        throw std::invalid_argument("EXPLAIN startup cost exceeds total cost");
    }
    return CostEstimate{total_cost, startup_cost, CostSource::explain};
}

std::optional<CostEstimate> preferred_cost(const std::optional<CostEstimate>& explain,
                                           const std::optional<CostEstimate>& llm) {
    if (explain) return explain;
    return llm;
}

Reward reward(const CostEstimate& before, const CostEstimate& after) noexcept {
    return Reward{before.total_cost - after.total_cost};
}

double discounted_return(const std::vector<double>& rewards, double discount) {
    double sum = 0.0;
    double weight = 1.0;
    for (double r : rewards) {
        sum += weight * r;
        weight *= discount;
    }
    return sum;
}

std::string DecisionReport::render() const {
    return fmt::format(
        "COST CHANGES: {:.2f} -> {:.2f} (delta {:+.2f})\n"
        "PLAN CHARACTERISTICS: {}\n"
        "RESOURCE UTILIZATION: {}\n"
        "OTHER IMPROVEMENTS: {}\n"
        "VERDICT: {}",
        cost_changes.before.total_cost, cost_changes.after.total_cost, cost_changes.delta,
        plan_characteristics, resource_utilization, other_improvements, verdict ? "TRUE" : "FALSE");
}

std::string_view to_string(OutcomeVerdict verdict) noexcept {
    switch (verdict) {
        case OutcomeVerdict::verified_tool: return "verified_tool";
        case OutcomeVerdict::verified_llm: return "verified_llm";
        case OutcomeVerdict::fallback_original: return "fallback_original";
    }
    return "fallback_original";
}

}  // namespace quite
