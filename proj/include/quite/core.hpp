#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace quite {

enum class Dialect { postgres };

/// A SQL statement in a given dialect. Text is never empty; whether it parses
/// is checked lazily by the corrector.
class SqlQuery {
public:
    explicit SqlQuery(std::string text, Dialect dialect = Dialect::postgres);

    [[nodiscard]] const std::string& text() const noexcept { return text_; }
    [[nodiscard]] Dialect dialect() const noexcept { return dialect_; }

    friend bool operator==(const SqlQuery&, const SqlQuery&) = default;

private:
    std::string text_;
    Dialect dialect_;
};

enum class RefinementKind {
    join_reorder,
    predicate_pushdown,
    cte_conversion,
    subquery_flatten,
    constant_fold,
    predicate_simplify,
    redundant_elim,
    other,
};

std::string_view to_string(RefinementKind kind) noexcept;
std::optional<RefinementKind> refinement_kind_from_string(std::string_view name);

/// One refinement step R_t. `label` is only meaningful for `other`.
struct RefinementAction {
    RefinementKind kind = RefinementKind::other;
    std::string label;
    std::string description;
    SqlQuery resulting_sql;

    friend bool operator==(const RefinementAction&, const RefinementAction&) = default;
};

/// One state S_t of the rewrite process. The step index is the number of
/// refinements applied so far, so it cannot drift from the history.
struct QueryState {
    SqlQuery sql;
    std::vector<RefinementAction> applied_refinements;

    explicit QueryState(SqlQuery initial) : sql(std::move(initial)) {}

    [[nodiscard]] std::size_t step_index() const noexcept { return applied_refinements.size(); }

    friend bool operator==(const QueryState&, const QueryState&) = default;
};

struct Terminal {};

/// The query emitted by the terminal action.
struct FinalQuery {
    SqlQuery sql;
    std::vector<RefinementAction> applied_refinements;

    friend bool operator==(const FinalQuery&, const FinalQuery&) = default;
};

using Transition = std::variant<RefinementAction, Terminal>;
using TransitionResult = std::variant<QueryState, FinalQuery>;

/// Applies a refinement: the new state holds the action's SQL and history + action.
/// Throws std::invalid_argument when the action does not change the SQL and
/// carries no `other` label.
[[nodiscard]] QueryState transition(const QueryState& state, const RefinementAction& action);
[[nodiscard]] FinalQuery transition(const QueryState& state, Terminal);
[[nodiscard]] TransitionResult transition(const QueryState& state, const Transition& action);

enum class CostSource { explain, llm_judgment, blended };

std::string_view to_string(CostSource source) noexcept;

struct CostEstimate {
    double total_cost = 0.0;
    double startup_cost = 0.0;
    CostSource source = CostSource::explain;

    /// Validates non-negativity and startup <= total for EXPLAIN costs.
    static CostEstimate from_explain(double startup_cost, double total_cost);
};

/// EXPLAIN is authoritative; an LLM judgment is used only when no EXPLAIN
/// number exists.
[[nodiscard]] std::optional<CostEstimate> preferred_cost(const std::optional<CostEstimate>& explain,
                                                         const std::optional<CostEstimate>& llm);

struct Reward {
    double value = 0.0;
};

/// r(S_t, R_t) = Cost(S_t) - Cost(S_t+1). Positive iff the estimated cost dropped.
[[nodiscard]] Reward reward(const CostEstimate& before, const CostEstimate& after) noexcept;

/// Sum of gamma^i * r_i. The engine runs no value iteration; gamma only weighs
/// multi-step proposals when the rewrite agent breaks ties.
[[nodiscard]] double discounted_return(const std::vector<double>& rewards, double discount);

struct MdpConfig {
    double discount = 1.0;
};

/// Four-dimension assessment produced by the decision agent.
struct DecisionReport {
    struct CostChanges {
        CostEstimate before;
        CostEstimate after;
        double delta = 0.0;
    };

    CostChanges cost_changes;
    std::string plan_characteristics = "none observed";
    std::string resource_utilization = "none observed";
    std::string other_improvements = "none observed";
    bool verdict = false;

    [[nodiscard]] std::string render() const;
};

enum class OutcomeVerdict { verified_tool, verified_llm, fallback_original };

std::string_view to_string(OutcomeVerdict verdict) noexcept;

class PreconditionViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace quite
