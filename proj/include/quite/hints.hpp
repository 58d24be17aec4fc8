#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "quite/core.hpp"
#include "quite/db.hpp"
#include "quite/llm.hpp"

// Optimizer hints in pg_hint_plan comment syntax and the recommender that
// picks them for a rewritten query.
namespace quite::hints {

enum class HintKind { no_hash_join, no_nest_loop, no_merge_join, rows, no_materialize };

/// Name as written inside the hint block, e.g. "NoHashJoin" or "NO_MATERIALIZE".
std::string_view to_string(HintKind kind) noexcept;
std::optional<HintKind> hint_kind_from_string(std::string_view name);

[[nodiscard]] bool is_join_veto(HintKind kind) noexcept;

class InvariantViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class AlreadyHinted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Hint {
    HintKind kind = HintKind::no_hash_join;
    std::vector<std::string> tables;
    std::optional<std::int64_t> row_value;
    std::string justification;

    /// Throws InvariantViolation.
    void validate() const;
    [[nodiscard]] std::string render() const;

    /// Justification is commentary, not part of the hint's identity.
    friend bool operator==(const Hint& a, const Hint& b) {
        return a.kind == b.kind && a.tables == b.tables && a.row_value == b.row_value;
    }
};

class HintSet {
public:
    HintSet() = default;
    /// Throws InvariantViolation when any hint is invalid or the set is inconsistent.
    explicit HintSet(std::vector<Hint> hints);

    /// Throws InvariantViolation.
    void add(Hint hint);
    /// Adds when the result stays consistent; returns whether it did.
    bool try_add(Hint hint);

    [[nodiscard]] const std::vector<Hint>& hints() const noexcept { return hints_; }
    [[nodiscard]] bool empty() const noexcept { return hints_.empty(); }
    [[nodiscard]] std::size_t size() const noexcept { return hints_.size(); }

    friend bool operator==(const HintSet&, const HintSet&) = default;

private:
    std::vector<Hint> hints_;

    [[nodiscard]] std::optional<std::string> conflict(const Hint& candidate) const;
};

/// "/*+\n  <hint>\n  <hint>\n*/", or "" for an empty set.
[[nodiscard]] std::string render(const HintSet& hs);

/// Inverse of render(); accepts any whitespace layout. Throws std::invalid_argument.
[[nodiscard]] HintSet parse(std::string_view block);

/// Prepends the rendered block. Throws AlreadyHinted when `q` starts with a
/// hint block.
[[nodiscard]] SqlQuery inject(const SqlQuery& q, const HintSet& hs);

/// Compatibility realisation of NO_MATERIALIZE: rewrites `name AS (` into
/// `name AS NOT MATERIALIZED (`. Throws std::invalid_argument when the query
/// has no such CTE.
[[nodiscard]] SqlQuery inline_cte(const SqlQuery& q, std::string_view cte_name);

/// Applies a set: NO_MATERIALIZE through inline_cte() when `compat` is set,
/// everything else through the comment block.
[[nodiscard]] SqlQuery apply(const SqlQuery& q, const HintSet& hs, bool compat);

struct HintBaseRow {
    HintKind kind;
    std::string name;
    std::string grammar;
    std::string description;
};

/// The fixed hint base.
[[nodiscard]] const std::vector<HintBaseRow>& hint_base();

/// Selection prompt used when the hint base was assembled, filled with the
/// rendered base.
[[nodiscard]] std::string selection_prompt();

struct Suggestion {
    std::string issue;
    Hint hint;
};

struct AnalyzeConfig {
    /// NO_MATERIALIZE applies to CTEs estimated at or below this many rows
    /// whose body has no aggregate.
    double small_cte_rows = 1000.0;
};

/// Asks the LLM to judge every join's cardinality estimate and operator; a
/// null binding applies the built-in heuristics. CTE suggestions come from
/// the query text and plan without the LLM.
[[nodiscard]] std::vector<Suggestion> analyze_plan(const SqlQuery& q, const db::PlanTree& plan,
                                                   const db::StatsSnapshot& stats, const llm::Binding* llm,
                                                   const AnalyzeConfig& config = {});

struct SelectConfig {
    bool compat_no_materialize = true;
    bool oracle_gate = true;
};

struct Dropped {
    Hint hint;
    std::string reason;
};

struct Selection {
    HintSet hints;
    SqlQuery hinted;
    std::vector<Dropped> dropped;
};

/// Keeps each suggestion whose hint alone does not raise the EXPLAIN cost,
/// composes the survivors under the consistency guard and, when enabled,
/// checks that the hinted query returns the same rows as `q`.
[[nodiscard]] Selection select_hints(const std::vector<Suggestion>& candidates, const SqlQuery& q, db::Database& db,
                                     const SelectConfig& config = {});

}  // namespace quite::hints
