#include "quite/hints.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "quite/prompts.hpp"
#include "quite/sql.hpp"

namespace quite::hints {

std::string_view to_string(HintKind kind) noexcept {
    switch (kind) {
        case HintKind::no_hash_join: return "NoHashJoin";
        case HintKind::no_nest_loop: return "NoNestLoop";
        case HintKind::no_merge_join: return "NoMergeJoin";
        case HintKind::rows: return "Rows";
        case HintKind::no_materialize: return "NO_MATERIALIZE";
    }
    return "NoHashJoin";
}

std::optional<HintKind> hint_kind_from_string(std::string_view name) {
    for (auto k : {HintKind::no_hash_join, HintKind::no_nest_loop, HintKind::no_merge_join, HintKind::rows,
                   HintKind::no_materialize}) {
        if (sql::to_lower(to_string(k)) == sql::to_lower(name)) return k;
    }
    return std::nullopt;
}

bool is_join_veto(HintKind kind) noexcept {
    return kind == HintKind::no_hash_join || kind == HintKind::no_nest_loop || kind == HintKind::no_merge_join;
}

namespace {

bool plain_identifier(std::string_view s) {
    if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
    return std::all_of(s.begin(), s.end(),
                       [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '$'; });
}

std::vector<std::string> sorted_tables(const Hint& h) {
    auto t = h.tables;
    std::sort(t.begin(), t.end());
    return t;
}

}  // namespace

void Hint::validate() const {
    if (tables.empty()) throw InvariantViolation(fmt::format("{} needs at least one table", to_string(kind)));
    for (const auto& t : tables)
        if (!plain_identifier(t)) throw InvariantViolation(fmt::format("'{}' is not a plain relation name", t));
    if (std::set<std::string>(tables.begin(), tables.end()).size() != tables.size())
        throw InvariantViolation("a hint names the same table twice");
    if ((is_join_veto(kind) || kind == HintKind::rows) && tables.size() < 2)
        throw InvariantViolation(fmt::format("{} needs at least two tables", to_string(kind)));
    if (kind == HintKind::no_materialize && tables.size() != 1)
        throw InvariantViolation("NO_MATERIALIZE targets exactly one CTE");
    if (kind == HintKind::rows) {
        if (!row_value) throw InvariantViolation("Rows needs a row value");
        if (*row_value <= 0) throw InvariantViolation("Rows value must be positive");
    } else if (row_value) {
        throw InvariantViolation(fmt::format("{} takes no row value", to_string(kind)));
    }
}

std::string Hint::render() const {
    validate();
    std::string out(to_string(kind));
    out += '(';
    for (std::size_t i = 0; i < tables.size(); ++i) {
        if (i) out += ' ';
        out += tables[i];
    }
    if (kind == HintKind::rows) out += fmt::format(" #{}", *row_value);
    out += ')';
    return out;
}

HintSet::HintSet(std::vector<Hint> hints) {
    for (auto& h : hints) add(std::move(h));
}

std::optional<std::string> HintSet::conflict(const Hint& candidate) const {
    const auto key = sorted_tables(candidate);
    std::set<HintKind> vetoes;
    for (const auto& h : hints_) {
        if (sorted_tables(h) != key) continue;
        if (h.kind == candidate.kind)
            return fmt::format("{} already targets ({})", to_string(h.kind), fmt::join(candidate.tables, " "));
        if (is_join_veto(h.kind)) vetoes.insert(h.kind);
    }
    if (is_join_veto(candidate.kind)) {
        vetoes.insert(candidate.kind);
        if (vetoes.size() == 3) return fmt::format("vetoing all three join methods for ({})", fmt::join(key, " "));
    }
    return std::nullopt;
}

void HintSet::add(Hint hint) {
    hint.validate();
    if (auto why = conflict(hint)) throw InvariantViolation(*why);
    hints_.push_back(std::move(hint));
}

bool HintSet::try_add(Hint hint) {
    hint.validate();
    if (conflict(hint)) return false;
    hints_.push_back(std::move(hint));
    return true;
}

std::string render(const HintSet& hs) {
    if (hs.empty()) return {};
    std::string out = "/*+\n";
    for (const auto& h : hs.hints()) out += "  " + h.render() + "\n";
    out += "*/";
    return out;
}

HintSet parse(std::string_view block) {
    std::string_view s = block;
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    if (s.substr(0, 3) != "/*+" || s.size() < 5 || s.substr(s.size() - 2) != "*/")
        throw std::invalid_argument("not a hint block");
    const std::string body(s.substr(3, s.size() - 5));

    static const std::regex hint_re(R"(\s*([A-Za-z_]+)\s*\(([^)]*)\))");
    HintSet out;
    auto it = std::sregex_iterator(body.begin(), body.end(), hint_re);
    std::size_t consumed = 0;
    for (; it != std::sregex_iterator(); ++it) {
        const auto& m = *it;
        if (static_cast<std::size_t>(m.position(0)) != consumed)
            throw std::invalid_argument("unexpected text in hint block");
        consumed = static_cast<std::size_t>(m.position(0) + m.length(0));
        auto kind = hint_kind_from_string(m[1].str());
        if (!kind) throw std::invalid_argument("unknown hint " + m[1].str());
        Hint h;
        h.kind = *kind;
        std::istringstream args(m[2].str());
        std::string word;
        while (args >> word) {
            if (word.front() == '#') {
                if (h.row_value) throw std::invalid_argument("more than one row value");
                try {
                    h.row_value = std::stoll(word.substr(1));
                } catch (const std::exception&) {
                    throw std::invalid_argument("bad row value " + word);
                }
            } else {
                h.tables.push_back(word);
            }
        }
        try {
            out.add(std::move(h));
        } catch (const InvariantViolation& e) {
            throw std::invalid_argument(e.what());
        }
    }
    if (body.find_first_not_of(" \t\r\n", consumed) != std::string::npos)
        throw std::invalid_argument("unexpected text in hint block");
    return out;
}

SqlQuery inject(const SqlQuery& q, const HintSet& hs) {
    if (sql::leading_hint_block(q.text())) throw AlreadyHinted("query already starts with a hint block");
    if (hs.empty()) return q;
    const auto& text = q.text();
    const auto start = text.find_first_not_of(" \t\r\n");
    return SqlQuery(render(hs) + "\n" + text.substr(start == std::string::npos ? 0 : start), q.dialect());
}

SqlQuery inline_cte(const SqlQuery& q, std::string_view cte_name) {
    const auto tokens = sql::lex(q.text());
    const std::string want = sql::to_lower(cte_name);
    for (std::size_t i = 1; i < tokens.size(); ++i) {
        const auto& t = tokens[i];
        const bool name_match = (t.kind == sql::TokenKind::identifier && sql::to_lower(t.text) == want) ||
                                (t.kind == sql::TokenKind::quoted_identifier && t.text == "\"" + std::string(cte_name) + "\"");
        if (!name_match) continue;
        const auto& prev = tokens[i - 1];
        if (!(prev.is_keyword("with") || prev.is_keyword("recursive") || prev.kind == sql::TokenKind::comma)) continue;

        std::size_t j = i + 1;
        if (j < tokens.size() && tokens[j].kind == sql::TokenKind::lparen) {
            int depth = 0;
            for (; j < tokens.size(); ++j) {
                if (tokens[j].kind == sql::TokenKind::lparen) ++depth;
                if (tokens[j].kind == sql::TokenKind::rparen && --depth == 0) break;
            }
            ++j;
        }
        if (j >= tokens.size() || !tokens[j].is_keyword("as")) continue;
        ++j;
        if (j >= tokens.size()) break;
        std::string text = q.text();
        if (tokens[j].is_keyword("not")) return q;
        if (tokens[j].is_keyword("materialized")) {
            text.insert(tokens[j].offset, "NOT ");
            return SqlQuery(std::move(text), q.dialect());
        }
        if (tokens[j].kind == sql::TokenKind::lparen) {
            text.insert(tokens[j].offset, "NOT MATERIALIZED ");
            return SqlQuery(std::move(text), q.dialect());
        }
    }
    throw std::invalid_argument(fmt::format("query defines no CTE named {}", cte_name));
}

SqlQuery apply(const SqlQuery& q, const HintSet& hs, bool compat) {
    if (!compat) return inject(q, hs);
    SqlQuery out = q;
    HintSet rest;
    for (const auto& h : hs.hints()) {
        if (h.kind == HintKind::no_materialize)
            out = inline_cte(out, h.tables.front());
        else
            rest.add(h);
    }
    return inject(out, rest);
}

const std::vector<HintBaseRow>& hint_base() {
    static const std::vector<HintBaseRow> rows = {
        {HintKind::no_hash_join, "No Hash Join", "/*+ NoHashJoin(table table[ table...]) */",
         "Prevents the use of hash joins for specified tables."},
        {HintKind::no_nest_loop, "No Nested Loop Join", "/*+ NoNestLoop(table table[ table...]) */",
         "Prevents the use of nested loop joins for specified tables."},
        {HintKind::no_merge_join, "No Merge Join", "/*+ NoMergeJoin(table table[ table...]) */",
         "Prevents the use of merge joins for specified tables."},
        {HintKind::rows, "Row Correction", "/*+ Rows(a b #10) */", "Sets the number of rows for the join result."},
        {HintKind::no_materialize, "NO_MATERIALIZE", "/*+ NO_MATERIALIZE(table) */",
         "Inlines the CTE to avoid materialization overhead."},
    };
    return rows;
}

std::string selection_prompt() {
    std::string table;
    for (const auto& r : hint_base()) table += fmt::format("- {}: {} {}\n", r.name, r.grammar, r.description);
    return prompts::fill("hint_base_selection", {{"hints", table}});
}

namespace {

struct JoinItem {
    const db::PlanNode* node;
    std::vector<std::string> tables;
};

std::vector<JoinItem> join_items(const db::PlanTree& plan) {
    std::vector<JoinItem> out;
    std::set<std::vector<std::string>> seen;
    for (const auto* n : plan.nodes()) {
        if (n->kind != db::OperatorKind::join) continue;
        auto rels = n->scanned_relations();
        std::vector<std::string> uniq;
        for (auto& r : rels)
            if (std::find(uniq.begin(), uniq.end(), r) == uniq.end()) uniq.push_back(r);
        if (uniq.size() < 2) continue;
        if (!std::all_of(uniq.begin(), uniq.end(), [](const std::string& s) { return plain_identifier(s); })) continue;
        auto key = uniq;
        std::sort(key.begin(), key.end());
        if (!seen.insert(key).second) continue;
        out.push_back({n, std::move(uniq)});
    }
    return out;
}

std::optional<HintKind> veto_for(const std::string& node_type) {
    if (node_type == "Hash Join") return HintKind::no_hash_join;
    if (node_type == "Nested Loop") return HintKind::no_nest_loop;
    if (node_type == "Merge Join") return HintKind::no_merge_join;
    return std::nullopt;
}

// Base-table row counts of the scans under a node, from catalog statistics
// when present and from the plan otherwise.
double smallest_input(const db::PlanNode& node, const db::StatsSnapshot& stats) {
    double smallest = -1.0;
    std::function<void(const db::PlanNode&)> visit = [&](const db::PlanNode& n) {
        if (n.kind == db::OperatorKind::scan && n.relation_name) {
            double rows = n.plan_rows;
            if (const auto* t = stats.find(*n.relation_name)) rows = t->row_count;
            smallest = smallest < 0 ? rows : std::min(smallest, rows);
        }
        for (const auto& c : n.children)
            if (!c.subplan_name) visit(c);
    };
    visit(node);
    return smallest < 0 ? 0.0 : smallest;
}

double child_rows(const db::PlanNode& n, bool largest) {
    double v = largest ? 0.0 : -1.0;
    for (const auto& c : n.children) {
        if (c.subplan_name) continue;
        if (largest)
            v = std::max(v, c.plan_rows);
        else
            v = v < 0 ? c.plan_rows : std::min(v, c.plan_rows);
    }
    return v < 0 ? 0.0 : v;
}

std::vector<Suggestion> heuristic_joins(const std::vector<JoinItem>& items, const db::StatsSnapshot& stats) {
    std::vector<Suggestion> out;
    for (const auto& item : items) {
        const auto& n = *item.node;
        // A join estimated at one row over inputs of a thousand rows or more
        // usually reflects correlated predicates treated as independent.
        if (n.plan_rows <= 1.0 && smallest_input(n, stats) >= 1000.0) {
            const auto rec = static_cast<std::int64_t>(std::max(1.0, child_rows(n, true)));
            out.push_back({fmt::format("{} over ({}) estimated at {:.0f} row(s)", n.node_type,
                                       fmt::join(item.tables, " "), n.plan_rows),
                           Hint{HintKind::rows, item.tables, rec,
                                "estimate far below the input sizes; corrected to the larger input"}});
        }
        if (n.node_type == "Nested Loop" && child_rows(n, false) >= 10000.0) {
            out.push_back({fmt::format("Nested Loop over ({}) with {:.0f} and more rows per side",
                                       fmt::join(item.tables, " "), child_rows(n, false)),
                           Hint{HintKind::no_nest_loop, item.tables, std::nullopt,
                                "both inputs are large; a nested loop rescans the inner side per outer row"}});
        }
    }
    return out;
}

std::vector<Suggestion> llm_joins(const SqlQuery& q, const db::PlanTree& plan, const db::StatsSnapshot& stats,
                                  const std::vector<JoinItem>& items, const llm::Binding& llm) {
    std::string list;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& n = *items[i].node;
        list += fmt::format("R{}: {} over ({}) estimated at {:.0f} rows\n", i + 1, n.node_type,
                            fmt::join(items[i].tables, " "), n.plan_rows);
    }
    for (std::size_t i = 0; i < items.size(); ++i)
        list += fmt::format("J{}: {} joining ({})\n", i + 1, items[i].node->node_type, fmt::join(items[i].tables, " "));

    const std::string response = llm.ask(
        "", prompts::fill("hint_analysis",
                          {{"query", q.text()}, {"plan", plan.summary()}, {"stats", stats.summary()}, {"items", list}}));
    const std::string answer = llm::split_reasoning(response).answer;

    static const std::regex line_re(R"(^[ \t*#-]*([RJ])(\d+)\s*:\s*([A-Za-z_]+)\s*([^|\n]*)(?:\|\s*([^\n]*))?)",
                                    std::regex::icase | std::regex::multiline);
    std::vector<Suggestion> out;
    for (auto it = std::sregex_iterator(answer.begin(), answer.end(), line_re); it != std::sregex_iterator(); ++it) {
        const auto& m = *it;
        const char kind = static_cast<char>(std::toupper(static_cast<unsigned char>(m[1].str()[0])));
        const std::size_t idx = std::stoul(m[2].str());
        if (idx == 0 || idx > items.size()) continue;
        const auto& item = items[idx - 1];
        const std::string verdict = sql::to_upper(m[3].str());
        std::string arg = m[4].str();
        while (!arg.empty() && std::isspace(static_cast<unsigned char>(arg.back()))) arg.pop_back();
        const std::string why = m[5].matched ? m[5].str() : std::string("flagged by the plan review");

        if (kind == 'R' && verdict == "UNREASONABLE") {
            std::int64_t rows = 0;
            try {
                rows = std::stoll(arg);
            } catch (const std::exception&) {
                continue;
            }
            if (rows <= 0) continue;
            out.push_back({fmt::format("{} over ({}) estimated at {:.0f} row(s)", item.node->node_type,
                                       fmt::join(item.tables, " "), item.node->plan_rows),
                           Hint{HintKind::rows, item.tables, rows, why}});
        } else if (kind == 'J' && verdict == "UNSUITABLE") {
            auto veto = hint_kind_from_string(arg);
            if (!veto || !is_join_veto(*veto)) veto = veto_for(item.node->node_type);
            if (!veto) continue;
            out.push_back({fmt::format("{} judged unsuitable for ({})", item.node->node_type,
                                       fmt::join(item.tables, " ")),
                           Hint{*veto, item.tables, std::nullopt, why}});
        }
    }
    return out;
}

}  // namespace

std::vector<Suggestion> analyze_plan(const SqlQuery& q, const db::PlanTree& plan, const db::StatsSnapshot& stats,
                                     const llm::Binding* llm, const AnalyzeConfig& config) {
    std::vector<Suggestion> out;
    const auto items = join_items(plan);
    if (!items.empty()) out = llm ? llm_joins(q, plan, stats, items, *llm) : heuristic_joins(items, stats);

    sql::QueryFacts facts;
    try {
        facts = sql::analyze(q.text());
    } catch (const sql::SyntaxError&) {
        return out;
    }
    for (const auto& cte : facts.ctes) {
        if (cte.not_materialized_keyword || !plain_identifier(cte.name)) continue;
        const auto* sub = plan.cte_plan(cte.name);
        const bool once = cte.references == 1;
        const bool small = sub && sub->plan_rows <= config.small_cte_rows && !cte.has_aggregate;
        if (!once && !small) continue;
        out.push_back({once ? fmt::format("CTE {} is referenced once", cte.name)
                            : fmt::format("CTE {} is small ({:.0f} estimated rows) and has no aggregate", cte.name,
                                          sub->plan_rows),
                       Hint{HintKind::no_materialize, {cte.name}, std::nullopt,
                            "inlining avoids writing and rereading the intermediate result"}});
    }
    return out;
}

Selection select_hints(const std::vector<Suggestion>& candidates, const SqlQuery& q, db::Database& db,
                       const SelectConfig& config) {
    Selection sel{HintSet{}, q, {}};
    if (candidates.empty()) return sel;

    const double base = db.explain(q).cost.total_cost;
    std::vector<Hint> survivors;
    for (const auto& c : candidates) {
        try {
            c.hint.validate();
            const auto single = apply(q, HintSet({c.hint}), config.compat_no_materialize);
            const double cost = db.explain(single).cost.total_cost;
            if (cost > base) {
                sel.dropped.push_back({c.hint, fmt::format("EXPLAIN cost rises {:.2f} -> {:.2f}", base, cost)});
                continue;
            }
            survivors.push_back(c.hint);
        } catch (const db::ConnectionError&) {
            throw;
        } catch (const std::exception& e) {
            sel.dropped.push_back({c.hint, fmt::format("rejected: {}", e.what())});
        }
    }
    for (auto& h : survivors) {
        if (!sel.hints.try_add(h)) sel.dropped.push_back({h, "inconsistent with hints already selected"});
    }
    if (sel.hints.empty()) return sel;

    SqlQuery hinted = apply(q, sel.hints, config.compat_no_materialize);
    std::string failure;
    try {
        (void)db.explain(hinted);
        if (config.oracle_gate) {
            auto eq = db.results_equal(q, hinted);
            if (!eq) failure = "hinted query returns different rows: " + eq.reason;
        }
    } catch (const db::ConnectionError&) {
        throw;
    } catch (const db::DbError& e) {
        failure = std::string("hinted query rejected: ") + e.what();
    }
    if (!failure.empty()) {
        spdlog::warn("{}; dropping all hints", failure);
        for (const auto& h : sel.hints.hints()) sel.dropped.push_back({h, failure});
        sel.hints = HintSet{};
        return sel;
    }
    sel.hinted = std::move(hinted);
    return sel;
}

}  // namespace quite::hints
