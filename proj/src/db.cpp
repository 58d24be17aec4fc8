#include "quite/db.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include <fmt/format.h>

#include "quite/sql.hpp"

namespace quite::db {

DbConfig DbConfig::from_dsn(std::string dsn) {
    DbConfig config;
    config.dsn = std::move(dsn);
    return config;
}

std::string DbConfig::conninfo() const {
    if (!dsn.empty()) return dsn;
    std::string out;
    auto add = [&](std::string_view key, const std::string& value) {
        if (value.empty()) return;
        std::string escaped;
        for (char c : value) {
            if (c == '\'' || c == '\\') escaped += '\\';
            escaped += c;
        }
        out += fmt::format("{}{}='{}'", out.empty() ? "" : " ", key, escaped);
    };
    add("host", host);
    add("port", std::to_string(port));
    add("dbname", database);
    add("user", user);
    add("password", password);
    return out;
}

std::string_view to_string(OperatorKind kind) noexcept {
    switch (kind) {
        case OperatorKind::scan: return "scan";
        case OperatorKind::cte_scan: return "cte_scan";
        case OperatorKind::join: return "join";
        case OperatorKind::aggregate: return "aggregate";
        case OperatorKind::sort: return "sort";
        case OperatorKind::hash: return "hash";
        case OperatorKind::materialize: return "materialize";
        case OperatorKind::result: return "result";
        case OperatorKind::other: return "other";
    }
    return "other";
}

namespace {

OperatorKind classify_node(std::string_view type) {
    if (type == "Nested Loop" || type == "Hash Join" || type == "Merge Join") return OperatorKind::join;
    if (type == "CTE Scan") return OperatorKind::cte_scan;
    if (type.ends_with("Scan")) return OperatorKind::scan;
    if (type == "Aggregate" || type == "WindowAgg" || type == "Group") return OperatorKind::aggregate;
    if (type == "Sort" || type == "Incremental Sort") return OperatorKind::sort;
    if (type == "Hash") return OperatorKind::hash;
    if (type == "Materialize" || type == "Memoize") return OperatorKind::materialize;
    if (type == "Result" || type == "ProjectSet") return OperatorKind::result;
    return OperatorKind::other;
}

std::optional<std::string> opt_string(const nlohmann::json& node, const char* key) {
    if (auto it = node.find(key); it != node.end() && it->is_string()) return it->get<std::string>();
    return std::nullopt;
}

PlanNode parse_node(const nlohmann::json& j) {
    PlanNode n;
    n.node_type = j.at("Node Type").get<std::string>();
    n.kind = classify_node(n.node_type);
    n.relation_name = opt_string(j, "Relation Name");
    n.alias = opt_string(j, "Alias");
    n.cte_name = opt_string(j, "CTE Name");
    n.subplan_name = opt_string(j, "Subplan Name");
    n.parent_relationship = opt_string(j, "Parent Relationship");
    n.join_type = opt_string(j, "Join Type");
    for (const char* key : {"Hash Cond", "Merge Cond", "Join Filter", "Index Cond", "Filter"}) {
        if (auto c = opt_string(j, key)) {
            n.condition = std::move(c);
            break;
        }
    }
    n.startup_cost = j.at("Startup Cost").get<double>();
    n.total_cost = j.at("Total Cost").get<double>();
    n.plan_rows = j.at("Plan Rows").get<double>();
    n.plan_width = j.value("Plan Width", 0);
    if (n.plan_rows < 0 || n.total_cost < 0 || n.startup_cost < 0) {
        throw std::invalid_argument("plan node " + n.node_type + " has a negative estimate");
    }
    if (auto it = j.find("Plans"); it != j.end()) {
        for (const auto& child : *it) n.children.push_back(parse_node(child));
    }
    return n;
}

}  // namespace

std::vector<std::string> PlanNode::scanned_relations() const {
    std::vector<std::string> out;
    std::function<void(const PlanNode&)> rec = [&](const PlanNode& n) {
        if (n.kind == OperatorKind::scan || n.kind == OperatorKind::cte_scan) {
            if (n.alias) out.push_back(*n.alias);
            else if (n.relation_name) out.push_back(*n.relation_name);
            else if (n.cte_name) out.push_back(*n.cte_name);
        }
        for (const auto& c : n.children) {
            if (c.parent_relationship == "InitPlan" || c.parent_relationship == "SubPlan") continue;
            rec(c);
        }
    };
    rec(*this);
    return out;
}

void PlanTree::walk(const std::function<void(const PlanNode&, std::size_t)>& visit) const {
    std::function<void(const PlanNode&, std::size_t)> rec = [&](const PlanNode& n, std::size_t depth) {
        visit(n, depth);
        for (const auto& c : n.children) rec(c, depth + 1);
    };
    rec(root, 0);
}

std::vector<const PlanNode*> PlanTree::nodes() const {
    std::vector<const PlanNode*> out;
    walk([&](const PlanNode& n, std::size_t) { out.push_back(&n); });
    return out;
}

CostEstimate PlanTree::cost() const { return CostEstimate::from_explain(root.startup_cost, root.total_cost); }

const PlanNode* PlanTree::cte_plan(std::string_view cte_name) const {
    const std::string wanted = "CTE " + std::string(cte_name);
    for (const PlanNode* n : nodes()) {
        if (n->subplan_name && *n->subplan_name == wanted) return n;
    }
    return nullptr;
}

std::string PlanTree::summary() const {
    std::string out;
    walk([&](const PlanNode& n, std::size_t depth) {
        out += std::string(depth * 2, ' ');
        out += n.node_type;
        if (n.join_type) out += fmt::format(" ({})", *n.join_type);
        if (n.relation_name) out += " on " + *n.relation_name;
        if (n.cte_name) out += " on CTE " + *n.cte_name;
        if (n.alias && n.alias != n.relation_name && n.alias != n.cte_name) out += " " + *n.alias;
        if (n.subplan_name) out += " [" + *n.subplan_name + "]";
        out += fmt::format("  cost={:.2f}..{:.2f} rows={:.0f} width={}", n.startup_cost, n.total_cost, n.plan_rows,
                           n.plan_width);
        if (n.condition) out += "  cond: " + *n.condition;
        out += '\n';
    });
    return out;
}

PlanTree parse_explain_json(const nlohmann::json& doc) {
    const nlohmann::json* top = &doc;
    if (top->is_array()) {
        if (top->empty()) throw std::invalid_argument("EXPLAIN document is empty");
        top = &(*top)[0];
    }
    if (!top->is_object() || !top->contains("Plan")) throw std::invalid_argument("EXPLAIN document has no Plan");
    try {
        return PlanTree{parse_node(top->at("Plan"))};
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("malformed EXPLAIN plan: ") + e.what());
    }
}

PlanTree parse_explain_json(std::string_view text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("EXPLAIN output is not JSON: ") + e.what());
    }
    return parse_explain_json(doc);
}

const TableStats* StatsSnapshot::find(std::string_view table) const {
    for (const auto& t : tables) {
        if (t.name == table) return &t;
    }
    return nullptr;
}

std::string StatsSnapshot::summary() const {
    std::string out;
    for (const auto& t : tables) {
        out += fmt::format("{}: rows={:.0f} pages={:.0f}\n", t.name, t.row_count, t.page_count);
        for (const auto& c : t.columns) {
            out += fmt::format("  {} n_distinct={}", c.name, c.n_distinct);
            if (!c.most_common_values.empty()) {
                const std::size_t shown = std::min<std::size_t>(3, c.most_common_values.size());
                out += " mcv=";
                for (std::size_t i = 0; i < shown; ++i) {
                    out += fmt::format("{}{}({:.3f})", i ? "," : "", c.most_common_values[i],
                                       i < c.most_common_freqs.size() ? c.most_common_freqs[i] : 0.0);
                }
            }
            out += '\n';
        }
        for (const auto& idx : t.indexes) out += "  index: " + idx + '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Result comparison

namespace {

bool numbers_close(double x, double y) {
    if (x == y) return true;
    if (std::isnan(x) && std::isnan(y)) return true;
    return std::fabs(x - y) <= 1e-9 * std::max(std::fabs(x), std::fabs(y));
}

double as_number(const std::string& s) { return std::strtod(s.c_str(), nullptr); }

int compare_cell(const std::optional<std::string>& a, const std::optional<std::string>& b, bool numeric) {
    if (!a || !b) return a ? 1 : (b ? -1 : 0);
    if (numeric) {
        const double x = as_number(*a);
        const double y = as_number(*b);
        if (x < y) return -1;
        if (x > y) return 1;
        return 0;
    }
    return a->compare(*b) < 0 ? -1 : (a->compare(*b) > 0 ? 1 : 0);
}

bool cells_match(const std::optional<std::string>& a, const std::optional<std::string>& b, bool numeric) {
    if (!a || !b) return !a && !b;
    if (*a == *b) return true;
    return numeric && numbers_close(as_number(*a), as_number(*b));
}

}  // namespace

EqualityResult compare_results(const ResultSet& a, const ResultSet& b, bool ordered) {
    const std::size_t width = a.numeric.size();
    if (width != b.numeric.size()) {
        return {false, fmt::format("column count differs: {} vs {}", width, b.numeric.size())};
    }
    for (std::size_t c = 0; c < width; ++c) {
        if (a.numeric[c] != b.numeric[c]) return {false, fmt::format("column {} type class differs", c + 1)};
    }
    if (a.rows.size() != b.rows.size()) {
        return {false, fmt::format("row count differs: {} vs {}", a.rows.size(), b.rows.size())};
    }
    auto rows_a = a.rows;
    auto rows_b = b.rows;
    if (!ordered) {
        auto less = [&](const auto& x, const auto& y) {
            for (std::size_t c = 0; c < width; ++c) {
                if (int r = compare_cell(x[c], y[c], a.numeric[c]); r != 0) return r < 0;
            }
            return false;
        };
        std::sort(rows_a.begin(), rows_a.end(), less);
        std::sort(rows_b.begin(), rows_b.end(), less);
    }
    for (std::size_t r = 0; r < rows_a.size(); ++r) {
        for (std::size_t c = 0; c < width; ++c) {
            if (!cells_match(rows_a[r][c], rows_b[r][c], a.numeric[c])) {
                return {false, fmt::format("{} row {} column {} differs: {} vs {}", ordered ? "ordered" : "sorted",
                                           r + 1, c + 1, rows_a[r][c].value_or("NULL"),
                                           rows_b[r][c].value_or("NULL"))};
            }
        }
    }
    return {true, fmt::format("{} rows match{}", rows_a.size(), ordered ? " in order" : " as multisets")};
}

EqualityResult Database::results_equal(const SqlQuery& a, const SqlQuery& b) {
    ResultSet ra;
    ResultSet rb;
    try {
        ra = fetch(a);
    } catch (const ConnectionError&) {
        throw;
    } catch (const DbError& e) {
        return {false, std::string("first query failed: ") + e.what()};
    }
    try {
        rb = fetch(b);
    } catch (const ConnectionError&) {
        throw;
    } catch (const DbError& e) {
        return {false, std::string("second query failed: ") + e.what()};
    }
    const bool ordered = sql::has_top_level_order_by(a.text()) && sql::has_top_level_order_by(b.text());
    return compare_results(ra, rb, ordered);
}

// ---------------------------------------------------------------------------
// StubDatabase

namespace {

std::string stub_key(std::string_view text) { return sql::normalize_whitespace(text); }

std::string strip_hint(std::string_view text) {
    if (auto hint = sql::leading_hint_block(text)) {
        const auto pos = text.find(*hint);
        return std::string(text.substr(pos + hint->size()));
    }
    return std::string(text);
}

}  // namespace

StubDatabase& StubDatabase::define(std::string_view sql, Script script) {
    if (script.result_key.empty()) script.result_key = stub_key(sql);
    scripts_[stub_key(sql)] = std::move(script);
    return *this;
}

StubDatabase& StubDatabase::define_table(TableStats table) {
    tables_[table.name] = std::move(table);
    return *this;
}

StubDatabase& StubDatabase::set_default_cost(double cost) {
    default_cost_ = cost;
    return *this;
}

StubDatabase& StubDatabase::set_offline(bool offline) {
    offline_ = offline;
    return *this;
}

StubDatabase& StubDatabase::set_hint_capability(bool available) {
    hint_capability_ = available;
    return *this;
}

void StubDatabase::check_online() const {
    if (offline_) throw ConnectionError("stub database is offline", "08006");
}

std::optional<StubDatabase::Script> StubDatabase::lookup(const SqlQuery& q) const {
    if (auto it = scripts_.find(stub_key(q.text())); it != scripts_.end()) return it->second;
    if (auto it = scripts_.find(stub_key(strip_hint(q.text()))); it != scripts_.end()) return it->second;
    return std::nullopt;
}

ExplainResult StubDatabase::explain(const SqlQuery& q) {
    check_online();
    ++explain_calls_;
    if (auto err = sql::grammar_error(strip_hint(q.text()))) {
        throw SyntaxRejected("ERROR:  " + *err, "42601");
    }
    const auto script = lookup(q);
    if (script && script->explain_fails) throw SyntaxRejected("ERROR:  scripted planning failure", "42P01");
    const double cost = script ? script->cost : default_cost_;
    PlanNode root;
    root.node_type = "Result";
    root.kind = OperatorKind::result;
    root.total_cost = cost;
    root.plan_rows = 1;
    PlanTree plan{root};
    return {plan, plan.cost()};
}

std::vector<TimedRun> StubDatabase::timed_execute(const SqlQuery& q, int warmups, int runs, Seconds cap) {
    check_online();
    if (runs < 0 || warmups < 0) throw std::invalid_argument("run counts must be non-negative");
    const auto script = lookup(q);
    if (script && script->execution_fails) throw ExecutionError("scripted execution failure");
    execute_calls_ += static_cast<std::size_t>(warmups + runs);
    const double latency = script ? script->latency_seconds : 0.01;
    std::vector<TimedRun> out;
    for (int i = 0; i < runs; ++i) {
        if (latency > cap.count()) out.push_back({cap.count(), true, 0});
        else out.push_back({latency, false, 1});
    }
    return out;
}

ResultSet StubDatabase::fetch(const SqlQuery& q) {
    check_online();
    if (auto err = sql::grammar_error(strip_hint(q.text()))) throw SyntaxRejected("ERROR:  " + *err, "42601");
    const auto script = lookup(q);
    if (script && script->execution_fails) throw ExecutionError("scripted execution failure");
    ResultSet rs;
    rs.columns = {"key"};
    rs.numeric = {false};
    rs.rows.push_back({script ? script->result_key : stub_key(strip_hint(q.text()))});
    return rs;
}

StatsSnapshot StubDatabase::snapshot_stats(const std::vector<std::string>& tables) {
    check_online();
    StatsSnapshot snap;
    for (const auto& t : tables) {
        auto it = tables_.find(t);
        if (it == tables_.end()) throw UnknownTable("relation \"" + t + "\" does not exist", "42P01");
        snap.tables.push_back(it->second);
    }
    return snap;
}

std::string StubDatabase::ddl_for(const std::vector<std::string>& tables) {
    check_online();
    std::string out;
    for (const auto& t : tables) {
        auto it = tables_.find(t);
        if (it == tables_.end()) throw UnknownTable("relation \"" + t + "\" does not exist", "42P01");
        out += "CREATE TABLE " + t + " (";
        for (std::size_t i = 0; i < it->second.columns.size(); ++i) {
            out += (i ? ", " : "") + it->second.columns[i].name + " text";
        }
        out += ");\n";
    }
    return out;
}

HintCapability StubDatabase::probe_hint_capability() {
    check_online();
    return {hint_capability_, hint_capability_ ? "stub reports hint support" : "stub has no hint support"};
}

}  // namespace quite::db
