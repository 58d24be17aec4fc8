#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "quite/core.hpp"

namespace quite::db {

using Seconds = std::chrono::duration<double>;

class DbError : public std::runtime_error {
public:
    explicit DbError(const std::string& message, std::string sqlstate = {})
        : std::runtime_error(message), sqlstate_(std::move(sqlstate)) {}
    [[nodiscard]] const std::string& sqlstate() const noexcept { return sqlstate_; }

private:
    std::string sqlstate_;
};

/// The server refused to parse or plan the statement. what() is the server
/// message verbatim.
class SyntaxRejected : public DbError {
public:
    using DbError::DbError;
};

class ConnectionError : public DbError {
public:
    using DbError::DbError;
};

class ExecutionError : public DbError {
public:
    using DbError::DbError;
};

class UnknownTable : public DbError {
public:
    using DbError::DbError;
};

struct DbConfig {
    std::string host;
    int port = 5432;
    std::string database;
    std::string user;
    std::string password;
    /// A libpq connection string or URI; overrides the discrete fields when set.
    std::string dsn;
    Seconds statement_timeout{300.0};

    static DbConfig from_dsn(std::string dsn);
    [[nodiscard]] std::string conninfo() const;
};

enum class OperatorKind { scan, cte_scan, join, aggregate, sort, hash, materialize, result, other };

std::string_view to_string(OperatorKind kind) noexcept;

struct PlanNode {
    std::string node_type;
    OperatorKind kind = OperatorKind::other;
    std::optional<std::string> relation_name;
    std::optional<std::string> alias;
    std::optional<std::string> cte_name;
    std::optional<std::string> subplan_name;
    std::optional<std::string> parent_relationship;
    std::optional<std::string> join_type;
    std::optional<std::string> condition;
    double startup_cost = 0.0;
    double total_cost = 0.0;
    double plan_rows = 0.0;
    int plan_width = 0;
    std::vector<PlanNode> children;

    /// Aliases (or relation names) of every scan in this subtree, in plan order.
    [[nodiscard]] std::vector<std::string> scanned_relations() const;
};

struct PlanTree {
    PlanNode root;

    /// Pre-order traversal.
    void walk(const std::function<void(const PlanNode&, std::size_t depth)>& visit) const;
    [[nodiscard]] std::vector<const PlanNode*> nodes() const;
    [[nodiscard]] CostEstimate cost() const;
    /// The InitPlan subtree computing the named CTE, if present.
    [[nodiscard]] const PlanNode* cte_plan(std::string_view cte_name) const;
    /// Indented one-line-per-node rendering for prompts.
    [[nodiscard]] std::string summary() const;
};

/// Parses the output of EXPLAIN (FORMAT JSON). Throws std::invalid_argument on
/// documents without a plan or with negative estimates.
[[nodiscard]] PlanTree parse_explain_json(const nlohmann::json& doc);
[[nodiscard]] PlanTree parse_explain_json(std::string_view text);

struct ColumnStats {
    std::string name;
    double n_distinct = 0.0;
    std::vector<std::string> most_common_values;
    std::vector<double> most_common_freqs;
};

struct TableStats {
    std::string name;
    double row_count = 0.0;
    double page_count = 0.0;
    std::vector<ColumnStats> columns;
    std::vector<std::string> indexes;
};

struct StatsSnapshot {
    std::vector<TableStats> tables;

    [[nodiscard]] const TableStats* find(std::string_view table) const;
    [[nodiscard]] std::string summary() const;
};

struct TimedRun {
    double latency_seconds = 0.0;
    bool timed_out = false;
    std::size_t row_count = 0;
};

struct ExplainResult {
    PlanTree plan;
    CostEstimate cost;
};

/// Text-format result rows. `numeric` marks columns of a numeric type.
struct ResultSet {
    std::vector<std::string> columns;
    std::vector<bool> numeric;
    std::vector<std::vector<std::optional<std::string>>> rows;
};

struct EqualityResult {
    bool equal = false;
    std::string reason;

    explicit operator bool() const noexcept { return equal; }
};

/// Multiset comparison of two result sets, or sequence comparison when
/// `ordered`. Numeric cells compare with relative tolerance 1e-9.
[[nodiscard]] EqualityResult compare_results(const ResultSet& a, const ResultSet& b, bool ordered);

struct HintCapability {
    bool available = false;
    std::string detail;
};

/// Everything the engine needs from the target database.
class Database {
public:
    virtual ~Database() = default;

    /// EXPLAIN without ANALYZE. A leading hint block is kept in front so the
    /// hint extension sees it.
    virtual ExplainResult explain(const SqlQuery& q) = 0;

    /// `warmups` unmeasured runs, then exactly `runs` measured ones. A run
    /// exceeding `cap` is cancelled and recorded as (cap, timed_out).
    virtual std::vector<TimedRun> timed_execute(const SqlQuery& q, int warmups = 1, int runs = 3,
                                                Seconds cap = Seconds(300.0)) = 0;

    virtual ResultSet fetch(const SqlQuery& q) = 0;

    /// Catalog statistics only.
    virtual StatsSnapshot snapshot_stats(const std::vector<std::string>& tables) = 0;

    /// CREATE TABLE statements for the named tables.
    virtual std::string ddl_for(const std::vector<std::string>& tables) = 0;

    virtual HintCapability probe_hint_capability() = 0;

    /// Execution oracle. Execution failure on either side is a false verdict
    /// with the reason recorded; connection loss propagates.
    EqualityResult results_equal(const SqlQuery& a, const SqlQuery& b);
};

/// libpq-backed connection. Not thread-safe; use one per worker.
class PgDatabase final : public Database {
public:
    explicit PgDatabase(DbConfig config);
    ~PgDatabase() override;
    PgDatabase(const PgDatabase&) = delete;
    PgDatabase& operator=(const PgDatabase&) = delete;

    ExplainResult explain(const SqlQuery& q) override;
    std::vector<TimedRun> timed_execute(const SqlQuery& q, int warmups = 1, int runs = 3,
                                        Seconds cap = Seconds(300.0)) override;
    ResultSet fetch(const SqlQuery& q) override;
    StatsSnapshot snapshot_stats(const std::vector<std::string>& tables) override;
    std::string ddl_for(const std::vector<std::string>& tables) override;
    HintCapability probe_hint_capability() override;

    /// Runs a utility statement (or several) and discards the result.
    void execute(std::string_view sql);

    /// Called before each query's warm-up, e.g. to restart the server.
    void set_cache_reset_hook(std::function<void()> hook) { cache_reset_hook_ = std::move(hook); }

    [[nodiscard]] const DbConfig& config() const noexcept { return config_; }

private:
    struct Conn;
    std::unique_ptr<Conn> conn_;
    DbConfig config_;
    std::function<void()> cache_reset_hook_;

    void set_timeout(Seconds timeout);
};

/// Scripted in-memory database for offline tests: EXPLAIN costs, result
/// identities and latencies are looked up by whitespace-normalised SQL.
class StubDatabase final : public Database {
public:
    struct Script {
        double cost = 100.0;
        /// Queries with the same key return identical results.
        std::string result_key;
        double latency_seconds = 0.01;
        bool explain_fails = false;
        bool execution_fails = false;
    };

    StubDatabase& define(std::string_view sql, Script script);
    StubDatabase& define_table(TableStats table);
    /// Cost for queries without a script.
    StubDatabase& set_default_cost(double cost);
    StubDatabase& set_offline(bool offline);
    StubDatabase& set_hint_capability(bool available);

    ExplainResult explain(const SqlQuery& q) override;
    std::vector<TimedRun> timed_execute(const SqlQuery& q, int warmups = 1, int runs = 3,
                                        Seconds cap = Seconds(300.0)) override;
    ResultSet fetch(const SqlQuery& q) override;
    StatsSnapshot snapshot_stats(const std::vector<std::string>& tables) override;
    std::string ddl_for(const std::vector<std::string>& tables) override;
    HintCapability probe_hint_capability() override;

    [[nodiscard]] std::size_t explain_calls() const noexcept { return explain_calls_; }
    [[nodiscard]] std::size_t execute_calls() const noexcept { return execute_calls_; }

private:
    std::map<std::string, Script> scripts_;
    std::map<std::string, TableStats> tables_;
    double default_cost_ = 100.0;
    bool offline_ = false;
    bool hint_capability_ = false;
    std::size_t explain_calls_ = 0;
    std::size_t execute_calls_ = 0;

    [[nodiscard]] std::optional<Script> lookup(const SqlQuery& q) const;
    void check_online() const;
};

}  // namespace quite::db
