#include <chrono>
#include <cmath>

#include <fmt/format.h>
#include <libpq-fe.h>
#include <spdlog/spdlog.h>

#include "quite/db.hpp"
#include "quite/sql.hpp"

namespace quite::db {

namespace {

constexpr const char* kQueryCanceled = "57014";

struct ResultDeleter {
    void operator()(PGresult* r) const noexcept { PQclear(r); }
};
using Result = std::unique_ptr<PGresult, ResultDeleter>;

bool numeric_oid(Oid oid) {
    switch (oid) {
        case 20:    // int8
        case 21:    // int2
        case 23:    // int4
        case 26:    // oid
        case 700:   // float4
        case 701:   // float8
        case 790:   // money
        case 1700:  // numeric
            return true;
        default:
            return false;
    }
}

std::string sqlstate_of(const PGresult* r) {
    const char* s = PQresultErrorField(r, PG_DIAG_SQLSTATE);
    return s ? s : "";
}

bool connection_class(std::string_view state) {
    return state.starts_with("08") || state == "57P01" || state == "57P02" || state == "57P03";
}

std::string trim_trailing_semicolon(std::string_view text) {
    std::string s(text);
    while (!s.empty() && (std::isspace(static_cast<unsigned char>(s.back())) || s.back() == ';')) s.pop_back();
    return s;
}

std::string quote_literal(std::string_view s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += '\'';
        out += c;
    }
    return out + "'";
}

/// Postgres array text `{a,b,"c d"}` to elements.
std::vector<std::string> parse_pg_array(std::string_view text) {
    std::vector<std::string> out;
    if (text.size() < 2 || text.front() != '{') return out;
    std::string cur;
    bool quoted = false;
    bool any = false;
    for (std::size_t i = 1; i + 1 < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '\\' && i + 2 < text.size()) cur += text[++i];
            else if (c == '"') quoted = false;
            else cur += c;
        } else if (c == '"') {
            quoted = true;
            any = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
            any = false;
        } else {
            cur += c;
            any = true;
        }
    }
    if (any || !cur.empty()) out.push_back(cur);
    return out;
}

}  // namespace

struct PgDatabase::Conn {
    PGconn* handle = nullptr;

    ~Conn() {
        if (handle) PQfinish(handle);
    }

    void ensure() {
        if (PQstatus(handle) == CONNECTION_OK) return;
        PQreset(handle);
        if (PQstatus(handle) != CONNECTION_OK) {
            throw ConnectionError(std::string("connection lost: ") + PQerrorMessage(handle), "08006");
        }
    }

    /// Runs `sql`; throws the error class matching the SQLSTATE.
    template <class Error = ExecutionError>
    Result run(const std::string& sql) {
        ensure();
        Result r(PQexec(handle, sql.c_str()));
        if (!r) throw ConnectionError(std::string("query dispatch failed: ") + PQerrorMessage(handle), "08006");
        const auto status = PQresultStatus(r.get());
        if (status == PGRES_COMMAND_OK || status == PGRES_TUPLES_OK || status == PGRES_EMPTY_QUERY) return r;
        std::string message = PQresultErrorMessage(r.get());
        while (!message.empty() && message.back() == '\n') message.pop_back();
        const std::string state = sqlstate_of(r.get());
        if (connection_class(state) || PQstatus(handle) != CONNECTION_OK) throw ConnectionError(message, state);
        throw Error(message, state);
    }
};

PgDatabase::PgDatabase(DbConfig config) : conn_(std::make_unique<Conn>()), config_(std::move(config)) {
    if (!(config_.statement_timeout.count() > 0)) throw std::invalid_argument("statement_timeout must be positive");
    conn_->handle = PQconnectdb(config_.conninfo().c_str());
    if (!conn_->handle || PQstatus(conn_->handle) != CONNECTION_OK) {
        std::string message = conn_->handle ? PQerrorMessage(conn_->handle) : "out of memory";
        while (!message.empty() && message.back() == '\n') message.pop_back();
        throw ConnectionError("cannot connect: " + message, "08001");
    }
    PQsetNoticeProcessor(conn_->handle, [](void*, const char*) {}, nullptr);
    set_timeout(config_.statement_timeout);
}

PgDatabase::~PgDatabase() = default;

void PgDatabase::set_timeout(Seconds timeout) {
    const auto ms = static_cast<long long>(std::ceil(timeout.count() * 1000.0));
    conn_->run(fmt::format("SET statement_timeout = {}", std::max(1LL, ms)));
}

void PgDatabase::execute(std::string_view sql) { conn_->run(std::string(sql)); }

ExplainResult PgDatabase::explain(const SqlQuery& q) {
    std::string body = trim_trailing_semicolon(q.text());
    std::string prefix;
    if (auto hint = sql::leading_hint_block(body)) {
        const auto pos = body.find(*hint);
        prefix = *hint + "\n";
        body = body.substr(pos + hint->size());
    }
    Result r = conn_->run<SyntaxRejected>(prefix + "EXPLAIN (FORMAT JSON) " + body);
    if (PQntuples(r.get()) < 1) throw ExecutionError("EXPLAIN returned no rows");
    std::string text;
    for (int i = 0; i < PQntuples(r.get()); ++i) text += PQgetvalue(r.get(), i, 0);
    PlanTree plan = parse_explain_json(std::string_view(text));
    CostEstimate cost = plan.cost();
    return {std::move(plan), cost};
}

std::vector<TimedRun> PgDatabase::timed_execute(const SqlQuery& q, int warmups, int runs, Seconds cap) {
    if (warmups < 0 || runs < 0) throw std::invalid_argument("run counts must be non-negative");
    if (!(cap.count() > 0)) throw std::invalid_argument("cap must be positive");
    if (cache_reset_hook_) cache_reset_hook_();
    conn_->run("DISCARD ALL");
    set_timeout(cap);
    const std::string text = q.text();

    auto one = [&]() -> TimedRun {
        const auto start = std::chrono::steady_clock::now();
        try {
            Result r = conn_->run(text);
            const Seconds elapsed = std::chrono::steady_clock::now() - start;
            return {elapsed.count(), false, static_cast<std::size_t>(PQntuples(r.get()))};
        } catch (const ExecutionError& e) {
            if (e.sqlstate() == kQueryCanceled) return {cap.count(), true, 0};
            throw;
        }
    };
    std::vector<TimedRun> out;
    try {
        for (int i = 0; i < warmups; ++i) one();
        for (int i = 0; i < runs; ++i) out.push_back(one());
    } catch (...) {
        set_timeout(config_.statement_timeout);
        throw;
    }
    set_timeout(config_.statement_timeout);
    return out;
}

ResultSet PgDatabase::fetch(const SqlQuery& q) {
    Result r = conn_->run(q.text());
    ResultSet rs;
    const int cols = PQnfields(r.get());
    const int rows = PQntuples(r.get());
    for (int c = 0; c < cols; ++c) {
        rs.columns.emplace_back(PQfname(r.get(), c));
        rs.numeric.push_back(numeric_oid(PQftype(r.get(), c)));
    }
    rs.rows.reserve(static_cast<std::size_t>(rows));
    for (int i = 0; i < rows; ++i) {
        std::vector<std::optional<std::string>> row;
        row.reserve(static_cast<std::size_t>(cols));
        for (int c = 0; c < cols; ++c) {
            if (PQgetisnull(r.get(), i, c)) row.emplace_back(std::nullopt);
            else row.emplace_back(std::string(PQgetvalue(r.get(), i, c), PQgetlength(r.get(), i, c)));
        }
        rs.rows.push_back(std::move(row));
    }
    return rs;
}

StatsSnapshot PgDatabase::snapshot_stats(const std::vector<std::string>& tables) {
    StatsSnapshot snap;
    for (const auto& name : tables) {
        const std::string lit = quote_literal(name);
        Result rel = conn_->run(fmt::format(
            "SELECT c.reltuples, c.relpages FROM pg_class c "
            "WHERE c.relname = {} AND c.relkind IN ('r','p','m','f') AND pg_table_is_visible(c.oid)",
            lit));
        if (PQntuples(rel.get()) == 0) throw UnknownTable("relation \"" + name + "\" does not exist", "42P01");
        TableStats t;
        t.name = name;
        t.row_count = std::max(0.0, std::strtod(PQgetvalue(rel.get(), 0, 0), nullptr));
        t.page_count = std::max(0.0, std::strtod(PQgetvalue(rel.get(), 0, 1), nullptr));

        Result cols = conn_->run(fmt::format(
            "SELECT attname, n_distinct, most_common_vals::text, most_common_freqs::text FROM pg_stats "
            "WHERE tablename = {} AND schemaname = ANY (current_schemas(false)) ORDER BY attname",
            lit));
        for (int i = 0; i < PQntuples(cols.get()); ++i) {
            ColumnStats c;
            c.name = PQgetvalue(cols.get(), i, 0);
            c.n_distinct = std::strtod(PQgetvalue(cols.get(), i, 1), nullptr);
            if (!PQgetisnull(cols.get(), i, 2)) c.most_common_values = parse_pg_array(PQgetvalue(cols.get(), i, 2));
            if (!PQgetisnull(cols.get(), i, 3)) {
                for (const auto& f : parse_pg_array(PQgetvalue(cols.get(), i, 3))) {
                    c.most_common_freqs.push_back(std::strtod(f.c_str(), nullptr));
                }
            }
            t.columns.push_back(std::move(c));
        }

        Result idx = conn_->run(fmt::format(
            "SELECT indexdef FROM pg_indexes WHERE tablename = {} AND schemaname = ANY (current_schemas(false)) "
            "ORDER BY indexname",
            lit));
        for (int i = 0; i < PQntuples(idx.get()); ++i) t.indexes.emplace_back(PQgetvalue(idx.get(), i, 0));
        snap.tables.push_back(std::move(t));
    }
    return snap;
}

std::string PgDatabase::ddl_for(const std::vector<std::string>& tables) {
    std::string out;
    for (const auto& name : tables) {
        Result cols = conn_->run(fmt::format(
            "SELECT a.attname, format_type(a.atttypid, a.atttypmod), a.attnotnull "
            "FROM pg_attribute a JOIN pg_class c ON c.oid = a.attrelid "
            "WHERE c.relname = {} AND pg_table_is_visible(c.oid) AND a.attnum > 0 AND NOT a.attisdropped "
            "ORDER BY a.attnum",
            quote_literal(name)));
        if (PQntuples(cols.get()) == 0) throw UnknownTable("relation \"" + name + "\" does not exist", "42P01");
        out += "CREATE TABLE " + name + " (\n";
        for (int i = 0; i < PQntuples(cols.get()); ++i) {
            out += fmt::format("  {} {}{}{}\n", PQgetvalue(cols.get(), i, 0), PQgetvalue(cols.get(), i, 1),
                               PQgetvalue(cols.get(), i, 2)[0] == 't' ? " NOT NULL" : "",
                               i + 1 < PQntuples(cols.get()) ? "," : "");
        }
        Result pk = conn_->run(fmt::format(
            "SELECT pg_get_constraintdef(con.oid) FROM pg_constraint con JOIN pg_class c ON c.oid = con.conrelid "
            "WHERE c.relname = {} AND pg_table_is_visible(c.oid) AND con.contype IN ('p','u','f') ORDER BY con.conname",
            quote_literal(name)));
        out += ");\n";
        for (int i = 0; i < PQntuples(pk.get()); ++i) {
            out += fmt::format("ALTER TABLE {} ADD {};\n", name, PQgetvalue(pk.get(), i, 0));
        }
    }
    return out;
}

HintCapability PgDatabase::probe_hint_capability() {
    try {
        conn_->run("LOAD 'pg_hint_plan'");
    } catch (const ExecutionError& e) {
        spdlog::warn("pg_hint_plan is not loadable: {}", e.what());
    }
    Result r = conn_->run("SELECT current_setting('pg_hint_plan.enable_hint', true)");
    const bool set = PQntuples(r.get()) == 1 && !PQgetisnull(r.get(), 0, 0);
    const std::string value = set ? PQgetvalue(r.get(), 0, 0) : "";
    if (value == "on") return {true, "pg_hint_plan loaded, enable_hint = on"};
    if (set) return {false, "pg_hint_plan loaded but enable_hint = " + value};
    return {false, "pg_hint_plan is not loaded on this server; hint blocks are parsed as plain comments"};
}

}  // namespace quite::db
