#include "doctest.h"

#include "quite/db.hpp"
#include "test_support.hpp"

using namespace quite;
using namespace quite::db;

#define REQUIRE_DB(var)                                             \
    auto var = test::fixture_db();                                  \
    if (!var) {                                                     \
        MESSAGE("QUITE_TEST_DSN unset; skipping database checks");  \
        return;                                                     \
    }

TEST_CASE("parse_explain_json extracts the root cost and tree") {
    const char* doc = R"json([{"Plan": {
        "Node Type": "Hash Join", "Join Type": "Inner", "Startup Cost": 10.5, "Total Cost": 123.45,
        "Plan Rows": 42, "Plan Width": 16, "Hash Cond": "(s.prod_id = p.id)",
        "Plans": [
          {"Node Type": "Seq Scan", "Parent Relationship": "Outer", "Relation Name": "sale", "Alias": "s",
           "Startup Cost": 0.0, "Total Cost": 80.0, "Plan Rows": 1000, "Plan Width": 8},
          {"Node Type": "Hash", "Parent Relationship": "Inner", "Startup Cost": 5.0, "Total Cost": 5.0,
           "Plan Rows": 100, "Plan Width": 8,
           "Plans": [{"Node Type": "Seq Scan", "Parent Relationship": "Outer", "Relation Name": "prod",
                      "Alias": "p", "Startup Cost": 0.0, "Total Cost": 4.0, "Plan Rows": 100, "Plan Width": 8}]}
        ]}}])json";
    PlanTree plan = parse_explain_json(std::string_view(doc));
    CHECK(plan.cost().total_cost == 123.45);
    CHECK(plan.cost().startup_cost == 10.5);
    CHECK(plan.root.kind == OperatorKind::join);
    CHECK(plan.root.condition == "(s.prod_id = p.id)");
    CHECK(plan.nodes().size() == 4);
    CHECK(plan.root.scanned_relations() == std::vector<std::string>{"s", "p"});
    CHECK(plan.summary().find("Hash Join (Inner)") == 0);

    CHECK_THROWS_AS((void)parse_explain_json(std::string_view("[]")), std::invalid_argument);
    CHECK_THROWS_AS((void)parse_explain_json(std::string_view("not json")), std::invalid_argument);
    CHECK_THROWS_AS((void)parse_explain_json(std::string_view(
                        R"([{"Plan": {"Node Type": "Result", "Startup Cost": 0, "Total Cost": 1, "Plan Rows": -1}}])")),
                    std::invalid_argument);
}

TEST_CASE("compare_results") {
    ResultSet a{{"x", "y"}, {true, false}, {{"1", "a"}, {"2", std::nullopt}}};
    ResultSet b{{"x", "y"}, {true, false}, {{"2.0", std::nullopt}, {"1.000000000001", "a"}}};
    CHECK(compare_results(a, b, false).equal);
    CHECK_FALSE(compare_results(a, b, true).equal);

    ResultSet c = a;
    c.rows[0][0] = "1.0001";
    CHECK_FALSE(compare_results(a, c, false).equal);

    ResultSet dup{{"x"}, {true}, {{"1"}, {"1"}, {"2"}}};
    ResultSet nodup{{"x"}, {true}, {{"1"}, {"2"}, {"2"}}};
    CHECK_FALSE(compare_results(dup, nodup, false).equal);

    ResultSet other_type{{"x", "y"}, {false, false}, a.rows};
    CHECK_FALSE(compare_results(a, other_type, false).equal);
}

TEST_CASE("DbConfig conninfo") {
    DbConfig c;
    c.host = "localhost";
    c.database = "db";
    c.user = "u";
    c.password = "p'w";
    CHECK(c.conninfo() == "host='localhost' port='5432' dbname='db' user='u' password='p\\'w'");
    CHECK(DbConfig::from_dsn("postgresql://x/y").conninfo() == "postgresql://x/y");
}

TEST_CASE("StubDatabase scripts") {
    StubDatabase stub;
    stub.define("SELECT 1", {.cost = 7.0, .result_key = "one"});
    stub.define("SELECT 1 + 0", {.cost = 9.0, .result_key = "one"});
    CHECK(stub.explain(SqlQuery("SELECT   1;")).cost.total_cost == 7.0);
    CHECK(stub.explain(SqlQuery("/*+ Rows(a b #1) */ SELECT 1")).cost.total_cost == 7.0);
    CHECK(stub.explain(SqlQuery("SELECT 2")).cost.total_cost == 100.0);
    CHECK_THROWS_AS(stub.explain(SqlQuery("SELEC 1")), SyntaxRejected);
    CHECK(stub.results_equal(SqlQuery("SELECT 1"), SqlQuery("SELECT 1 + 0")).equal);
    CHECK_FALSE(stub.results_equal(SqlQuery("SELECT 1"), SqlQuery("SELECT 2")).equal);
    CHECK_THROWS_AS((void)stub.snapshot_stats({"nope"}), UnknownTable);
    stub.set_offline(true);
    CHECK_THROWS_AS(stub.explain(SqlQuery("SELECT 1")), ConnectionError);
}

TEST_CASE("PgDatabase rejects a bad DSN with ConnectionError") {
    CHECK_THROWS_AS(PgDatabase(DbConfig::from_dsn("host=/nonexistent-socket-dir port=1 connect_timeout=1")),
                    ConnectionError);
}

TEST_CASE("explain against the fixture") {
    REQUIRE_DB(db);
    auto one = db->explain(SqlQuery("SELECT 1"));
    CHECK(one.plan.root.node_type == "Result");
    CHECK(one.cost.total_cost >= 0.0);

    try {
        (void)db->explain(SqlQuery("SELEC 1"));
        FAIL("expected SyntaxRejected");
    } catch (const SyntaxRejected& e) {
        CHECK(std::string(e.what()).find("syntax error") != std::string::npos);
        CHECK(e.sqlstate() == "42601");
    }

    auto join = db->explain(SqlQuery("SELECT * FROM sale s JOIN prod p ON p.id = s.prod_id WHERE p.price < 10"));
    bool saw_join = false;
    for (const PlanNode* n : join.plan.nodes()) saw_join |= n->kind == OperatorKind::join;
    CHECK(saw_join);
    CHECK(join.cost.total_cost == join.plan.root.total_cost);

    auto hinted = db->explain(SqlQuery("/*+\n  Rows(s p #10)\n*/\nSELECT * FROM sale s JOIN prod p ON p.id = s.prod_id;"));
    CHECK(hinted.cost.total_cost > 0.0);
}

TEST_CASE("explain does not modify database state") {
    REQUIRE_DB(db);
    const SqlQuery checksum(
        "SELECT md5(string_agg(relname || ':' || reltuples || ':' || relpages, ',' ORDER BY relname)) "
        "FROM pg_class WHERE relkind = 'r' AND relnamespace = 'public'::regnamespace");
    const auto before = db->fetch(checksum).rows;
    const auto data_before = db->fetch(SqlQuery("SELECT count(*), sum(amount) FROM sale")).rows;
    for (int i = 0; i < 5; ++i) {
        (void)db->explain(SqlQuery("SELECT p.category, sum(s.amount) FROM sale s JOIN prod p ON p.id = s.prod_id "
                                   "GROUP BY p.category"));
    }
    (void)db->explain(SqlQuery("DELETE FROM sale WHERE id < 10"));
    CHECK(db->fetch(checksum).rows == before);
    CHECK(db->fetch(SqlQuery("SELECT count(*), sum(amount) FROM sale")).rows == data_before);
}

TEST_CASE("timed_execute contract") {
    REQUIRE_DB(db);
    auto single = db->timed_execute(SqlQuery("SELECT 1"), 0, 1);
    CHECK(single.size() == 1);
    CHECK(single[0].row_count == 1);

    auto sleepy = db->timed_execute(SqlQuery("SELECT pg_sleep(0.1)"), 1, 3);
    REQUIRE(sleepy.size() == 3);
    for (const auto& r : sleepy) {
        CHECK_FALSE(r.timed_out);
        CHECK(r.latency_seconds >= 0.1);
        CHECK(r.latency_seconds < 0.5);
    }

    auto capped = db->timed_execute(SqlQuery("SELECT pg_sleep(3)"), 0, 2, Seconds(1.0));
    REQUIRE(capped.size() == 2);
    for (const auto& r : capped) {
        CHECK(r.timed_out);
        CHECK(r.latency_seconds == 1.0);
    }
    // The session timeout is restored afterwards.
    auto after = db->fetch(SqlQuery("SHOW statement_timeout"));
    CHECK(after.rows[0][0] == "5min");

    CHECK_THROWS_AS(db->timed_execute(SqlQuery("SELECT 1/0"), 0, 1), ExecutionError);
}

TEST_CASE("results_equal on the seeded instance") {
    REQUIRE_DB(db);
    CHECK(db->results_equal(SqlQuery("SELECT 1"), SqlQuery("SELECT 1")).equal);
    CHECK_FALSE(db->results_equal(SqlQuery("SELECT 1"), SqlQuery("SELECT 2")).equal);
    CHECK(db->results_equal(SqlQuery("SELECT a FROM t WHERE a>1 AND a>1"), SqlQuery("SELECT a FROM t WHERE a>1")).equal);
    CHECK(db->results_equal(SqlQuery("SELECT a FROM t ORDER BY a"), SqlQuery("SELECT a FROM t")).equal);
    CHECK_FALSE(db->results_equal(SqlQuery("SELECT a FROM t ORDER BY a"), SqlQuery("SELECT a FROM t ORDER BY a DESC")).equal);
    CHECK(db->results_equal(SqlQuery("SELECT sum(amount) FROM sale"), SqlQuery("SELECT sum(amount)::float8 FROM sale")).equal);
    CHECK_FALSE(db->results_equal(SqlQuery("SELECT b FROM t"), SqlQuery("SELECT b FROM t WHERE b IS NOT NULL")).equal);

    auto failed = db->results_equal(SqlQuery("SELECT 1"), SqlQuery("SELECT nope FROM t"));
    CHECK_FALSE(failed.equal);
    CHECK(failed.reason.find("second query failed") == 0);

    SUBCASE("reflexive and symmetric") {
        const SqlQuery qs[] = {SqlQuery("SELECT a, count(*) FROM t GROUP BY a"), SqlQuery("SELECT DISTINCT a FROM t"),
                               SqlQuery("SELECT a, count(b) FROM t GROUP BY a")};
        for (const auto& x : qs) {
            CHECK(db->results_equal(x, x).equal);
            for (const auto& y : qs) CHECK(db->results_equal(x, y).equal == db->results_equal(y, x).equal);
        }
    }
}

TEST_CASE("snapshot_stats reads the catalog") {
    REQUIRE_DB(db);
    auto snap = db->snapshot_stats({"prod", "empty_table"});
    REQUIRE(snap.tables.size() == 2);
    CHECK(snap.find("prod")->row_count == doctest::Approx(1000).epsilon(0.05));
    CHECK(snap.find("prod")->page_count > 0);
    CHECK(snap.find("prod")->indexes.size() == 1);
    CHECK(snap.find("empty_table")->row_count == 0);
    CHECK(snap.find("empty_table")->page_count >= 0);
    bool saw_category = false;
    for (const auto& c : snap.find("prod")->columns) {
        if (c.name == "category") {
            saw_category = true;
            CHECK(c.n_distinct == 20);
            CHECK(c.most_common_values.size() == c.most_common_freqs.size());
        }
    }
    CHECK(saw_category);
    CHECK_THROWS_AS((void)db->snapshot_stats({"no_such_table"}), UnknownTable);
    CHECK(db->ddl_for({"emp"}).find("deptno integer NOT NULL") != std::string::npos);
}

TEST_CASE("hint capability probe reports a definite answer") {
    REQUIRE_DB(db);
    auto cap = db->probe_hint_capability();
    CHECK_FALSE(cap.detail.empty());
}
