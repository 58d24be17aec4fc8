#include "doctest.h"

#include <random>
#include <set>

#include "quite/hints.hpp"
#include "quite/llm.hpp"
#include "quite/sql.hpp"
#include "test_support.hpp"

using namespace quite;
using namespace quite::hints;

namespace {

Hint hint(HintKind k, std::vector<std::string> tables, std::optional<std::int64_t> rows = std::nullopt) {
    return Hint{k, std::move(tables), rows, {}};
}

}  // namespace

TEST_CASE("hint validation") {
    CHECK_NOTHROW(hint(HintKind::no_hash_join, {"a", "b"}).validate());
    CHECK_THROWS_AS(hint(HintKind::no_hash_join, {"a"}).validate(), InvariantViolation);
    CHECK_THROWS_AS(hint(HintKind::rows, {"a", "b"}).validate(), InvariantViolation);
    CHECK_THROWS_AS(hint(HintKind::rows, {"a", "b"}, 0).validate(), InvariantViolation);
    CHECK_THROWS_AS(hint(HintKind::no_nest_loop, {"a", "b"}, 5).validate(), InvariantViolation);
    CHECK_THROWS_AS(hint(HintKind::no_materialize, {"a", "b"}).validate(), InvariantViolation);
    CHECK_THROWS_AS(hint(HintKind::no_merge_join, {"a", "a"}).validate(), InvariantViolation);
    CHECK_THROWS_AS(hint(HintKind::no_merge_join, {"a", "b;drop"}).validate(), InvariantViolation);
}

TEST_CASE("render and parse") {
    HintSet hs({hint(HintKind::no_nest_loop, {"s", "t"}), hint(HintKind::rows, {"s", "t"}, 100),
                hint(HintKind::no_materialize, {"agg"})});
    const auto block = render(hs);
    CHECK(block == "/*+\n  NoNestLoop(s t)\n  Rows(s t #100)\n  NO_MATERIALIZE(agg)\n*/");
    CHECK(parse(block) == hs);
    CHECK(parse("/*+ NoNestLoop( s   t )Rows(s t #100)\tNO_MATERIALIZE(agg) */") == hs);
    CHECK(render(HintSet{}).empty());
    CHECK_THROWS_AS((void)parse("/*+ Leading(a b) */"), std::invalid_argument);
    CHECK_THROWS_AS((void)parse("/* NoNestLoop(a b) */"), std::invalid_argument);
    CHECK_THROWS_AS((void)parse("/*+ NoNestLoop(a b) junk */"), std::invalid_argument);
}

TEST_CASE("consistency guard") {
    HintSet hs;
    hs.add(hint(HintKind::no_hash_join, {"a", "b"}));
    CHECK_THROWS_AS(hs.add(hint(HintKind::no_hash_join, {"b", "a"})), InvariantViolation);
    CHECK(hs.try_add(hint(HintKind::no_nest_loop, {"a", "b"})));
    CHECK_FALSE(hs.try_add(hint(HintKind::no_merge_join, {"b", "a"})));
    CHECK(hs.try_add(hint(HintKind::no_merge_join, {"a", "c"})));
    CHECK(hs.size() == 3);
}

TEST_CASE("random hint sets round-trip") {
    std::mt19937 rng(11);
    const std::vector<std::string> names{"sale", "prod", "ttime", "emp", "dept"};
    for (int round = 0; round < 300; ++round) {
        HintSet hs;
        for (int i = 0; i < 6; ++i) {
            const auto kind = static_cast<HintKind>(rng() % 5);
            std::vector<std::string> tables;
            const std::size_t n = kind == HintKind::no_materialize ? 1 : 2 + rng() % 2;
            auto pool = names;
            std::shuffle(pool.begin(), pool.end(), rng);
            tables.assign(pool.begin(), pool.begin() + static_cast<long>(n));
            std::optional<std::int64_t> rows;
            if (kind == HintKind::rows) rows = 1 + static_cast<std::int64_t>(rng() % 100000);
            (void)hs.try_add(hint(kind, tables, rows));
        }
        REQUIRE(parse(render(hs)) == hs);
    }
}

TEST_CASE("inject and apply") {
    const SqlQuery q("  SELECT 1");
    HintSet hs({hint(HintKind::no_hash_join, {"a", "b"})});
    const auto hinted = inject(q, hs);
    CHECK(hinted.text() == "/*+\n  NoHashJoin(a b)\n*/\nSELECT 1");
    CHECK_THROWS_AS((void)inject(hinted, hs), AlreadyHinted);
    CHECK(inject(q, HintSet{}) == q);

    const SqlQuery cte("WITH x AS (SELECT 1 AS v), y AS MATERIALIZED (SELECT 2 AS v) SELECT * FROM x, y");
    CHECK(inline_cte(cte, "x").text() ==
          "WITH x AS NOT MATERIALIZED (SELECT 1 AS v), y AS MATERIALIZED (SELECT 2 AS v) SELECT * FROM x, y");
    CHECK(inline_cte(cte, "y").text().find("y AS NOT MATERIALIZED (") != std::string::npos);
    CHECK_THROWS_AS((void)inline_cte(cte, "z"), std::invalid_argument);

    HintSet mixed({hint(HintKind::no_materialize, {"x"}), hint(HintKind::no_nest_loop, {"x", "y"})});
    const auto compat = apply(cte, mixed, true);
    CHECK(compat.text().rfind("/*+\n  NoNestLoop(x y)\n*/\nWITH x AS NOT MATERIALIZED", 0) == 0);
    const auto native = apply(cte, mixed, false);
    CHECK(native.text().find("NO_MATERIALIZE(x)") != std::string::npos);
    CHECK(sql::grammar_error(compat.text()) == std::nullopt);
}

TEST_CASE("hint base") {
    const auto& base = hint_base();
    REQUIRE(base.size() == 5);
    CHECK(base[0].kind == HintKind::no_hash_join);
    CHECK(base[0].grammar.find("NoHashJoin") != std::string::npos);
    CHECK(selection_prompt().find("NO_MATERIALIZE") != std::string::npos);
}

TEST_CASE("heuristic plan analysis") {
    const SqlQuery q(
        "WITH small AS (SELECT id FROM prod WHERE id < 10) "
        "SELECT s.id FROM sale s JOIN small ON small.id = s.prod_id");
    db::PlanTree plan = db::parse_explain_json(std::string_view(R"([{"Plan": {
        "Node Type": "Nested Loop", "Join Type": "Inner", "Startup Cost": 0, "Total Cost": 50000,
        "Plan Rows": 1, "Plan Width": 4,
        "Plans": [
          {"Node Type": "Seq Scan", "Relation Name": "sale", "Alias": "s", "Startup Cost": 0, "Total Cost": 1000,
           "Plan Rows": 100000, "Plan Width": 8, "Parent Relationship": "Outer"},
          {"Node Type": "Index Scan", "Relation Name": "prod", "Alias": "prod", "Startup Cost": 0, "Total Cost": 10,
           "Plan Rows": 20000, "Plan Width": 4, "Parent Relationship": "Inner"}
        ]}}])"));
    const auto out = analyze_plan(q, plan, {}, nullptr);
    bool rows = false, nest = false, mat = false;
    for (const auto& s : out) {
        if (s.hint.kind == HintKind::rows) {
            rows = true;
            CHECK(s.hint.row_value == 100000);
        }
        nest |= s.hint.kind == HintKind::no_nest_loop;
        if (s.hint.kind == HintKind::no_materialize) {
            mat = true;
            CHECK(s.hint.tables == std::vector<std::string>{"small"});
        }
    }
    CHECK(rows);
    CHECK(nest);
    CHECK(mat);
}

TEST_CASE("LLM plan analysis reads item lines") {
    const SqlQuery q("SELECT s.id FROM sale s JOIN prod p ON p.id = s.prod_id");
    db::PlanTree plan = db::parse_explain_json(std::string_view(R"([{"Plan": {
        "Node Type": "Hash Join", "Join Type": "Inner", "Startup Cost": 0, "Total Cost": 500,
        "Plan Rows": 3, "Plan Width": 4,
        "Plans": [
          {"Node Type": "Seq Scan", "Relation Name": "sale", "Alias": "s", "Startup Cost": 0, "Total Cost": 100,
           "Plan Rows": 1000, "Plan Width": 8},
          {"Node Type": "Seq Scan", "Relation Name": "prod", "Alias": "p", "Startup Cost": 0, "Total Cost": 10,
           "Plan Rows": 100, "Plan Width": 4}
        ]}}])"));
    auto mock = std::make_shared<llm::ScriptedMock>();
    mock->when_contains("cardinality and join-method problems",
                        "R1: UNREASONABLE 900 | estimate far too low\nJ1: UNSUITABLE NoHashJoin | hash table spills\nR2: REASONABLE\n");
    const llm::Binding b("hints", mock, {});
    const auto out = analyze_plan(q, plan, {}, &b);
    REQUIRE(out.size() == 2);
    CHECK(out[0].hint.kind == HintKind::rows);
    CHECK(out[0].hint.row_value == 900);
    CHECK(out[1].hint.kind == HintKind::no_hash_join);
    CHECK(std::set<std::string>(out[1].hint.tables.begin(), out[1].hint.tables.end()) == std::set<std::string>{"p", "s"});
}

TEST_CASE("selection drops cost-raising hints") {
    db::StubDatabase stub;
    const SqlQuery q("SELECT a FROM t");
    stub.define(q.text(), {100.0, "r"});
    stub.define("/*+\n  NoHashJoin(t u)\n*/\nSELECT a FROM t", {90.0, "r"});
    stub.define("/*+\n  NoNestLoop(t u)\n*/\nSELECT a FROM t", {150.0, "r"});
    stub.define("/*+\n  NoHashJoin(t u)\n  NoNestLoop(t u)\n*/\nSELECT a FROM t", {150.0, "r"});
    const std::vector<Suggestion> cands{{"x", hint(HintKind::no_hash_join, {"t", "u"})},
                                        {"y", hint(HintKind::no_nest_loop, {"t", "u"})}};
    const auto sel = select_hints(cands, q, stub);
    REQUIRE(sel.hints.size() == 1);
    CHECK(sel.hints.hints()[0].kind == HintKind::no_hash_join);
    REQUIRE(sel.dropped.size() == 1);
    CHECK(sel.hinted.text() == "/*+\n  NoHashJoin(t u)\n*/\nSELECT a FROM t");
}

TEST_CASE("selection keeps the original when the oracle disagrees") {
    db::StubDatabase stub;
    const SqlQuery q("SELECT a FROM t");
    stub.define(q.text(), {100.0, "r"});
    stub.define("/*+\n  NoHashJoin(t u)\n*/\nSELECT a FROM t", {90.0, "other"});
    const auto sel = select_hints({{"x", hint(HintKind::no_hash_join, {"t", "u"})}}, q, stub);
    CHECK(sel.hinted == q);
    CHECK(sel.hints.empty());
}

TEST_CASE("hinted fixtures return the original rows" * doctest::skip(!std::getenv("QUITE_TEST_DSN"))) {
    auto pg = test::fixture_db();
    REQUIRE(pg);
    const SqlQuery q(
        "WITH small AS (SELECT id FROM prod WHERE id < 10) "
        "SELECT s.id FROM sale s JOIN small ON small.id = s.prod_id ORDER BY s.id");
    HintSet hs({hint(HintKind::no_hash_join, {"s", "small"}), hint(HintKind::no_materialize, {"small"}),
                hint(HintKind::rows, {"s", "small"}, 1000)});
    const auto hinted = apply(q, hs, true);
    CHECK_NOTHROW((void)pg->explain(hinted));
    CHECK(pg->results_equal(q, hinted).equal);
}
