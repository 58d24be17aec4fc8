#include "doctest.h"

#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "quite/corrector.hpp"
#include "test_support.hpp"

using namespace quite;
using namespace quite::corrector;

namespace {

constexpr const char* kRepair = "is rejected by the server";
constexpr const char* kEquiv = "VERDICT: NOT_EQUIVALENT";

std::string fenced(const std::string& sql) { return "```sql\n" + sql + "\n```\n"; }

struct Rig {
    db::StubDatabase stub;
    std::shared_ptr<llm::ScriptedMock> mock = std::make_shared<llm::ScriptedMock>();
    llm::Binding llm{"assistant", mock, {}};
    Corrector corrector{&stub, std::make_shared<AlwaysUnknown>()};
};

std::filesystem::path script_file(const std::string& body) {
    const auto p = std::filesystem::temp_directory_path() / ("quite-verifier-" + std::to_string(::getpid()) + ".sh");
    std::ofstream(p) << "#!/bin/sh\n" << body << "\n";
    std::filesystem::permissions(p, std::filesystem::perms::owner_all);
    return p;
}

}  // namespace

TEST_CASE("syntax check") {
    Rig r;
    CHECK(r.corrector.check_syntax(SqlQuery("SELECT a FROM t")).ok);
    const auto bad = r.corrector.check_syntax(SqlQuery("SELEC a FROM t"));
    CHECK_FALSE(bad.ok);
    REQUIRE(bad.server_message);
    CHECK(bad.server_message->find("ERROR") != std::string::npos);

    const Corrector offline(nullptr, nullptr);
    CHECK(offline.check_syntax(SqlQuery("SELECT 1")).ok);
    CHECK_FALSE(offline.check_syntax(SqlQuery("SELECT FROM WHERE")).ok);

    r.stub.set_offline(true);
    CHECK_THROWS_AS((void)r.corrector.check_syntax(SqlQuery("SELECT 1")), db::ConnectionError);
}

TEST_CASE("repair succeeds within the attempt budget") {
    Rig r;
    r.mock->when_contains(kRepair, fenced("SELEC a FROM t WHERE"), 1);
    r.mock->when_contains(kRepair, fenced("SELECT a FROM t"));
    const auto fixed = r.corrector.repair_syntax(SqlQuery("SELECT a FROM t WHERE"), r.llm);
    CHECK(fixed.query.text() == "SELECT a FROM t");
    CHECK(fixed.attempts_used == 2);
}

TEST_CASE("repair gives up after k_max attempts") {
    Rig r;
    r.mock->when_contains(kRepair, fenced("SELECT a FROM"));
    try {
        (void)r.corrector.repair_syntax(SqlQuery("SELECT a FROM t WHERE"), r.llm);
        FAIL("expected RepairFailed");
    } catch (const RepairFailed& e) {
        CHECK(e.attempts_used() == 3);
        CHECK(e.attempts().size() == 3);
        CHECK_FALSE(e.last_error().empty());
    }
    CHECK(r.mock->requests_served() == 3);
    CHECK_THROWS_AS((void)r.corrector.repair_syntax(SqlQuery("SELECT 1"), r.llm), PreconditionViolation);
}

TEST_CASE("equivalence claims pass through the execution oracle") {
    Rig r;
    r.stub.define("SELECT a FROM t WHERE a > 1 AND a > 0", {100, "rows"});
    r.stub.define("SELECT a FROM t WHERE a > 1", {50, "rows"});
    r.mock->when_contains(kEquiv, "Same rows.\nVERDICT: EQUIVALENT\n");
    const auto v = r.corrector.verify_equivalence(SqlQuery("SELECT a FROM t WHERE a > 1 AND a > 0"),
                                                  SqlQuery("SELECT a FROM t WHERE a > 1"), &r.llm);
    CHECK(v.outcome == OutcomeVerdict::verified_llm);
    CHECK(v.query.text() == "SELECT a FROM t WHERE a > 1");
    CHECK(v.verdict.status == EquivalenceStatus::equivalent);
}

TEST_CASE("a false equivalence claim never escapes") {
    Rig r;
    r.stub.define("SELECT a FROM t WHERE a > 1", {100, "rows"});
    r.stub.define("SELECT a FROM t WHERE a > 2", {50, "fewer rows"});
    r.mock->when_contains(kEquiv, "VERDICT: EQUIVALENT\n");
    const SqlQuery orig("SELECT a FROM t WHERE a > 1");
    const auto v = r.corrector.verify_equivalence(orig, SqlQuery("SELECT a FROM t WHERE a > 2"), &r.llm);
    CHECK(v.outcome == OutcomeVerdict::fallback_original);
    CHECK(v.query == orig);
    CHECK(v.llm_iterations == 5);
}

TEST_CASE("a corrected query from the LLM replaces the candidate") {
    Rig r;
    r.stub.define("SELECT a FROM t WHERE a > 1", {100, "rows"});
    r.stub.define("SELECT a FROM t WHERE a > 2", {50, "fewer rows"});
    r.stub.define("SELECT a FROM t WHERE a >= 2", {60, "rows"});
    r.mock->when_contains(kEquiv, "The bound is off by one.\nVERDICT: NOT_EQUIVALENT\n" + fenced("SELECT a FROM t WHERE a >= 2"), 1);
    r.mock->when_contains(kEquiv, "VERDICT: EQUIVALENT\n");
    const auto v = r.corrector.verify_equivalence(SqlQuery("SELECT a FROM t WHERE a > 1"),
                                                  SqlQuery("SELECT a FROM t WHERE a > 2"), &r.llm);
    CHECK(v.outcome == OutcomeVerdict::verified_llm);
    CHECK(v.query.text() == "SELECT a FROM t WHERE a >= 2");
    CHECK(v.llm_iterations == 2);
}

TEST_CASE("no LLM or a failing LLM falls back") {
    Rig r;
    const SqlQuery orig("SELECT a FROM t");
    CHECK(r.corrector.verify_equivalence(orig, SqlQuery("SELECT a FROM t WHERE 1 = 1"), nullptr).query == orig);
    const auto v = r.corrector.verify_equivalence(orig, SqlQuery("SELECT a FROM t WHERE 1 = 1"), &r.llm);
    CHECK(v.outcome == OutcomeVerdict::fallback_original);
    CHECK(v.verdict.evidence.find("LLM failed") != std::string::npos);
}

TEST_CASE("an external prover answering EQ short-circuits the LLM") {
    Rig r;
    const auto eq = script_file("echo checking; echo EQ");
    const Corrector c(&r.stub, std::make_shared<SubprocessVerifier>(eq.string()));
    const auto v = c.verify_equivalence(SqlQuery("SELECT a FROM t"), SqlQuery("SELECT t.a FROM t"), &r.llm);
    CHECK(v.outcome == OutcomeVerdict::verified_tool);
    CHECK(r.mock->requests_served() == 0);

    const auto broken = script_file("echo EQ; exit 3");
    SubprocessVerifier bad(broken.string());
    CHECK(bad.check(SqlQuery("SELECT 1"), SqlQuery("SELECT 1"), "").status == EquivalenceStatus::unknown);
    const auto args = script_file("test -f \"$1\" && test -f \"$2\" && test -f \"$3\" && grep -q \"it''s\" \"$1\" && echo NEQ");
    SubprocessVerifier quoting(args.string());
    CHECK(quoting.check(SqlQuery("SELECT 'it''s'"), SqlQuery("SELECT 1"), "").status == EquivalenceStatus::nonequivalent);
    std::filesystem::remove(eq);
}
