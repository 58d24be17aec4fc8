#include "doctest.h"

#include "fsm_rig.hpp"

using namespace quite;
using namespace quite::fsm;
using quite::test::FsmRig;

namespace {

using S = FsmState;
using C = Cause;

std::vector<std::tuple<S, S, int, C>> shape(const FsmTrace& t) {
    std::vector<std::tuple<S, S, int, C>> out;
    for (const auto& e : t.entries) out.emplace_back(e.from, e.to, e.iteration, e.cause);
    return out;
}

}  // namespace

TEST_CASE("transition table") {
    CHECK(legal_transitions().size() == 6);
    CHECK(is_legal(S::reasoning, S::verification));
    CHECK(is_legal(S::decision, S::reasoning));
    CHECK_FALSE(is_legal(S::termination, S::reasoning));
    CHECK_FALSE(is_legal(S::reasoning, S::decision));
    CHECK(deadlock_free());
}

TEST_CASE("accept on the first pass") {
    FsmRig rig;
    rig.reasoning(test::chain_of(rig.good.text())).enhance("Nothing to add.").equivalence("VERDICT: EQUIVALENT").judge(true);
    const auto r = rig.run();
    CHECK(shape(r.trace) == std::vector<std::tuple<S, S, int, C>>{{S::reasoning, S::verification, 0, C::proposed},
                                                                   {S::verification, S::decision, 0, C::verified},
                                                                   {S::decision, S::termination, 0, C::accepted}});
    CHECK(r.trace.well_formed());
    CHECK(r.outcome().final_sql == rig.good);
    CHECK(r.outcome().equivalence_verdict == OutcomeVerdict::verified_llm);
    CHECK(r.outcome().report.verdict);
    CHECK(r.session.reasoning_entries == 1);
    CHECK(r.session.current.sql == rig.good);
}

TEST_CASE("early stop still verifies the candidate") {
    FsmRig rig;
    rig.reasoning(test::chain_of(rig.good.text())).enhance(test::fenced(rig.good.text())).equivalence("VERDICT: EQUIVALENT");
    const auto r = rig.run();
    CHECK(shape(r.trace) == std::vector<std::tuple<S, S, int, C>>{{S::reasoning, S::termination, 0, C::early_stop}});
    CHECK(r.outcome().final_sql == rig.good);

    FsmRig liar;
    liar.reasoning(test::chain_of(liar.wrong.text())).enhance(test::fenced(liar.wrong.text())).equivalence("VERDICT: EQUIVALENT");
    const auto bad = liar.run();
    CHECK(bad.outcome().final_sql == liar.q0);
    CHECK(bad.outcome().equivalence_verdict == OutcomeVerdict::fallback_original);
}

TEST_CASE("repair abort returns to Reasoning and consumes an iteration") {
    FsmRig rig;
    rig.reasoning(test::chain_of(rig.good.text()))
        .enhance("A tighter form:\n" + test::fenced(rig.broken.text()), 1)
        .enhance("Nothing to add.")
        .repair(test::fenced(rig.broken.text()))
        .equivalence("VERDICT: EQUIVALENT")
        .judge(true);
    const auto r = rig.run();
    CHECK(shape(r.trace) == std::vector<std::tuple<S, S, int, C>>{{S::reasoning, S::verification, 0, C::proposed},
                                                                   {S::verification, S::reasoning, 0, C::repair_abort},
                                                                   {S::reasoning, S::verification, 1, C::proposed},
                                                                   {S::verification, S::decision, 1, C::verified},
                                                                   {S::decision, S::termination, 1, C::accepted}});
    CHECK(r.session.iteration == 1);
    CHECK(r.outcome().final_sql == rig.good);
}

TEST_CASE("reject then accept") {
    FsmRig rig;
    rig.reasoning(test::chain_of(rig.good.text()), 1)
        .reasoning(test::chain_of(rig.better.text()))
        .enhance("Nothing to add.")
        .equivalence("VERDICT: EQUIVALENT")
        .judge(false, 1)
        .judge(true);
    const auto r = rig.run();
    CHECK(shape(r.trace) == std::vector<std::tuple<S, S, int, C>>{{S::reasoning, S::verification, 0, C::proposed},
                                                                   {S::verification, S::decision, 0, C::verified},
                                                                   {S::decision, S::reasoning, 0, C::rejected},
                                                                   {S::reasoning, S::verification, 1, C::proposed},
                                                                   {S::verification, S::decision, 1, C::verified},
                                                                   {S::decision, S::termination, 1, C::accepted}});
    CHECK(r.session.reasoning_entries == 2);
    CHECK(r.trace.reasoning_entries() == 2);
    CHECK(r.session.iteration == 1);
    CHECK(r.session.advanced_knowledge == std::set<std::string>{"k1"});
    CHECK(r.outcome().final_sql == rig.better);
    // The second reasoning prompt carries the rejection context.
    const auto buffered = r.session.buffer.get(membuf::SliceKind::decision_report);
    REQUIRE(buffered);
    CHECK(buffered->content.find("VERDICT: FALSE") != std::string::npos);
}

TEST_CASE("budget exhaustion by rejection keeps the best verified candidate") {
    FsmRig rig;
    rig.reasoning(test::chain_of(rig.good.text()), 2)
        .reasoning(test::chain_of(rig.better.text()))
        .enhance("Nothing to add.")
        .equivalence("VERDICT: EQUIVALENT")
        .judge(false);
    const auto r = rig.run();
    CHECK(shape(r.trace) == std::vector<std::tuple<S, S, int, C>>{{S::reasoning, S::verification, 0, C::proposed},
                                                                   {S::verification, S::decision, 0, C::verified},
                                                                   {S::decision, S::reasoning, 0, C::rejected},
                                                                   {S::reasoning, S::verification, 1, C::proposed},
                                                                   {S::verification, S::decision, 1, C::verified},
                                                                   {S::decision, S::reasoning, 1, C::rejected},
                                                                   {S::reasoning, S::verification, 2, C::proposed},
                                                                   {S::verification, S::decision, 2, C::verified},
                                                                   {S::decision, S::termination, 2, C::budget_exhausted}});
    CHECK(r.session.reasoning_entries == 3);
    CHECK(r.session.iteration == 2);
    CHECK(r.outcome().final_sql == rig.better);
}

TEST_CASE("budget exhaustion through repeated verification failure returns the original") {
    FsmRig rig;
    rig.reasoning(test::chain_of(rig.wrong.text())).enhance("Nothing to add.").equivalence("VERDICT: EQUIVALENT");
    const auto r = rig.run();
    CHECK(shape(r.trace) ==
          std::vector<std::tuple<S, S, int, C>>{{S::reasoning, S::verification, 0, C::proposed},
                                                {S::verification, S::reasoning, 0, C::verification_fallback},
                                                {S::reasoning, S::verification, 1, C::proposed},
                                                {S::verification, S::reasoning, 1, C::verification_fallback},
                                                {S::reasoning, S::verification, 2, C::proposed},
                                                {S::verification, S::reasoning, 2, C::verification_fallback},
                                                {S::reasoning, S::termination, 2, C::budget_exhausted}});
    CHECK(r.trace.well_formed());
    CHECK(r.trace.reasoning_entries() == 3);
    CHECK(r.session.reasoning_entries == 3);
    CHECK(r.outcome().final_sql == rig.q0);
    CHECK(r.outcome().equivalence_verdict == OutcomeVerdict::fallback_original);
}

TEST_CASE("T_max bounds the loop for any budget") {
    for (int t_max = 0; t_max <= 4; ++t_max) {
        FsmRig rig;
        rig.reasoning(test::chain_of(rig.good.text())).enhance("Nothing to add.").equivalence("VERDICT: EQUIVALENT").judge(false);
        const auto r = rig.run(t_max);
        CHECK(r.trace.well_formed());
        CHECK(r.session.reasoning_entries == t_max + 1);
        CHECK(r.session.iteration == t_max);
    }
}

TEST_CASE("an empty chain ends the run with the original") {
    FsmRig rig;
    rig.reasoning("I cannot improve this query.");
    const auto r = rig.run();
    CHECK(shape(r.trace) == std::vector<std::tuple<S, S, int, C>>{{S::reasoning, S::termination, 0, C::empty_chain}});
    CHECK(r.outcome().final_sql == rig.q0);
    CHECK(rig.mock->requests_served() == 2);
}

TEST_CASE("provider failure marks the trace failed") {
    FsmRig rig;
    const auto r = rig.run();
    CHECK(r.trace.failed);
    CHECK(r.trace.failure.rfind("llm:", 0) == 0);
    CHECK(r.outcome().final_sql == rig.q0);
}

TEST_CASE("lost connection mid-run marks the trace failed") {
    // Forwards to the rig's stub until the budget of calls runs out.
    struct Flaky final : db::Database {
        db::StubDatabase& inner;
        int left;
        Flaky(db::StubDatabase& s, int n) : inner(s), left(n) {}
        void tick() {
            if (left-- <= 0) throw db::ConnectionError("server closed the connection unexpectedly");
        }
        db::ExplainResult explain(const SqlQuery& q) override { return tick(), inner.explain(q); }
        std::vector<db::TimedRun> timed_execute(const SqlQuery& q, int w, int r, db::Seconds c) override {
            return tick(), inner.timed_execute(q, w, r, c);
        }
        db::ResultSet fetch(const SqlQuery& q) override { return tick(), inner.fetch(q); }
        db::StatsSnapshot snapshot_stats(const std::vector<std::string>& t) override {
            return tick(), inner.snapshot_stats(t);
        }
        std::string ddl_for(const std::vector<std::string>& t) override { return tick(), inner.ddl_for(t); }
        db::HintCapability probe_hint_capability() override { return inner.probe_hint_capability(); }
    };

    FsmRig rig;
    rig.reasoning(test::chain_of(rig.good.text())).enhance("Nothing to add.").equivalence("VERDICT: EQUIVALENT").judge(true);
    Flaky flaky(rig.stub, 4);
    const corrector::Corrector corrector(&flaky, nullptr);
    const auto r = fsm::run(rig.q0, {AgentBindings::all(rig.llm), &corrector, &rig.corpus, &flaky});
    CHECK(r.trace.failed);
    CHECK(r.trace.failure.rfind("database:", 0) == 0);
    CHECK(r.outcome().final_sql == rig.q0);
    CHECK(r.outcome().equivalence_verdict == OutcomeVerdict::fallback_original);

    FsmRig offline;
    offline.stub.set_offline(true);
    CHECK_THROWS_AS((void)offline.run(), db::ConnectionError);
}

TEST_CASE("invalid input is a precondition violation") {
    FsmRig rig;
    CHECK_THROWS_AS((void)fsm::run(rig.broken, {AgentBindings::all(rig.llm), &rig.corrector, &rig.corpus, &rig.stub}),
                    PreconditionViolation);
    CHECK_THROWS_AS((void)fsm::run(rig.q0, {{}, &rig.corrector, &rig.corpus, &rig.stub}), PreconditionViolation);
}
