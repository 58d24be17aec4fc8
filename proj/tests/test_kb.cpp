#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <random>

#include <fmt/format.h>
#include <unistd.h>

#include "bm25_oracle.hpp"
#include "quite/kb.hpp"
#include "test_support.hpp"

using namespace quite;
using namespace quite::kb;

namespace {

KbEntry entry(std::string id, std::string question, Category cat = Category::other) {
    KbEntry e;
    e.id = std::move(id);
    e.question = {std::move(question), "SELECT 1"};
    e.answer = {"answer", "SELECT 1"};
    e.category = cat;
    return e;
}

std::shared_ptr<llm::ScriptedMock> mock() { return std::make_shared<llm::ScriptedMock>(); }

llm::Binding bind(std::shared_ptr<llm::ScriptedMock> m) { return llm::Binding("kb", std::move(m), {}); }

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("quite-test-" + std::to_string(::getpid()) + "-" + name);
}

}  // namespace

TEST_CASE("tokenize") {
    CHECK(tokenize("SELECT p.Name, SUM(s.amount_2) FROM sale") ==
          std::vector<std::string>{"select", "p", "name", "sum", "s", "amount_2", "from", "sale"});
    CHECK(tokenize("  --  ").empty());
}

TEST_CASE("BM25 hand-computed example") {
    // Question SQL is indexed too, so use a corpus with empty-signal SQL by
    // scoring the raw index directly.
    Bm25Index index({{"join", "join", "order"}, {"predicate", "pushdown"}, {"join", "hint"}});
    CHECK(index.average_length() == doctest::Approx(7.0 / 3.0));
    CHECK(index.doc_freq("join") == 2);
    auto s = index.score({"join"});
    CHECK(s[0] == doctest::Approx(0.5981864372218454).epsilon(1e-12));
    CHECK(s[1] == 0.0);
    CHECK(s[2] == doctest::Approx(0.4991762683023676).epsilon(1e-12));
    CHECK(bm25_idf(3, 3) > 0.0);
}

TEST_CASE("Corpus retrieve ranking, filters and clamping") {
    Corpus c({entry("d1", "join join order"), entry("d2", "predicate pushdown", Category::predicate_simplification),
              entry("d3", "join hint", Category::join_optimization)});
    auto r = c.retrieve("join", 10);
    REQUIRE(r.size() == 2);
    CHECK(r[0].entry.id == "d1");
    CHECK(r[1].entry.id == "d3");
    CHECK(r[0].score > r[1].score);

    auto all = c.retrieve("join", 10, std::nullopt, false);
    REQUIRE(all.size() == 3);
    CHECK(all[2].entry.id == "d2");

    CHECK(c.retrieve("nothing overlaps", 3).empty());
    CHECK(c.retrieve("nothing overlaps", 3, std::nullopt, false).size() == 3);
    CHECK(c.retrieve("join", 1).size() == 1);

    auto joins = c.retrieve("join", 3, Category::join_optimization);
    REQUIRE(joins.size() == 1);
    CHECK(joins[0].entry.id == "d3");

    CHECK(Corpus().retrieve("join", 3).empty());
}

TEST_CASE("Corpus ties break by id and mutation rebuilds the index") {
    Corpus c({entry("b", "same words"), entry("a", "same words")});
    auto r = c.retrieve("same", 2);
    REQUIRE(r.size() == 2);
    CHECK(r[0].entry.id == "a");
    CHECK(r[0].score == r[1].score);

    c.add(entry("c", "different thing"));
    CHECK(c.index().size() == 3);
    CHECK(c.retrieve("different", 3).front().entry.id == "c");
    CHECK(c.remove("c"));
    CHECK_FALSE(c.remove("c"));
    CHECK(c.retrieve("different", 3).empty());
    CHECK_THROWS_AS(c.add(entry("a", "dup")), std::invalid_argument);
    KbEntry bad = entry("z", "q");
    bad.answer.sql = " ";
    CHECK_THROWS_AS(c.add(bad), std::invalid_argument);
}

TEST_CASE("Corpus agrees with the brute-force oracle on random corpora") {
    std::mt19937 rng(7);
    for (int round = 0; round < 20; ++round) {
        std::uniform_int_distribution<int> ndocs(1, 40), len(0, 12), term(0, 15);
        std::vector<KbEntry> entries;
        std::vector<test::OracleDoc> oracle;
        const int n = ndocs(rng);
        for (int d = 0; d < n; ++d) {
            std::vector<std::string> terms;
            std::string text;
            for (int i = len(rng); i > 0; --i) {
                terms.push_back("t" + std::to_string(term(rng)));
                text += terms.back() + " ";
            }
            KbEntry e = entry(fmt::format("doc{:03}", d), text.empty() ? "-" : text);
            e.question.sql = ";";
            entries.push_back(e);
            oracle.push_back({e.id, terms});
        }
        Corpus corpus(entries);
        std::vector<std::string> q{"t" + std::to_string(term(rng)), "t" + std::to_string(term(rng))};
        const auto expected = test::oracle_rank(oracle, q, 5);
        const auto got = corpus.retrieve(q[0] + " " + q[1], 5);
        std::vector<std::string> ids;
        for (const auto& s : got) ids.push_back(s.entry.id);
        CHECK(ids == expected);
    }
}

TEST_CASE("Corpus JSONL round-trip") {
    KbEntry e = entry("x1", "eliminate redundant join", Category::join_optimization);
    e.quality = {5, 1, true};
    e.summary = "drop the join";
    e.provenance = Provenance::community;
    Corpus c({e, entry("x2", "fold constants")});
    const auto path = temp_path("corpus.jsonl");
    c.save_jsonl(path);
    Corpus back = Corpus::load_jsonl(path);
    CHECK(back.entries() == c.entries());
    auto r1 = c.retrieve("redundant join fold", 3, std::nullopt, false);
    auto r2 = back.retrieve("redundant join fold", 3, std::nullopt, false);
    REQUIRE(r1.size() == r2.size());
    for (std::size_t i = 0; i < r1.size(); ++i) {
        CHECK(r1[i].entry.id == r2[i].entry.id);
        CHECK(r1[i].score == r2[i].score);
    }
    std::ofstream(path) << R"({"schema_version": 99, "id": "x"})" << "\n";
    CHECK_THROWS_AS((void)Corpus::load_jsonl(path), std::invalid_argument);
    std::filesystem::remove(path);
}

TEST_CASE("ingest") {
    auto unit = [](std::string id, nlohmann::json answers) {
        return nlohmann::json{{"id", id}, {"question", {{"text", "why slow"}, {"sql", "SELECT 1"}}}, {"answers", answers}};
    };
    const nlohmann::json one_answer = nlohmann::json::array({{{"text", "use a CTE"}, {"sql", "SELECT 1"}, {"likes", 5}}});
    SUBCASE("one answer passes through") {
        auto r = ingest({unit("u1", one_answer)});
        REQUIRE(r.candidates.size() == 1);
        CHECK(r.candidates[0].answers.size() == 1);
        CHECK(r.candidates[0].answers[0].likes == 5);
    }
    SUBCASE("zero answers are skipped") {
        auto r = ingest({unit("u0", nlohmann::json::array())});
        CHECK(r.candidates.empty());
        REQUIRE(r.skipped.size() == 1);
        CHECK(r.skipped[0].unit_id == "u0");
    }
    SUBCASE("3 valid + 1 malformed") {
        auto r = ingest({unit("a", one_answer), unit("b", one_answer), nlohmann::json{{"id", "bad"}}, unit("c", one_answer)});
        CHECK(r.candidates.size() == 3);
        REQUIRE(r.skipped.size() == 1);
        CHECK(r.skipped[0].unit_id == "bad");
        CHECK(r.skipped[0].reason.find("malformed") == 0);
    }
}

TEST_CASE("filter") {
    auto cand = [](std::vector<RawAnswer> answers) {
        KbCandidate c;
        c.id = "c";
        c.question = {"q", "SELECT 1"};
        c.answers = std::move(answers);
        return c;
    };
    SUBCASE("more dislikes than likes is dropped") {
        auto r = filter({cand({{"a", "SELECT 1", 2, 5}})}, nullptr);
        CHECK(r.kept.empty());
        REQUIRE(r.dropped.size() == 1);
        CHECK_FALSE(r.dropped[0].reason.empty());
    }
    SUBCASE("zero votes is retained") {
        auto r = filter({cand({{"a", "SELECT 1", 0, 0}})}, nullptr);
        CHECK(r.kept.size() == 1);
    }
    SUBCASE("2-of-3 majority picks answer B") {
        auto m = mock();
        m->when_contains("consensus", "CONSENSUS: YES");
        m->when_contains("single best answer", "ANSWER: 2", 1);
        m->when_contains("single best answer", "ANSWER: 1", 1);
        m->when_contains("single best answer", "ANSWER: 2", 1);
        auto b = bind(m);
        auto r = filter({cand({{"A", "SELECT 1", 9, 0}, {"B", "SELECT 2", 1, 0}})}, &b);
        REQUIRE(r.kept.size() == 1);
        CHECK(r.kept[0].answer.text == "B");
        CHECK(r.kept[0].quality.consensus);
        CHECK(m->requests_served() == 4);
    }
    SUBCASE("provider failure drops only the affected unit") {
        auto m = mock();
        auto b = bind(m);
        auto r = filter({cand({{"A", "SELECT 1", 1, 0}, {"B", "SELECT 2", 1, 0}}), cand({{"C", "SELECT 3", 1, 0}})}, &b);
        CHECK(r.kept.size() == 1);
        CHECK(r.dropped.size() == 1);
    }
    SUBCASE("filter never grows the candidate set") {
        std::vector<KbCandidate> cs;
        for (int i = 0; i < 10; ++i) cs.push_back(cand({{"A", "SELECT 1", i % 3, i % 4}}));
        auto r = filter(cs, nullptr);
        CHECK(r.kept.size() + r.dropped.size() == cs.size());
    }
}

TEST_CASE("enhance") {
    HashingEmbedder embedder;
    KbEntry e = entry("e", "repeated subqueries over sale");
    SUBCASE("empty doc points keep the entry except the summary") {
        auto m = mock();
        m->then("Compute the aggregate once in a CTE.");
        auto out = enhance(e, DocPointIndex{}, embedder, bind(m));
        CHECK(out.summary == "Compute the aggregate once in a CTE.");
        CHECK(out.answer == e.answer);
    }
    SUBCASE("identical embeddings rank first") {
        DocPointIndex docs;
        docs.add("p1", "unrelated vacuum settings", embedder);
        docs.add("p2", "compute the aggregate once in a cte", embedder);
        auto top = docs.nearest(embedder.embed("compute the aggregate once in a cte"), 3);
        REQUIRE(top.size() == 2);
        CHECK(top[0].first->id == "p2");
        CHECK(top[0].second == doctest::Approx(1.0));
    }
    SUBCASE("rejected points add no appendix; confirmed ones do") {
        DocPointIndex docs;
        docs.add("p1", "CTEs are materialized once per query", embedder);
        docs.add("p2", "hash joins need memory", embedder);
        auto m = mock();
        m->when_contains("Summarise", "Use a CTE.");
        m->when_contains("Documentation points", "CONFIRMED: none", 1);
        m->when_contains("Documentation points", "CONFIRMED: 1");
        auto b = bind(m);
        auto rejected = enhance(e, docs, embedder, b);
        CHECK(rejected.answer.text == e.answer.text);
        auto confirmed = enhance(e, docs, embedder, b);
        CHECK(confirmed.answer.text.find("Supporting documentation:") != std::string::npos);
    }
    SUBCASE("embedder failure flags the entry") {
        struct Broken : Embedder {
            Eigen::VectorXd embed(std::string_view) const override { throw std::runtime_error("down"); }
        };
        DocPointIndex docs;
        docs.add("p1", "x", embedder);
        auto m = mock();
        m->then("summary");
        auto out = enhance(e, docs, Broken{}, bind(m));
        CHECK(out.enhancement_failed);
    }
}

TEST_CASE("classify") {
    KbEntry join = entry("j", "How to eliminate a redundant join to dept?");
    CHECK(classify_heuristic(join) == Category::join_optimization);
    KbEntry where = entry("w", "WHERE 1=1 removal");
    CHECK(classify_heuristic(where) == Category::predicate_simplification);
    KbEntry fold = entry("f", "Precompute price * 2 * 3");
    fold.question.sql = "SELECT price * 2 * 3 FROM prod";
    CHECK(classify_heuristic(fold) == Category::constant_folding);
    KbEntry none = entry("n", "misc");
    none.answer.text = "vacuum";
    CHECK(classify_heuristic(none) == Category::other);

    auto m = mock();
    m->then("CATEGORY: constant_folding");
    m->then("I am not sure");
    auto b = bind(m);
    CHECK(classify(none, &b) == Category::constant_folding);
    CHECK(classify(none, &b) == Category::other);
    CHECK(classify(join, nullptr) == Category::join_optimization);
}

TEST_CASE("shipped fixture corpus loads and classifies totally") {
    const auto corpus = Corpus::load_jsonl(test::source_path("data/kb/corpus.jsonl"));
    CHECK(corpus.size() >= 35);
    for (const auto& e : corpus.entries()) {
        CHECK(e.category == classify_heuristic(e));
    }
    for (auto cat : kAllCategories) {
        bool present = false;
        for (const auto& e : corpus.entries()) present |= e.category == cat;
        CHECK(present);
    }
}
