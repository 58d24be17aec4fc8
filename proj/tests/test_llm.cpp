#include "doctest.h"

#include "quite/llm.hpp"

using namespace quite;
using namespace quite::llm;

namespace {

std::vector<ChatMessage> user(std::string text) { return {ChatMessage(Role::user, std::move(text))}; }

}  // namespace

TEST_CASE("ChatMessage requires content") { CHECK_THROWS(ChatMessage(Role::user, "")); }

TEST_CASE("ScriptedMock resolution order") {
    ProviderConfig cfg;
    SUBCASE("positional") {
        ScriptedMock m;
        m.at_position(0, "OK");
        CHECK(m.complete(user("anything"), cfg) == "OK");
        CHECK_THROWS_AS(m.complete(user("again"), cfg), BudgetExceeded);
    }
    SUBCASE("substring") {
        ScriptedMock m;
        m.when_contains("EXPLAIN", "analysis");
        m.then("fallback");
        CHECK(m.complete(user("see EXPLAIN output"), cfg) == "analysis");
        CHECK(m.complete(user("other"), cfg) == "fallback");
        CHECK(m.complete(user("EXPLAIN again"), cfg) == "analysis");
        CHECK_THROWS_AS(m.complete(user("other"), cfg), BudgetExceeded);
    }
    SUBCASE("substring with limited uses") {
        ScriptedMock m;
        m.when_contains("x", "first", 1);
        m.when_contains("x", "second");
        CHECK(m.complete(user("x"), cfg) == "first");
        CHECK(m.complete(user("x"), cfg) == "second");
    }
    SUBCASE("empty request is rejected") {
        ScriptedMock m;
        CHECK_THROWS_AS(m.complete({}, cfg), std::invalid_argument);
    }
}

TEST_CASE("ScriptedMock is deterministic across replays") {
    auto script = nlohmann::json::parse(R"({"responses": [
        {"contains": "plan", "response": "P"},
        {"position": 2, "response": "TWO"},
        "a", "b", "c"]})");
    std::vector<std::string> requests{"hello", "plan?", "x", "y", "plan", "z"};
    auto replay = [&] {
        auto m = ScriptedMock::from_json(script);
        std::vector<std::string> out;
        for (auto& r : requests) {
            try {
                out.push_back(m.complete(user(r), {}));
            } catch (const BudgetExceeded&) {
                out.push_back("<exhausted>");
            }
        }
        return out;
    };
    auto first = replay();
    CHECK(first == replay());
    CHECK(first == std::vector<std::string>{"a", "P", "TWO", "b", "P", "c"});
}

TEST_CASE("HTTP wire format") {
    ProviderConfig cfg;
    cfg.model_name = "m";
    cfg.max_output_tokens = 64;
    auto body = HttpChatClient::request_body(user("hi"), cfg);
    CHECK(body["model"] == "m");
    CHECK(body["temperature"] == 0.0);
    CHECK(body["max_tokens"] == 64);
    CHECK(body["messages"][0]["role"] == "user");
    CHECK(body["messages"][0]["content"] == "hi");

    auto resp = nlohmann::json::parse(
        R"({"choices":[{"message":{"role":"assistant","content":"answer","reasoning_content":"why"}}]})");
    auto text = HttpChatClient::parse_response(resp);
    auto split = split_reasoning(text);
    CHECK(split.has_boundary);
    CHECK(split.thinking == "why");
    CHECK(split.answer == "answer");
    CHECK_THROWS_AS(HttpChatClient::parse_response(nlohmann::json::parse(R"({"choices":[]})")), TransportError);
}

TEST_CASE("HTTP client reports unreachable endpoints as TransportError") {
    HttpChatClient client;
    ProviderConfig cfg;
    cfg.endpoint = "http://127.0.0.1:9/v1/chat/completions";
    cfg.timeout = std::chrono::seconds(1);
    cfg.max_retries = 1;
    CHECK_THROWS_AS(client.complete(user("hi"), cfg), TransportError);
    cfg.endpoint = "not a url";
    CHECK_THROWS_AS(client.complete(user("hi"), cfg), TransportError);
}

TEST_CASE("split_reasoning without markers") {
    auto s = split_reasoning("just text");
    CHECK_FALSE(s.has_boundary);
    CHECK(s.answer == "just text");
}

TEST_CASE("extract_sql") {
    auto one = extract_sql("```sql\nSELECT 1;\n```");
    REQUIRE(one.size() == 1);
    CHECK(one[0].text() == "SELECT 1;");

    CHECK(extract_sql("no sql here").empty());

    auto two = extract_sql("first\n```sql\nSELECT 1;\n```\nthen\n```\nWITH c AS (SELECT 2) SELECT * FROM c;\n```");
    REQUIRE(two.size() == 2);
    CHECK(two[0].text() == "SELECT 1;");
    CHECK(two[1].text().rfind("WITH c", 0) == 0);

    auto scan = extract_sql("The answer is:\nSELECT a\nFROM t\nWHERE a > 1;\nDone.");
    REQUIRE(scan.size() == 1);
    CHECK(scan[0].text() == "SELECT a\nFROM t\nWHERE a > 1;");

    auto blank_stop = extract_sql("SELECT 1\n\nnot sql");
    REQUIRE(blank_stop.size() == 1);
    CHECK(blank_stop[0].text() == "SELECT 1");

    auto skip_python = extract_sql("```python\nprint(1)\n```\nSELECT 3;");
    REQUIRE(skip_python.size() == 1);
    CHECK(skip_python[0].text() == "SELECT 3;");

    SUBCASE("idempotent over its own output") {
        for (const auto& q : {one[0], two[0], two[1], scan[0], blank_stop[0]}) {
            auto again = extract_sql(q.text());
            REQUIRE(again.size() == 1);
            CHECK(again[0] == q);
        }
    }
}

TEST_CASE("tagged_line") {
    CHECK(tagged_line("blah\nVERDICT: TRUE\n", "verdict") == "TRUE");
    CHECK(tagged_line("**Verdict:** false", "VERDICT") == "false");
    CHECK(tagged_line("<think>VERDICT: TRUE</think>\nnothing", "VERDICT") == std::nullopt);
    CHECK(tagged_line("VERDICTS: x", "VERDICT") == std::nullopt);
    CHECK(tagged_line("  - CATEGORY: join_optimization", "category") == "join_optimization");
}
