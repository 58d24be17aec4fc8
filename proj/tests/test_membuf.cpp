#include "doctest.h"

#include <random>

#include "quite/membuf.hpp"

using namespace quite::membuf;

TEST_CASE("slices render in fixed order with headers") {
    MemoryBuffer b;
    b.put(SliceKind::decision_report, "VERDICT FALSE", 1);
    b.put(SliceKind::query_info, "SELECT 1", 0);
    CHECK(b.render_all() == "[query_info]\nSELECT 1\n\n[decision_report]\nVERDICT FALSE");
}

TEST_CASE("put replaces the previous slice of that kind") {
    MemoryBuffer b;
    b.put(SliceKind::plan_summary, "old", 0);
    b.put(SliceKind::plan_summary, "new", 2);
    CHECK(b.size() == 1);
    REQUIRE(b.get(SliceKind::plan_summary));
    CHECK(b.get(SliceKind::plan_summary)->content == "new");
    CHECK(b.get(SliceKind::plan_summary)->updated_at_iteration == 2);
}

TEST_CASE("erase") {
    MemoryBuffer b;
    b.put(SliceKind::retrieved_knowledge, "k", 0);
    CHECK(b.erase(SliceKind::retrieved_knowledge));
    CHECK_FALSE(b.erase(SliceKind::retrieved_knowledge));
    CHECK(b.empty());
    CHECK(b.render_all().empty());
}

TEST_CASE("role visibility") {
    MemoryBuffer b;
    for (auto k : kSliceOrder) b.put(k, std::string(to_string(k)) + " body", 0);
    const auto assistant = b.render(AgentRole::assistant);
    CHECK(assistant == "[query_info]\nquery_info body");
    const auto rewrite = b.render(AgentRole::rewrite);
    CHECK(rewrite.find("[decision_report]") == std::string::npos);
    CHECK(rewrite.find("[retrieved_knowledge]") != std::string::npos);
    const auto decision = b.render(AgentRole::decision);
    CHECK(decision.find("[plan_summary]") == std::string::npos);
    CHECK(decision.find("[decision_report]") != std::string::npos);
    CHECK(b.render(AgentRole::reasoning) == b.render_all());
}

TEST_CASE("oversized content keeps its tail behind the marker") {
    MemoryBuffer b(100);
    std::string long_text;
    for (int i = 0; i < 100; ++i) long_text += std::to_string(i % 10);
    long_text += "END";
    b.put(SliceKind::query_info, long_text, 0);
    const auto& c = b.get(SliceKind::query_info)->content;
    CHECK(c.rfind(std::string(kTruncationMarker), 0) == 0);
    CHECK(c.substr(c.size() - 3) == "END");
    CHECK(std::string("[query_info]\n").size() + c.size() + 2 <= 100);
}

TEST_CASE("render stays within its bound under random updates") {
    std::mt19937 rng(7);
    std::uniform_int_distribution<int> kind(0, 4), len(0, 9000);
    MemoryBuffer b(500);
    for (int step = 0; step < 2000; ++step) {
        const auto k = kSliceOrder[static_cast<std::size_t>(kind(rng))];
        b.put(k, std::string(static_cast<std::size_t>(len(rng)), 'x'), step);
        for (auto role : {AgentRole::reasoning, AgentRole::rewrite, AgentRole::assistant, AgentRole::decision})
            REQUIRE(b.render(role).size() <= b.render_bound());
    }
    CHECK(b.render_bound() == 5 * 500);
}
