#include "doctest.h"

#include <cstdlib>

#include "quite/config.hpp"

using namespace quite::config;

TEST_CASE("key value parsing") {
    const auto s = Settings::parse(R"(
# comment
llm.model = "gpt-x"   # trailing comment
Db.DSN = host=/tmp port=5432
hints.enabled = off
fsm.max_iterations=4
quoted = "a # not a comment"
)");
    CHECK(s.get("llm.model") == "gpt-x");
    CHECK(s.get("db.dsn") == "host=/tmp port=5432");
    CHECK_FALSE(s.get_bool("hints.enabled", true));
    CHECK(s.get_int("fsm.max_iterations", 2) == 4);
    CHECK(s.get("quoted") == "a # not a comment");
    CHECK(s.get_double("missing", 1.5) == 1.5);
}

TEST_CASE("malformed input") {
    CHECK_THROWS_AS((void)Settings::parse("just words"), ConfigError);
    CHECK_THROWS_AS((void)Settings::parse("= value"), ConfigError);
    CHECK_THROWS_AS((void)Settings::parse("x = 3.5").get_int("x", 0), ConfigError);
    CHECK_THROWS_AS((void)Settings::parse("x = maybe").get_bool("x", false), ConfigError);
    CHECK_THROWS_AS((void)Settings::load("/nonexistent/quite.conf"), ConfigError);
}

TEST_CASE("flag beats environment beats file") {
    auto s = Settings::parse("db.dsn = from-file");
    ::unsetenv("QUITE_TEST_CONFIG_VAR");
    CHECK(s.resolve("db.dsn", std::nullopt, "QUITE_TEST_CONFIG_VAR") == "from-file");
    ::setenv("QUITE_TEST_CONFIG_VAR", "from-env", 1);
    CHECK(s.resolve("db.dsn", std::nullopt, "QUITE_TEST_CONFIG_VAR") == "from-env");
    CHECK(s.resolve("db.dsn", std::string("from-flag"), "QUITE_TEST_CONFIG_VAR") == "from-flag");
    ::unsetenv("QUITE_TEST_CONFIG_VAR");
    CHECK_FALSE(Settings{}.resolve("db.dsn", std::nullopt, "QUITE_TEST_CONFIG_VAR"));
}
