#include "quite/corrector.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sys/wait.h>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "quite/prompts.hpp"
#include "quite/sql.hpp"

namespace quite::corrector {

namespace {

using Clock = std::chrono::steady_clock;

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'')
            out += "'\\''";
        else
            out += c;
    }
    return out + "'";
}

std::optional<SqlQuery> first_sql(std::string_view response) {
    auto found = llm::extract_sql(response);
    if (found.empty()) return std::nullopt;
    return found.front();
}

bool same_text(const SqlQuery& a, const SqlQuery& b) {
    return sql::normalize_whitespace(a.text()) == sql::normalize_whitespace(b.text());
}

}  // namespace

RepairFailed::RepairFailed(const std::string& message, std::vector<SqlQuery> attempts, std::string last_error)
    : std::runtime_error(message), attempts_(std::move(attempts)), last_error_(std::move(last_error)) {}

std::string_view to_string(EquivalenceStatus s) noexcept {
    switch (s) {
        case EquivalenceStatus::equivalent: return "equivalent";
        case EquivalenceStatus::nonequivalent: return "nonequivalent";
        case EquivalenceStatus::unknown: return "unknown";
    }
    return "unknown";
}

std::string_view to_string(VerdictStage s) noexcept {
    switch (s) {
        case VerdictStage::tool: return "tool";
        case VerdictStage::llm: return "llm";
        case VerdictStage::oracle: return "oracle";
    }
    return "tool";
}

EquivalenceVerdict AlwaysUnknown::check(const SqlQuery&, const SqlQuery&, const std::string&) {
    return {EquivalenceStatus::unknown, VerdictStage::tool, "no verifier configured"};
}

SubprocessVerifier::SubprocessVerifier(std::string command) : command_(std::move(command)) {
    if (command_.empty()) throw std::invalid_argument("verifier command is empty");
}

EquivalenceVerdict SubprocessVerifier::check(const SqlQuery& original, const SqlQuery& rewritten,
                                             const std::string& schema_ddl) {
    std::random_device rd;
    const auto dir = std::filesystem::temp_directory_path() / fmt::format("quite-verify-{:016x}",
                                                                          (std::uint64_t{rd()} << 32) | rd());
    std::filesystem::create_directories(dir);
    const auto write = [&](const char* name, const std::string& text) {
        std::ofstream(dir / name) << text << '\n';
        return (dir / name).string();
    };
    const std::string cmd = fmt::format("{} {} {} {}", command_, shell_quote(write("original.sql", original.text())),
                                        shell_quote(write("rewritten.sql", rewritten.text())),
                                        shell_quote(write("schema.sql", schema_ddl)));

    std::string output;
    int status = -1;
    if (FILE* pipe = ::popen(cmd.c_str(), "r")) {
        std::array<char, 4096> buf{};
        while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) output.append(buf.data(), n);
        status = ::pclose(pipe);
    }
    std::error_code ec;
    std::filesystem::remove_all(dir, ec);

    if (status == -1 || !WIFEXITED(status) || WEXITSTATUS(status) != 0)
        return {EquivalenceStatus::unknown, VerdictStage::tool, fmt::format("verifier exited abnormally ({})", status)};

    while (!output.empty() && (output.back() == '\n' || output.back() == '\r' || output.back() == ' '))
        output.pop_back();
    const auto nl = output.rfind('\n');
    const std::string last = nl == std::string::npos ? output : output.substr(nl + 1);
    if (last == "EQ") return {EquivalenceStatus::equivalent, VerdictStage::tool, name() + ": EQ"};
    if (last == "NEQ") return {EquivalenceStatus::nonequivalent, VerdictStage::tool, name() + ": NEQ"};
    return {EquivalenceStatus::unknown, VerdictStage::tool, name() + ": " + (last.empty() ? "no output" : last)};
}

Corrector::Corrector(db::Database* database, std::shared_ptr<ExternalVerifier> verifier, CorrectorConfig config)
    : db_(database), verifier_(std::move(verifier)), config_(config) {
    if (!verifier_) verifier_ = std::make_shared<AlwaysUnknown>();
    if (config_.k_max < 1) throw std::invalid_argument("k_max must be positive");
    if (config_.max_llm_iterations < 0) throw std::invalid_argument("max_llm_iterations must be non-negative");
}

SyntaxReport Corrector::check_syntax(const SqlQuery& q) const {
    SyntaxReport report;
    if (!db_) {
        if (auto err = sql::grammar_error(q.text())) {
            report.server_message = "syntax error: " + *err;
            return report;
        }
        report.ok = true;
        return report;
    }
    try {
        (void)db_->explain(q);
        report.ok = true;
    } catch (const db::ConnectionError&) {
        throw;
    } catch (const db::DbError& e) {
        report.server_message = e.what();
    }
    return report;
}

RepairResult Corrector::repair_syntax(const SqlQuery& q, const llm::Binding& llm) const {
    return repair_syntax(q, llm, config_.k_max);
}

RepairResult Corrector::repair_syntax(const SqlQuery& q, const llm::Binding& llm, int k_max) const {
    auto report = check_syntax(q);
    if (report.ok) throw PreconditionViolation("repair_syntax called on a query that already passes");
    if (k_max < 1) throw std::invalid_argument("k_max must be positive");

    std::vector<SqlQuery> attempts;
    SqlQuery current = q;
    std::string error = report.server_message.value_or("unknown error");
    for (int attempt = 1; attempt <= k_max; ++attempt) {
        std::string response;
        try {
            response = llm.ask("", prompts::fill("syntax_repair", {{"query", current.text()}, {"error", error}}));
        } catch (const llm::TransportError& e) {
            error = e.what();
            continue;
        } catch (const llm::BudgetExceeded& e) {
            error = e.what();
            continue;
        }
        auto variant = first_sql(response);
        if (!variant) {
            spdlog::debug("repair attempt {} produced no SQL", attempt);
            continue;
        }
        attempts.push_back(*variant);
        auto r = check_syntax(*variant);
        if (r.ok) return {*variant, attempt};
        current = *variant;
        error = r.server_message.value_or("unknown error");
    }
    RepairFailed failed(fmt::format("no syntactically valid variant after {} attempts", k_max), std::move(attempts),
                        error);
    failed.attempts_used_ = k_max;
    throw failed;
}

std::string Corrector::schema_for(const SqlQuery& a, const SqlQuery& b) const {
    if (!db_) return "(schema unavailable)";
    std::set<std::string> tables;
    for (const auto* q : {&a, &b}) {
        try {
            for (auto& t : sql::analyze(q->text()).base_tables()) tables.insert(t);
        } catch (const sql::SyntaxError&) {
        }
    }
    if (tables.empty()) return "(no tables)";
    try {
        return db_->ddl_for({tables.begin(), tables.end()});
    } catch (const db::ConnectionError&) {
        throw;
    } catch (const db::DbError& e) {
        return fmt::format("(schema unavailable: {})", e.what());
    }
}

VerifyResult Corrector::verify_equivalence(const SqlQuery& original, const SqlQuery& rewritten,
                                           const llm::Binding* llm) const {
    const std::string schema = schema_for(original, rewritten);

    VerifyResult fallback{original, {EquivalenceStatus::unknown, VerdictStage::llm, "budget exhausted"},
                          OutcomeVerdict::fallback_original, 0};

    auto tool = verifier_->check(original, rewritten, schema);
    if (tool.status == EquivalenceStatus::equivalent)
        return {rewritten, std::move(tool), OutcomeVerdict::verified_tool, 0};
    if (same_text(original, rewritten))
        return {original, {EquivalenceStatus::equivalent, VerdictStage::tool, "identical to the original"},
                OutcomeVerdict::fallback_original, 0};
    if (!llm) {
        fallback.verdict.evidence = "no LLM for the second stage; " + tool.evidence;
        return fallback;
    }

    const auto deadline = Clock::now() + std::chrono::duration_cast<Clock::duration>(config_.budget);
    SqlQuery current = rewritten;
    std::string feedback;
    if (tool.status == EquivalenceStatus::nonequivalent) feedback = "\nA verifier reports: " + tool.evidence + "\n";

    for (int i = 0; i < config_.max_llm_iterations && Clock::now() < deadline; ++i) {
        ++fallback.llm_iterations;
        std::string response;
        try {
            response = llm->ask("", prompts::fill("equivalence", {{"schema", schema},
                                                                  {"original", original.text()},
                                                                  {"rewritten", current.text()},
                                                                  {"feedback", feedback}}));
        } catch (const llm::TransportError& e) {
            fallback.verdict.evidence = fmt::format("LLM failed: {}", e.what());
            return fallback;
        } catch (const llm::BudgetExceeded& e) {
            fallback.verdict.evidence = fmt::format("LLM failed: {}", e.what());
            return fallback;
        }

        const auto verdict = sql::to_upper(llm::tagged_line(response, "VERDICT").value_or(""));
        auto proposed = first_sql(response);
        const bool claims_equal = verdict.rfind("EQUIVALENT", 0) == 0;

        if (!claims_equal) {
            if (!proposed) {
                feedback = "\nYour previous answer contained no corrected query.\n";
                continue;
            }
            auto syntax = check_syntax(*proposed);
            if (!syntax.ok) {
                feedback = fmt::format("\nThe corrected query you proposed is rejected: {}\n",
                                       syntax.server_message.value_or(""));
                continue;
            }
            current = *proposed;
            feedback.clear();
            continue;
        }

        // An equivalence claim may come with a final form of the query.
        SqlQuery claimed = current;
        if (proposed && !same_text(*proposed, current)) {
            if (check_syntax(*proposed).ok) claimed = *proposed;
        }

        if (config_.oracle_gate && db_) {
            auto eq = db_->results_equal(original, claimed);
            if (!eq) {
                spdlog::info("execution oracle rejected an equivalence claim: {}", eq.reason);
                fallback.verdict = {EquivalenceStatus::nonequivalent, VerdictStage::oracle, eq.reason};
                feedback = fmt::format("\nExecuting both queries on a test instance gives different results ({}). "
                                       "The rewritten query is not equivalent.\n",
                                       eq.reason);
                current = claimed;
                continue;
            }
            return {claimed,
                    {EquivalenceStatus::equivalent, VerdictStage::llm,
                     fmt::format("LLM verdict after {} round(s), confirmed by execution", i + 1)},
                    OutcomeVerdict::verified_llm,
                    fallback.llm_iterations};
        }
        return {claimed,
                {EquivalenceStatus::equivalent, VerdictStage::llm, fmt::format("LLM verdict after {} round(s)", i + 1)},
                OutcomeVerdict::verified_llm,
                fallback.llm_iterations};
    }
    if (fallback.verdict.stage != VerdictStage::oracle)
        fallback.verdict.evidence = fmt::format("no equivalence established within {} round(s)", fallback.llm_iterations);
    return fallback;
}

}  // namespace quite::corrector
