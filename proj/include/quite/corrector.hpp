#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "quite/core.hpp"
#include "quite/db.hpp"
#include "quite/llm.hpp"

namespace quite::corrector {

struct SyntaxReport {
    bool ok = false;
    std::optional<std::string> server_message;
    int attempts_used = 0;
};

class RepairFailed : public std::runtime_error {
public:
    RepairFailed(const std::string& message, std::vector<SqlQuery> attempts, std::string last_error);

    [[nodiscard]] const std::vector<SqlQuery>& attempts() const noexcept { return attempts_; }
    [[nodiscard]] int attempts_used() const noexcept { return attempts_used_; }
    [[nodiscard]] const std::string& last_error() const noexcept { return last_error_; }

private:
    std::vector<SqlQuery> attempts_;
    int attempts_used_ = 0;
    std::string last_error_;

    friend class Corrector;
};

struct RepairResult {
    SqlQuery query;
    int attempts_used = 0;
};

enum class EquivalenceStatus { equivalent, nonequivalent, unknown };
enum class VerdictStage { tool, llm, oracle };

std::string_view to_string(EquivalenceStatus s) noexcept;
std::string_view to_string(VerdictStage s) noexcept;

struct EquivalenceVerdict {
    EquivalenceStatus status = EquivalenceStatus::unknown;
    VerdictStage stage = VerdictStage::tool;
    std::string evidence;
};

/// Pluggable prover. Must be sound whenever it answers equivalent or
/// nonequivalent.
class ExternalVerifier {
public:
    virtual ~ExternalVerifier() = default;
    [[nodiscard]] virtual std::string name() const = 0;
    virtual EquivalenceVerdict check(const SqlQuery& original, const SqlQuery& rewritten,
                                     const std::string& schema_ddl) = 0;
};

class AlwaysUnknown final : public ExternalVerifier {
public:
    [[nodiscard]] std::string name() const override { return "always-unknown"; }
    EquivalenceVerdict check(const SqlQuery&, const SqlQuery&, const std::string&) override;
};

/// Runs `command <original.sql> <rewritten.sql> <schema.sql>` and reads EQ, NEQ
/// or UNKNOWN from the last line of its standard output. Anything else,
/// including a non-zero exit, is unknown.
class SubprocessVerifier final : public ExternalVerifier {
public:
    explicit SubprocessVerifier(std::string command);
    [[nodiscard]] std::string name() const override { return command_; }
    EquivalenceVerdict check(const SqlQuery& original, const SqlQuery& rewritten,
                             const std::string& schema_ddl) override;

private:
    std::string command_;
};

struct CorrectorConfig {
    int k_max = 3;
    db::Seconds budget{60.0};
    int max_llm_iterations = 5;
    /// Run results_equal on every LLM equivalence claim before trusting it.
    bool oracle_gate = true;
};

struct VerifyResult {
    SqlQuery query;
    EquivalenceVerdict verdict;
    OutcomeVerdict outcome = OutcomeVerdict::fallback_original;
    int llm_iterations = 0;
};

/// Syntax repair and two-stage equivalence verification. A null database
/// means offline: syntax is checked by the local grammar and there is no
/// execution oracle.
class Corrector {
public:
    Corrector(db::Database* database, std::shared_ptr<ExternalVerifier> verifier, CorrectorConfig config = {});

    /// Throws db::ConnectionError; every other database failure is a report.
    [[nodiscard]] SyntaxReport check_syntax(const SqlQuery& q) const;

    /// Throws PreconditionViolation when `q` already passes, RepairFailed after
    /// k_max unsuccessful attempts.
    [[nodiscard]] RepairResult repair_syntax(const SqlQuery& q, const llm::Binding& llm) const;
    [[nodiscard]] RepairResult repair_syntax(const SqlQuery& q, const llm::Binding& llm, int k_max) const;

    /// Never returns a query the oracle (when enabled) has seen disagree with
    /// the original; on exhaustion it returns the original itself.
    [[nodiscard]] VerifyResult verify_equivalence(const SqlQuery& original, const SqlQuery& rewritten,
                                                  const llm::Binding* llm) const;

    [[nodiscard]] const CorrectorConfig& config() const noexcept { return config_; }
    [[nodiscard]] db::Database* database() const noexcept { return db_; }

private:
    db::Database* db_;
    std::shared_ptr<ExternalVerifier> verifier_;
    CorrectorConfig config_;

    [[nodiscard]] std::string schema_for(const SqlQuery& a, const SqlQuery& b) const;
};

}  // namespace quite::corrector
